//! Combinatorial structure of rank-one data: the finest adapted partition,
//! membership of the exponents in the basis polytope, and the stationarity
//! certificate for a candidate optimizer.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use serde::Serialize;

use crate::datum::{RankOneDatum, HOMOGENEITY_TOL, RANK_RTOL};
use crate::error::{BlError, Result};
use crate::linalg;
use crate::lp::{rationalize, LinearProgram, LpOutcome, LpScalar, Relation};
use crate::minors::{minor_table, MinorOptions, MinorTable};

/// Partition of the factor indices with an orthonormal basis of each block
/// span `E_K`. Blocks are ordered by their smallest index.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedPartition {
    pub blocks: Vec<Vec<usize>>,
    /// `n × dim E_K` matrices with orthonormal columns.
    pub block_bases: Vec<DMatrix<f64>>,
    pub irreducible: Vec<bool>,
}

impl AdaptedPartition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// True when the datum is a single block.
    pub fn is_irreducible(&self) -> bool {
        self.blocks.len() == 1
    }

    pub fn block_of(&self, i: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&i))
    }

    pub fn dims(&self) -> Vec<usize> {
        self.block_bases.iter().map(|q| q.ncols()).collect()
    }

    /// `det([Q_1 … Q_s])²`. The global determinant infimum is this factor
    /// times the product of the block infima; it is 1 exactly when the block
    /// spans are mutually orthogonal.
    pub fn gram_factor(&self) -> f64 {
        let n = self.block_bases.first().map_or(0, |q| q.nrows());
        let mut stacked = DMatrix::zeros(n, n);
        let mut col = 0;
        for q in &self.block_bases {
            stacked.columns_mut(col, q.ncols()).copy_from(q);
            col += q.ncols();
        }
        let d = linalg::det(&stacked);
        d * d
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(size: usize) -> Self {
        Self {
            parent: (0..size).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so the result does not depend on call order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Finest adapted partition, computing the minor table with default options.
pub fn decompose(datum: &RankOneDatum) -> Result<AdaptedPartition> {
    let table = minor_table(datum, MinorOptions::default())?;
    decompose_with_table(datum, &table)
}

/// Classes of the transitive closure of `i ⋈ j` (some `(n−1)`-set `K`
/// completes both `v_i` and `v_j` to a basis).
///
/// Every admissible `I` and `i ∈ I` puts `i` in the bucket of `K = I \ {i}`;
/// all indices sharing a bucket are related.
pub fn decompose_with_table(datum: &RankOneDatum, table: &MinorTable) -> Result<AdaptedPartition> {
    let m = datum.m();
    let n = datum.n();
    let mut uf = UnionFind::new(m);
    let mut buckets: HashMap<Vec<usize>, usize> = HashMap::new();
    for (subset, _) in table.admissible() {
        for pos in 0..subset.len() {
            let i = subset[pos];
            let mut k = subset.to_vec();
            k.remove(pos);
            match buckets.get(&k) {
                Some(&first) => uf.union(first, i),
                None => {
                    buckets.insert(k, i);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group: HashMap<usize, usize> = HashMap::new();
    for i in 0..m {
        let r = uf.find(i);
        let g = *root_to_group.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let mut block_bases = Vec::with_capacity(groups.len());
    for g in &groups {
        let vs: Vec<Vec<f64>> = g.iter().map(|&i| datum.vectors()[i].clone()).collect();
        block_bases.push(linalg::column_space(&linalg::columns(&vs, n), RANK_RTOL));
    }
    let total: usize = block_bases.iter().map(|q| q.ncols()).sum();
    if total != n {
        return Err(BlError::Precondition(format!(
            "block spans have total dimension {total}, expected {n}"
        )));
    }
    let irreducible = vec![true; groups.len()];
    Ok(AdaptedPartition {
        blocks: groups,
        block_bases,
        irreducible,
    })
}

/// Sub-data on each block span, with vectors in the block's orthonormal
/// basis and exponents restricted to the block.
pub fn split(datum: &RankOneDatum, partition: &AdaptedPartition) -> Result<Vec<RankOneDatum>> {
    partition
        .blocks
        .iter()
        .zip(&partition.block_bases)
        .map(|(block, q)| {
            let vectors = block
                .iter()
                .map(|&i| {
                    let v = DVector::from_column_slice(&datum.vectors()[i]);
                    (q.transpose() * v).iter().cloned().collect()
                })
                .collect();
            let exponents = block.iter().map(|&i| datum.exponents()[i]).collect();
            RankOneDatum::new(q.ncols().max(1), vectors, exponents)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityStatus {
    Infeasible,
    Boundary,
    RelativeInterior,
}

impl FeasibilityStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FeasibilityStatus::Infeasible => "infeasible",
            FeasibilityStatus::Boundary => "boundary",
            FeasibilityStatus::RelativeInterior => "relative_interior",
        }
    }
}

/// When to re-run the verdict in exact rational arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactCheck {
    Never,
    /// Only for boundary or infeasible verdicts, and only when `m` is small.
    Auto,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityOptions {
    /// `ε` above this counts as relative interior.
    pub interior_tol: f64,
    pub exact: ExactCheck,
    pub exact_max_m: usize,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        Self {
            interior_tol: 1e-9,
            exact: ExactCheck::Auto,
            exact_max_m: 12,
        }
    }
}

pub const BOUNDARY_NOTE: &str =
    "boundary: achievement undetermined, consult optimizer diagnostics";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityCertificate {
    pub status: FeasibilityStatus,
    /// Maximized lower bound on the weights (0 unless feasible).
    pub epsilon: f64,
    /// `(I, t_I)` over admissible subsets, present when feasible.
    pub weights: Option<Vec<(Vec<usize>, f64)>>,
    /// `x` with `min_I ⟨x, 1_I⟩ − ⟨x, c⟩ = 1`, present when infeasible.
    pub separator: Option<Vec<f64>>,
    /// Outcome of the rational re-check, when it ran.
    pub exact_status: Option<FeasibilityStatus>,
    pub note: Option<String>,
}

impl FeasibilityCertificate {
    /// Largest coordinate of `|Σ t_I 1_I − c|`.
    pub fn weight_residual(&self, c: &[f64]) -> Option<f64> {
        let weights = self.weights.as_ref()?;
        let mut acc = vec![0.0; c.len()];
        for (s, t) in weights {
            for &i in s {
                acc[i] += t;
            }
        }
        Some(acc.iter().zip(c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// `min_I ⟨x, 1_I⟩ − ⟨x, c⟩` over admissible subsets of `table`.
    pub fn separator_margin(&self, table: &MinorTable, c: &[f64]) -> Option<f64> {
        let x = self.separator.as_ref()?;
        Some(separation_margin(x, table, c))
    }
}

pub fn separation_margin(x: &[f64], table: &MinorTable, c: &[f64]) -> f64 {
    let xc = linalg::dot(x, c);
    table
        .admissible()
        .map(|(s, _)| s.iter().map(|&i| x[i]).sum::<f64>() - xc)
        .fold(f64::INFINITY, f64::min)
}

/// `max ε  s.t.  Σ_{I∋i} s_I + deg_i ε = c_i,  Σ s_I + N ε = 1,  s, ε ≥ 0`,
/// so `t_I = s_I + ε`.
fn membership_lp<S: LpScalar>(m: usize, subsets: &[Vec<usize>], c: &[S]) -> LinearProgram<S> {
    let count = subsets.len();
    let mut deg = vec![0usize; m];
    for s in subsets {
        for &i in s {
            deg[i] += 1;
        }
    }
    let mut rows = Vec::with_capacity(m + 1);
    for i in 0..m {
        let mut row = vec![S::zero(); count + 1];
        for (k, s) in subsets.iter().enumerate() {
            if s.contains(&i) {
                row[k] = S::one();
            }
        }
        row[count] = S::from_usize(deg[i]);
        rows.push((row, Relation::Eq, c[i].clone()));
    }
    let mut row = vec![S::one(); count + 1];
    row[count] = S::from_usize(count);
    rows.push((row, Relation::Eq, S::one()));
    let mut objective = vec![S::zero(); count + 1];
    objective[count] = S::one();
    LinearProgram {
        num_vars: count + 1,
        objective,
        rows,
    }
}

/// `max δ  s.t.  ⟨x, 1_I − c⟩ ≥ δ,  x ∈ [−1, 1]^m`, written in `y = x + 1 ≥ 0`.
fn separator_lp<S: LpScalar>(m: usize, n: usize, subsets: &[Vec<usize>], c: &[S]) -> LinearProgram<S> {
    let mut sum_c = S::zero();
    for ci in c {
        sum_c = sum_c + ci.clone();
    }
    let shift = S::from_usize(n) - sum_c;
    let mut rows = Vec::with_capacity(subsets.len() + m);
    for s in subsets {
        let mut row: Vec<S> = c.iter().map(|ci| -ci.clone()).collect();
        for &i in s {
            row[i] = row[i].clone() + S::one();
        }
        row.push(-S::one());
        rows.push((row, Relation::Ge, shift.clone()));
    }
    for i in 0..m {
        let mut row = vec![S::zero(); m + 1];
        row[i] = S::one();
        rows.push((row, Relation::Le, S::from_usize(2)));
    }
    let mut objective = vec![S::zero(); m + 1];
    objective[m] = S::one();
    LinearProgram {
        num_vars: m + 1,
        objective,
        rows,
    }
}

struct Verdict {
    status: FeasibilityStatus,
    epsilon: f64,
    weights: Option<Vec<f64>>,
}

fn membership_verdict<S: LpScalar>(
    m: usize,
    subsets: &[Vec<usize>],
    c: &[S],
    interior: impl Fn(&S) -> bool,
) -> Result<Verdict> {
    let sol = membership_lp(m, subsets, c).solve().map_err(BlError::Lp)?;
    match sol.outcome {
        LpOutcome::Infeasible => Ok(Verdict {
            status: FeasibilityStatus::Infeasible,
            epsilon: 0.0,
            weights: None,
        }),
        LpOutcome::Unbounded => Err(BlError::Lp("membership program reported unbounded".into())),
        LpOutcome::Optimal { x, value } => {
            let eps = value.to_f64();
            let weights = x[..subsets.len()]
                .iter()
                .map(|s| (s.clone() + value.clone()).to_f64())
                .collect();
            let status = if interior(&value) {
                FeasibilityStatus::RelativeInterior
            } else {
                FeasibilityStatus::Boundary
            };
            Ok(Verdict {
                status,
                epsilon: eps,
                weights: Some(weights),
            })
        }
    }
}

fn separator<S: LpScalar>(m: usize, n: usize, subsets: &[Vec<usize>], c: &[S]) -> Result<Vec<f64>> {
    let sol = separator_lp(m, n, subsets, c).solve().map_err(BlError::Lp)?;
    match sol.outcome {
        LpOutcome::Optimal { x, value } if value.is_pos() => {
            let delta = value.to_f64();
            Ok(x[..m].iter().map(|y| (y.to_f64() - 1.0) / delta).collect())
        }
        _ => Err(BlError::Lp("no strictly separating vector found".into())),
    }
}

/// Rational exponents, projected onto `Σ c = n` when the float data satisfy
/// homogeneity to tolerance.
fn rational_exponents(c: &[f64], n: usize) -> Vec<BigRational> {
    let mut q: Vec<BigRational> = c.iter().map(|&x| rationalize(x, 1e-12, 1_000_000_000_000)).collect();
    let float_sum: f64 = c.iter().sum();
    if (float_sum - n as f64).abs() <= HOMOGENEITY_TOL {
        let mut sum = <BigRational as LpScalar>::zero();
        for x in &q {
            sum += x;
        }
        if LpScalar::is_pos(&sum) {
            let target = <BigRational as LpScalar>::from_usize(n);
            q = q.into_iter().map(|x| x * target.clone() / sum.clone()).collect();
        }
    }
    q
}

/// The exact point `Σ t_I 1_I` for rationalized float weights, with weights
/// below `tol` dropped so the point stays on the face the float LP found.
/// `None` when it lands farther than `tol` from `c`.
fn rational_from_weights(
    m: usize,
    subsets: &[Vec<usize>],
    weights: &[f64],
    c: &[f64],
    tol: f64,
) -> Option<Vec<BigRational>> {
    let zero = <BigRational as LpScalar>::zero();
    let t: Vec<BigRational> = weights
        .iter()
        .map(|&w| if w > tol { rationalize(w, 1e-12, 1_000_000_000_000) } else { zero.clone() })
        .collect();
    let mut total = zero.clone();
    for x in &t {
        total += x;
    }
    if !LpScalar::is_pos(&total) {
        return None;
    }
    let mut q = vec![zero; m];
    for (s, ti) in subsets.iter().zip(&t) {
        if LpScalar::is_pos(ti) {
            for &i in s {
                q[i] += ti.clone() / total.clone();
            }
        }
    }
    let close = q.iter().zip(c).all(|(a, b)| (LpScalar::to_f64(a) - b).abs() <= tol);
    close.then_some(q)
}

pub fn feasibility(datum: &RankOneDatum, table: &MinorTable) -> Result<FeasibilityCertificate> {
    feasibility_with(datum, table, FeasibilityOptions::default())
}

/// Decides whether the exponents lie in the basis polytope (the convex hull
/// of `1_I` over admissible `I`), on its relative boundary, or outside.
pub fn feasibility_with(
    datum: &RankOneDatum,
    table: &MinorTable,
    opts: FeasibilityOptions,
) -> Result<FeasibilityCertificate> {
    let m = datum.m();
    let n = datum.n();
    if table.m() != m || table.n() != n {
        return Err(BlError::Malformed("minor table does not match datum".into()));
    }
    let c = datum.exponents();
    let subsets: Vec<Vec<usize>> = table.admissible().map(|(s, _)| s.to_vec()).collect();
    let sum_c: f64 = c.iter().sum();

    // Homogeneity failures are separated by a constant vector.
    if (sum_c - n as f64).abs() > HOMOGENEITY_TOL || subsets.is_empty() {
        let gap = n as f64 - sum_c;
        let x = if subsets.is_empty() || gap == 0.0 {
            vec![0.0; m]
        } else {
            vec![1.0 / gap; m]
        };
        return Ok(FeasibilityCertificate {
            status: FeasibilityStatus::Infeasible,
            epsilon: 0.0,
            weights: None,
            separator: if subsets.is_empty() { None } else { Some(x) },
            exact_status: None,
            note: Some(if subsets.is_empty() {
                "no admissible subsets".into()
            } else {
                format!("exponents sum to {sum_c}, not {n}")
            }),
        });
    }

    let tol = opts.interior_tol;
    let float = membership_verdict(m, &subsets, c, |e: &f64| *e > tol)?;
    let run_exact = m <= opts.exact_max_m
        && match opts.exact {
            ExactCheck::Never => false,
            ExactCheck::Always => true,
            ExactCheck::Auto => float.status != FeasibilityStatus::RelativeInterior,
        };
    let (verdict, exact_status, exact_c) = if run_exact {
        let cq = float
            .weights
            .as_deref()
            .and_then(|w| rational_from_weights(m, &subsets, w, c, tol))
            .unwrap_or_else(|| rational_exponents(c, n));
        let exact = membership_verdict(m, &subsets, &cq, |e: &BigRational| LpScalar::is_pos(e))?;
        let status = exact.status;
        (exact, Some(status), Some(cq))
    } else {
        (float, None, None)
    };

    let separator = if verdict.status == FeasibilityStatus::Infeasible {
        Some(match &exact_c {
            Some(cq) => separator(m, n, &subsets, cq)?,
            None => separator(m, n, &subsets, c)?,
        })
    } else {
        None
    };
    let weights = verdict
        .weights
        .map(|w| subsets.iter().cloned().zip(w.into_iter().map(|t| t.max(0.0))).collect());
    let note = (verdict.status == FeasibilityStatus::Boundary).then(|| BOUNDARY_NOTE.to_string());
    Ok(FeasibilityCertificate {
        status: verdict.status,
        epsilon: verdict.epsilon.max(0.0),
        weights,
        separator,
        exact_status,
        note,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AchievementCertificate {
    pub certified: bool,
    /// `(I, t_I)` over admissible subsets.
    pub weights: Vec<(Vec<usize>, f64)>,
    /// Largest coordinate of `|Σ t_I 1_I − c|`.
    pub residual: f64,
}

/// Certificate tolerance per coordinate.
pub const CERTIFICATE_TOL: f64 = 1e-7;

/// Builds `t_I ∝ d̃_I λ_I` (with `d̃_I = d_I Π_{i∈I} c_i`, the minors of the
/// Gaussian-precision normalization) and checks `Σ t_I 1_I = c`.
pub fn achievement_certificate(
    datum: &RankOneDatum,
    table: &MinorTable,
    lambda: &[f64],
) -> Result<AchievementCertificate> {
    let c = datum.exponents();
    stationarity_certificate(&table.scaled(c), c, lambda)
}

/// Same check against an arbitrary table: `t_I = d_I λ_I / Σ_J d_J λ_J`.
pub fn stationarity_certificate(
    table: &MinorTable,
    c: &[f64],
    lambda: &[f64],
) -> Result<AchievementCertificate> {
    if lambda.len() != table.m() || c.len() != table.m() {
        return Err(BlError::Malformed(format!(
            "expected {} weights, got {}",
            table.m(),
            lambda.len()
        )));
    }
    if lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(BlError::Precondition("weights must be positive and finite".into()));
    }
    let logs: Vec<f64> = lambda.iter().map(|l| l.ln()).collect();
    let entries: Vec<(Vec<usize>, f64)> = table
        .admissible()
        .map(|(s, d)| (s.to_vec(), d.ln() + s.iter().map(|&i| logs[i]).sum::<f64>()))
        .collect();
    let log_total = linalg::log_sum_exp(&entries.iter().map(|e| e.1).collect::<Vec<_>>());
    let weights: Vec<(Vec<usize>, f64)> = entries
        .into_iter()
        .map(|(s, l)| (s, (l - log_total).exp()))
        .collect();
    let mut acc = vec![0.0; c.len()];
    for (s, t) in &weights {
        for &i in s {
            acc[i] += t;
        }
    }
    let residual = acc.iter().zip(c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(AchievementCertificate {
        certified: residual <= CERTIFICATE_TOL,
        weights,
        residual,
    })
}
