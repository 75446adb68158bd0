//! Brascamp–Lieb data: rank-one (vectors and exponents) and general
//! (surjective linear maps and exponents).

use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{BlError, Result};
use crate::linalg;

/// Tolerance on the homogeneity identity `Σ c_i n_i = n`.
pub const HOMOGENEITY_TOL: f64 = 1e-12;
/// Relative singular-value threshold used for rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

/// Vectors `v_1..v_m` of `R^n` with positive exponents `c_1..c_m`; factor `i`
/// is the linear form `x ↦ ⟨x, v_i⟩`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankOneDatum {
    n: usize,
    vectors: Vec<Vec<f64>>,
    exponents: Vec<f64>,
}

impl RankOneDatum {
    /// Checks shapes and finiteness only. Mathematical conditions (span,
    /// homogeneity, positivity) are left to [`RankOneDatum::validate`].
    pub fn new(n: usize, vectors: Vec<Vec<f64>>, exponents: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(BlError::Malformed("dimension n must be positive".into()));
        }
        if vectors.len() != exponents.len() {
            return Err(BlError::Malformed(format!(
                "{} vectors but {} exponents",
                vectors.len(),
                exponents.len()
            )));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != n {
                return Err(BlError::Malformed(format!(
                    "vector {} has length {}, expected {}",
                    i,
                    v.len(),
                    n
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(BlError::Malformed(format!("vector {i} has non-finite entries")));
            }
        }
        if exponents.iter().any(|c| !c.is_finite()) {
            return Err(BlError::Malformed("non-finite exponent".into()));
        }
        Ok(Self {
            n,
            vectors,
            exponents,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    /// The `n × m` matrix whose columns are the vectors.
    pub fn matrix(&self) -> DMatrix<f64> {
        linalg::columns(&self.vectors, self.n)
    }

    pub fn with_exponents(&self, exponents: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.vectors.clone(), exponents)
    }

    /// Same datum with every vector replaced by `u v_i`.
    pub fn transformed(&self, u: &DMatrix<f64>) -> Result<Self> {
        let vectors = self
            .vectors
            .iter()
            .map(|v| (u * nalgebra::DVector::from_column_slice(v)).iter().cloned().collect())
            .collect();
        Self::new(self.n, vectors, self.exponents.clone())
    }

    /// Same datum with factors reordered so that new factor `k` is old factor
    /// `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(
            self.n,
            perm.iter().map(|&p| self.vectors[p].clone()).collect(),
            perm.iter().map(|&p| self.exponents[p]).collect(),
        )
    }

    /// Each vector as a `1 × n` block, so the general machinery applies.
    pub fn to_multi(&self) -> MultiDatum {
        let blocks = self
            .vectors
            .iter()
            .zip(&self.exponents)
            .map(|(v, &c)| (DMatrix::from_row_slice(1, self.n, v), c))
            .collect();
        MultiDatum {
            n: self.n,
            blocks,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let m = self.m();
        if m < self.n {
            report.push(Violation::FactorCount, format!("m = {} < n = {}", m, self.n));
        }
        for (i, v) in self.vectors.iter().enumerate() {
            if v.iter().all(|&x| x == 0.0) {
                report.push(Violation::ZeroVector, format!("vector {i} is zero"));
            }
        }
        for (i, &c) in self.exponents.iter().enumerate() {
            if !(c > 0.0) {
                report.push(Violation::Positivity, format!("exponent {i} = {c} is not positive"));
            }
        }
        let sum: f64 = self.exponents.iter().sum();
        if (sum - self.n as f64).abs() > HOMOGENEITY_TOL {
            report.push(
                Violation::Homogeneity,
                format!("sum of exponents is {sum}, expected {}", self.n),
            );
        }
        let rank = linalg::rank(&self.matrix(), RANK_RTOL);
        if rank < self.n {
            report.push(
                Violation::Span,
                format!("vectors span a subspace of dimension {rank} < {}", self.n),
            );
        }
        report
    }
}

/// Surjective maps `B_i : R^n → R^{n_i}` (stored as `n_i × n` matrices) with
/// positive exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDatum {
    n: usize,
    blocks: Vec<(DMatrix<f64>, f64)>,
}

impl MultiDatum {
    pub fn new(n: usize, blocks: Vec<(DMatrix<f64>, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(BlError::Malformed("dimension n must be positive".into()));
        }
        if blocks.is_empty() {
            return Err(BlError::Malformed("datum has no factors".into()));
        }
        for (i, (b, c)) in blocks.iter().enumerate() {
            if b.ncols() != n {
                return Err(BlError::Malformed(format!(
                    "block {} has {} columns, expected {}",
                    i,
                    b.ncols(),
                    n
                )));
            }
            if b.nrows() == 0 {
                return Err(BlError::Malformed(format!("block {i} has no rows")));
            }
            if b.iter().any(|x| !x.is_finite()) || !c.is_finite() {
                return Err(BlError::Malformed(format!("block {i} has non-finite entries")));
            }
        }
        Ok(Self { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[(DMatrix<f64>, f64)] {
        &self.blocks
    }

    pub fn map(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i].0
    }

    pub fn exponent(&self, i: usize) -> f64 {
        self.blocks[i].1
    }

    pub fn exponents(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.1).collect()
    }

    /// Target dimensions `n_i`.
    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.0.nrows()).collect()
    }

    /// `Σ c_i B_i^T A_i B_i`.
    pub fn aggregate(&self, a: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.n, self.n);
        for ((b, c), ai) in self.blocks.iter().zip(a) {
            acc += b.transpose() * ai * b * *c;
        }
        acc
    }

    /// `Some` when every block is a single row.
    pub fn as_rank_one(&self) -> Option<RankOneDatum> {
        if self.blocks.iter().any(|(b, _)| b.nrows() != 1) {
            return None;
        }
        let vectors = self.blocks.iter().map(|(b, _)| b.row(0).iter().cloned().collect()).collect();
        RankOneDatum::new(self.n, vectors, self.exponents()).ok()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut weighted = 0.0;
        for (i, (b, c)) in self.blocks.iter().enumerate() {
            let ni = b.nrows();
            if ni > self.n {
                report.push(Violation::Surjectivity, format!("block {i} maps onto R^{ni} with n_i > n"));
            }
            let r = linalg::rank(b, RANK_RTOL);
            if r < ni {
                report.push(
                    Violation::Surjectivity,
                    format!("block {i} has rank {r} < n_i = {ni}"),
                );
            }
            if !(*c > 0.0) {
                report.push(Violation::Positivity, format!("exponent {i} = {c} is not positive"));
            }
            weighted += c * ni as f64;
        }
        if (weighted - self.n as f64).abs() > HOMOGENEITY_TOL {
            report.push(
                Violation::Homogeneity,
                format!("sum of c_i n_i is {weighted}, expected {}", self.n),
            );
        }
        let total_rows: usize = self.blocks.iter().map(|b| b.0.nrows()).sum();
        let mut stacked = DMatrix::zeros(total_rows, self.n);
        let mut row = 0;
        for (b, _) in &self.blocks {
            stacked.rows_mut(row, b.nrows()).copy_from(b);
            row += b.nrows();
        }
        let r = linalg::rank(&stacked, RANK_RTOL);
        if r < self.n {
            report.push(
                Violation::Kernel,
                format!("intersection of kernels is nontrivial (stacked rank {r} < {})", self.n),
            );
        }
        report
    }
}

/// Named invariant violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    FactorCount,
    ZeroVector,
    Positivity,
    Homogeneity,
    Span,
    Surjectivity,
    Kernel,
}

impl Violation {
    pub fn name(self) -> &'static str {
        match self {
            Violation::FactorCount => "factor_count",
            Violation::ZeroVector => "zero_vector",
            Violation::Positivity => "positivity",
            Violation::Homogeneity => "homogeneity",
            Violation::Span => "span",
            Violation::Surjectivity => "surjectivity",
            Violation::Kernel => "kernel",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub violation: Violation,
    pub detail: String,
}

/// All violated invariants of a datum. Empty means the datum is a candidate
/// for finite nonzero constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    fn push(&mut self, violation: Violation, detail: String) {
        self.findings.push(Finding { violation, detail });
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, v: Violation) -> bool {
        self.findings.iter().any(|f| f.violation == v)
    }

    pub fn violations(&self) -> Vec<Violation> {
        self.findings.iter().map(|f| f.violation).collect()
    }
}

/// Either kind of datum.
#[derive(Debug, Clone, PartialEq)]
pub enum Datum {
    RankOne(RankOneDatum),
    Multi(MultiDatum),
}

impl Datum {
    pub fn validate(&self) -> ValidationReport {
        match self {
            Datum::RankOne(d) => d.validate(),
            Datum::Multi(d) => d.validate(),
        }
    }
}

pub fn validate(datum: &Datum) -> ValidationReport {
    datum.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_third() -> Vec<f64> {
        vec![std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]
    }

    #[test]
    fn orthonormal_basis_is_clean() {
        let d = RankOneDatum::new(2, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap();
        assert!(d.validate().is_empty());
    }

    #[test]
    fn homogeneity_violation_is_named() {
        let d = RankOneDatum::new(
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], diag_third()],
            vec![0.75, 0.75, 0.75],
        )
        .unwrap();
        let r = d.validate();
        assert_eq!(r.violations(), vec![Violation::Homogeneity]);
    }

    #[test]
    fn collinear_vectors_fail_span() {
        let d = RankOneDatum::new(2, vec![vec![1.0, 0.0], vec![2.0, 0.0]], vec![1.0, 1.0]).unwrap();
        let r = d.validate();
        assert_eq!(r.violations(), vec![Violation::Span]);
    }

    #[test]
    fn shape_errors_are_raised() {
        assert!(RankOneDatum::new(2, vec![vec![1.0]], vec![1.0]).is_err());
        assert!(RankOneDatum::new(2, vec![vec![1.0, 0.0]], vec![]).is_err());
        assert!(MultiDatum::new(2, vec![(DMatrix::identity(2, 3), 1.0)]).is_err());
    }

    #[test]
    fn multi_datum_checks() {
        let pl = MultiDatum::new(
            2,
            vec![(DMatrix::identity(2, 2), 0.25), (DMatrix::identity(2, 2), 0.75)],
        )
        .unwrap();
        assert!(pl.validate().is_empty());
        let bad = MultiDatum::new(
            2,
            vec![(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 2.0)],
        )
        .unwrap();
        let r = bad.validate();
        assert!(r.has(Violation::Kernel));
        assert!(!r.has(Violation::Homogeneity));
        let deficient = MultiDatum::new(
            2,
            vec![(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), 1.0)],
        )
        .unwrap();
        assert!(deficient.validate().has(Violation::Surjectivity));
    }
}
