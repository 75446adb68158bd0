//! Computation of the determinant infimum `D`, the constants `E = √D` and
//! `F = 1/√D`, Gaussian extremizers and the Young-type constant.
//!
//! Rank-one data are handled through the convex function
//! `ψ(x) = log Σ_I d_I e^{x_I} − ⟨c, x⟩` (so `D = exp(min ψ)`, `λ = e^x`),
//! minimized by damped Newton on the complement of its lineality space.
//! General data use a BFGS descent over Cholesky factors of the blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datum::{MultiDatum, RankOneDatum, HOMOGENEITY_TOL, RANK_RTOL};
use crate::error::{BlError, Result};
use crate::linalg;
use crate::minors::{MinorOptions, MinorTable};
use crate::structure::{feasibility, FeasibilityStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Max-norm bound on the gradient for convergence.
    pub tol: f64,
    /// Max-norm bound on the final Newton step for convergence.
    pub step_tol: f64,
    pub max_iter: usize,
    /// `|x_i|` beyond this declares divergence.
    pub divergence_bound: f64,
    /// Extra randomly initialized runs.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            step_tol: 1e-6,
            max_iter: 500,
            divergence_bound: 60.0,
            restarts: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumStatus {
    Converged,
    /// Iterates escape to infinity; `D` is the limiting ratio and is not
    /// achieved.
    Diverged,
    /// Exponents outside the basis polytope; `D = 0`.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianOptimum {
    /// Scalar precisions (rank-one data, or general data with 1×1 blocks).
    pub lambda: Vec<f64>,
    /// Block precisions `A_i` (general data only).
    #[serde(skip)]
    pub blocks: Vec<DMatrix<f64>>,
    pub d: f64,
    pub log_d: f64,
    pub e: f64,
    pub f: f64,
    pub converged: bool,
    pub status: OptimumStatus,
    pub stationarity_residual: f64,
    pub iterations: usize,
    /// Separating direction when infeasible.
    pub separator: Option<Vec<f64>>,
}

impl GaussianOptimum {
    fn new(log_d: f64, status: OptimumStatus) -> Self {
        let (d, e, f) = if log_d == f64::NEG_INFINITY {
            (0.0, 0.0, f64::INFINITY)
        } else {
            (log_d.exp(), (0.5 * log_d).exp(), (-0.5 * log_d).exp())
        };
        Self {
            lambda: Vec::new(),
            blocks: Vec::new(),
            d,
            log_d,
            e,
            f,
            converged: status == OptimumStatus::Converged,
            status,
            stationarity_residual: 0.0,
            iterations: 0,
            separator: None,
        }
    }

    /// True when `D` is attained by the returned precisions.
    pub fn achieved(&self) -> bool {
        self.status == OptimumStatus::Converged
    }
}

/// `(E, F) = (√D, 1/√D)`, with `F = ∞` when `D = 0`.
pub fn constants(opt: &GaussianOptimum) -> (f64, f64) {
    constants_from_d(opt.d)
}

pub fn constants_from_d(d: f64) -> (f64, f64) {
    if d <= 0.0 {
        (0.0, f64::INFINITY)
    } else {
        (d.sqrt(), 1.0 / d.sqrt())
    }
}

/// Minimum of `ψ` for a raw table and exponent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentMinimum {
    pub x: Vec<f64>,
    pub log_d: f64,
    pub residual: f64,
    pub newton_step: f64,
    pub iterations: usize,
    pub status: OptimumStatus,
}

/// `ψ`, its gradient and Hessian at `x`.
pub struct LogSumExp<'a> {
    table: &'a MinorTable,
    c: &'a [f64],
    log_d: Vec<f64>,
    subsets: Vec<&'a [usize]>,
}

impl<'a> LogSumExp<'a> {
    pub fn new(table: &'a MinorTable, c: &'a [f64]) -> Self {
        let (subsets, log_d) = table.admissible().map(|(s, d)| (s, d.ln())).unzip();
        Self {
            table,
            c,
            log_d,
            subsets,
        }
    }

    fn terms(&self, x: &[f64]) -> Vec<f64> {
        self.subsets
            .iter()
            .zip(&self.log_d)
            .map(|(s, l)| l + s.iter().map(|&i| x[i]).sum::<f64>())
            .collect()
    }

    /// `φ(x) = log Σ_I d_I e^{x_I}`.
    pub fn phi(&self, x: &[f64]) -> f64 {
        linalg::log_sum_exp(&self.terms(x))
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        self.phi(x) - linalg::dot(self.c, x)
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.terms(x);
        let lse = linalg::log_sum_exp(&terms);
        terms.iter().map(|t| (t - lse).exp()).collect()
    }

    /// `∇φ(x)_i = Σ_{I∋i} d_I e^{x_I} / Σ_I d_I e^{x_I}`.
    pub fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        let p = self.probabilities(x);
        let mut g = vec![0.0; self.table.m()];
        for (s, pi) in self.subsets.iter().zip(&p) {
            for &i in *s {
                g[i] += pi;
            }
        }
        g
    }

    pub fn grad_psi(&self, x: &[f64]) -> Vec<f64> {
        self.grad_phi(x).iter().zip(self.c).map(|(g, c)| g - c).collect()
    }

    /// Covariance of `1_I` under the Gibbs weights.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.table.m();
        let p = self.probabilities(x);
        let mut h = DMatrix::zeros(m, m);
        let mut q = vec![0.0; m];
        for (s, pi) in self.subsets.iter().zip(&p) {
            for &i in *s {
                q[i] += pi;
                for &j in *s {
                    h[(i, j)] += pi;
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                h[(i, j)] -= q[i] * q[j];
            }
        }
        h
    }
}

/// Orthonormal basis (columns) of the complement of the lineality space
/// `{u : ⟨u, 1_I⟩ constant over admissible I}`.
pub fn lineality_complement(table: &MinorTable) -> DMatrix<f64> {
    let m = table.m();
    let admissible: Vec<&[usize]> = table.admissible().map(|(s, _)| s).collect();
    if admissible.len() < 2 {
        return DMatrix::zeros(m, 0);
    }
    let first = admissible[0];
    let mut rows = DMatrix::zeros(admissible.len() - 1, m);
    for (r, s) in admissible[1..].iter().enumerate() {
        for &i in *s {
            rows[(r, i)] += 1.0;
        }
        for &i in first {
            rows[(r, i)] -= 1.0;
        }
    }
    linalg::column_space(&rows.transpose(), RANK_RTOL)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Minimizes `ψ` for `table` and `c` starting at `x0` (projected onto the
/// complement of the lineality space). Assumes `c` lies in the basis polytope.
pub fn minimize_exponents(
    table: &MinorTable,
    c: &[f64],
    cfg: &SolverConfig,
    x0: Option<&[f64]>,
) -> Result<ExponentMinimum> {
    let m = table.m();
    if c.len() != m {
        return Err(BlError::Malformed(format!("expected {m} exponents, got {}", c.len())));
    }
    if table.admissible().next().is_none() {
        return Err(BlError::Precondition("no admissible subsets".into()));
    }
    let f = LogSumExp::new(table, c);
    let q = lineality_complement(table);
    let k = q.ncols();
    let start = x0.map(|x| DVector::from_column_slice(x)).unwrap_or_else(|| DVector::zeros(m));
    let mut z: DVector<f64> = q.transpose() * start;
    let to_x = |z: &DVector<f64>| -> Vec<f64> { (&q * z).iter().cloned().collect() };

    let mut x = to_x(&z);
    let mut value = f.psi(&x);
    let mut iterations = 0;
    loop {
        let g = f.grad_psi(&x);
        let residual = max_abs(&g);
        if k == 0 {
            return Ok(ExponentMinimum {
                x,
                log_d: value,
                residual,
                newton_step: 0.0,
                iterations,
                status: OptimumStatus::Converged,
            });
        }
        let gz = q.transpose() * DVector::from_column_slice(&g);
        let hz = q.transpose() * f.hessian(&x) * &q;
        let eig = SymmetricEigen::new((&hz + hz.transpose()) * 0.5);
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let floor = (1e-14 * top).max(f64::MIN_POSITIVE);
        let mut dz = DVector::zeros(k);
        for (j, mu) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(j);
            dz -= v * (v.dot(&gz) / mu.max(floor));
        }
        let dx = &q * &dz;
        let newton_step = dx.amax();
        if residual <= cfg.tol && newton_step <= cfg.step_tol {
            return Ok(ExponentMinimum {
                x,
                log_d: value,
                residual,
                newton_step,
                iterations,
                status: OptimumStatus::Converged,
            });
        }
        if max_abs(&x) > cfg.divergence_bound {
            return Ok(ExponentMinimum {
                x,
                log_d: value,
                residual,
                newton_step,
                iterations,
                status: OptimumStatus::Diverged,
            });
        }
        if iterations >= cfg.max_iter {
            return Err(BlError::IterationCap {
                iterations,
                residual,
                lambda: x.iter().map(|v| v.exp()).collect(),
            });
        }
        iterations += 1;

        let slope = gz.dot(&dz);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let trial_z = &z + &dz * t;
            let trial_x = to_x(&trial_z);
            let trial = f.psi(&trial_x);
            if trial <= value + 1e-4 * t * slope && trial < value {
                accepted = Some((trial_z, trial_x, trial));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((nz, nx, nv)) => {
                z = nz;
                x = nx;
                value = nv;
            }
            None => {
                // No decrease is representable any more: a large step along
                // a flat direction means the infimum sits at infinity.
                let status = if residual <= cfg.tol.sqrt() && newton_step > cfg.step_tol {
                    OptimumStatus::Diverged
                } else if residual <= cfg.tol.sqrt() {
                    OptimumStatus::Converged
                } else {
                    return Err(BlError::IterationCap {
                        iterations,
                        residual,
                        lambda: x.iter().map(|v| v.exp()).collect(),
                    });
                };
                return Ok(ExponentMinimum {
                    x,
                    log_d: value,
                    residual,
                    newton_step,
                    iterations,
                    status,
                });
            }
        }
    }
}

fn rank_one_optimum(
    datum: &RankOneDatum,
    table: &MinorTable,
    weighted: &MinorTable,
    cfg: &SolverConfig,
    x0: Option<&[f64]>,
) -> Result<GaussianOptimum> {
    let cert = feasibility(datum, table)?;
    if cert.status == FeasibilityStatus::Infeasible {
        let mut opt = GaussianOptimum::new(f64::NEG_INFINITY, OptimumStatus::Infeasible);
        opt.lambda = match &cert.separator {
            Some(x) => x.iter().map(|v| (-v).exp()).collect(),
            None => vec![1.0; datum.m()],
        };
        opt.separator = cert.separator;
        return Ok(opt);
    }
    let res = minimize_exponents(weighted, datum.exponents(), cfg, x0)?;
    let mut opt = GaussianOptimum::new(res.log_d, res.status);
    opt.lambda = res.x.iter().map(|v| v.exp()).collect();
    opt.stationarity_residual = res.residual;
    opt.iterations = res.iterations;
    Ok(opt)
}

/// `D = inf det(Σ c_i λ_i v_i⊗v_i) / Π λ_i^{c_i}` with minimizing precisions
/// `λ` normalized to geometric mean one. Infeasible exponents return `D = 0`
/// at once, with the separator.
pub fn minimize(datum: &RankOneDatum, table: &MinorTable, cfg: &SolverConfig) -> Result<GaussianOptimum> {
    rank_one_optimum(datum, table, &table.scaled(datum.exponents()), cfg, None)
}

/// Same as [`minimize`] from a given starting point `x = log λ`.
pub fn minimize_from(
    datum: &RankOneDatum,
    table: &MinorTable,
    cfg: &SolverConfig,
    x0: &[f64],
) -> Result<GaussianOptimum> {
    rank_one_optimum(datum, table, &table.scaled(datum.exponents()), cfg, Some(x0))
}

/// Starting points: the origin, then `cfg.restarts` uniform draws from
/// `[-2, 2]^m`, one seeded stream per restart.
pub fn restart_points(m: usize, cfg: &SolverConfig) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m]];
    for k in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        out.push((0..m).map(|_| rng.random_range(-2.0..2.0)).collect());
    }
    out
}

/// One optimum per starting point of [`restart_points`].
pub fn minimize_multistart(
    datum: &RankOneDatum,
    table: &MinorTable,
    cfg: &SolverConfig,
) -> Result<Vec<GaussianOptimum>> {
    let weighted = table.scaled(datum.exponents());
    restart_points(datum.m(), cfg)
        .iter()
        .map(|x0| rank_one_optimum(datum, table, &weighted, cfg, Some(x0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessVerdict {
    pub scalar_related: bool,
    /// Common ratio `λ^{(2)}_i / λ^{(1)}_i` (geometric mean when not constant).
    pub r: f64,
    /// Largest relative deviation of a ratio from `r`.
    pub spread: f64,
}

pub const UNIQUENESS_TOL: f64 = 1e-6;

/// Whether two optima differ by a scalar multiple.
pub fn uniqueness_check(
    datum: &RankOneDatum,
    opt1: &GaussianOptimum,
    opt2: &GaussianOptimum,
) -> Result<UniquenessVerdict> {
    let m = datum.m();
    if opt1.lambda.len() != m || opt2.lambda.len() != m {
        return Err(BlError::Malformed("optima do not match the datum".into()));
    }
    let ratios: Vec<f64> = opt2.lambda.iter().zip(&opt1.lambda).map(|(b, a)| b / a).collect();
    let r = (ratios.iter().map(|q| q.ln()).sum::<f64>() / m as f64).exp();
    let spread = ratios.iter().map(|q| (q / r - 1.0).abs()).fold(0.0, f64::max);
    Ok(UniquenessVerdict {
        scalar_related: spread <= UNIQUENESS_TOL,
        r,
        spread,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    #[serde(rename = "BL")]
    Bl,
    #[serde(rename = "RBL")]
    Rbl,
}

/// `t ↦ amplitude · exp(−precision (t − center)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianDescriptor {
    pub amplitude: f64,
    pub precision: f64,
    pub center: f64,
}

impl GaussianDescriptor {
    pub fn eval(&self, t: f64) -> f64 {
        let d = t - self.center;
        self.amplitude * (-self.precision * d * d).exp()
    }

    pub fn integral(&self) -> f64 {
        self.amplitude * (std::f64::consts::PI / self.precision).sqrt()
    }
}

/// Extremizing Gaussians built from optimal precisions `λ`.
///
/// For `Side::Bl`, `shifts` is a point `y ∈ R^n` and factor `i` is
/// `exp(−λ_i (a t − ⟨y, v_i⟩)²)`. For `Side::Rbl`, `shifts` holds one real
/// `t_i` per factor and factor `i` is `exp(−(a t − t_i)² / λ_i)`.
pub fn extremizer_family(
    datum: &RankOneDatum,
    opt: &GaussianOptimum,
    side: Side,
    a: f64,
    shifts: &[f64],
) -> Result<Vec<GaussianDescriptor>> {
    if !opt.achieved() {
        return Err(BlError::Precondition("optimum is not achieved".into()));
    }
    if !(a > 0.0) {
        return Err(BlError::Precondition("scale must be positive".into()));
    }
    let m = datum.m();
    if opt.lambda.len() != m {
        return Err(BlError::Malformed("optimum does not match the datum".into()));
    }
    match side {
        Side::Bl => {
            if shifts.len() != datum.n() {
                return Err(BlError::Malformed(format!("expected y in R^{}", datum.n())));
            }
            Ok((0..m)
                .map(|i| GaussianDescriptor {
                    amplitude: 1.0,
                    precision: opt.lambda[i] * a * a,
                    center: linalg::dot(shifts, &datum.vectors()[i]) / a,
                })
                .collect())
        }
        Side::Rbl => {
            if shifts.len() != m {
                return Err(BlError::Malformed(format!("expected {m} translations")));
            }
            Ok((0..m)
                .map(|i| GaussianDescriptor {
                    amplitude: 1.0,
                    precision: a * a / opt.lambda[i],
                    center: shifts[i] / a,
                })
                .collect())
        }
    }
}

/// Tolerance for the orthogonality and scaling checks of [`young_constant`].
pub const YOUNG_TOL: f64 = 1e-10;

/// Rank-one datum of the Young-type constant: `w_i` is the last `m − n`
/// coordinates of row `i` of `V`, with exponent `r'/p'_i`.
pub fn young_datum(v: &DMatrix<f64>, n: usize, r: f64, p: &[f64]) -> Result<RankOneDatum> {
    let m = v.nrows();
    if v.ncols() != m {
        return Err(BlError::Malformed("V must be square".into()));
    }
    if p.len() != m {
        return Err(BlError::Malformed(format!("expected {m} exponents p_i, got {}", p.len())));
    }
    if n == 0 || n >= m {
        return Err(BlError::Precondition(format!("need 0 < n < m, got n = {n}, m = {m}")));
    }
    let defect = (v.transpose() * v - DMatrix::identity(m, m)).amax();
    if defect > YOUNG_TOL {
        return Err(BlError::Precondition(format!("V is not orthogonal (defect {defect:e})")));
    }
    if !(r > 1.0) || p.iter().any(|&q| !(q > 1.0)) {
        return Err(BlError::Precondition("r and every p_i must exceed 1".into()));
    }
    let lhs: f64 = p.iter().map(|q| 1.0 / q).sum();
    let rhs = n as f64 + (m - n) as f64 / r;
    if (lhs - rhs).abs() > YOUNG_TOL {
        return Err(BlError::Precondition(format!(
            "scaling condition fails: sum 1/p_i = {lhs}, expected {rhs}"
        )));
    }
    let r_conj = r / (r - 1.0);
    let exponents: Vec<f64> = p.iter().map(|q| r_conj * (1.0 - 1.0 / q)).collect();
    let k = m - n;
    let sum: f64 = exponents.iter().sum();
    if (sum - k as f64).abs() > 1e-9 {
        return Err(BlError::Precondition(format!("exponents sum to {sum}, expected {k}")));
    }
    let vectors = (0..m).map(|i| (n..m).map(|j| v[(i, j)]).collect()).collect();
    RankOneDatum::new(k, vectors, exponents)
}

/// `D_{r,p} = inf det(M diag(λ) M^T) / Π λ_i^{r'/p'_i}` where `M` collects the
/// last `m − n` columns of `V`.
pub fn young_constant(
    v: &DMatrix<f64>,
    n: usize,
    r: f64,
    p: &[f64],
    cfg: &SolverConfig,
) -> Result<GaussianOptimum> {
    let datum = young_datum(v, n, r, p)?;
    let table = crate::minors::minor_table(&datum, MinorOptions::from_env())?;
    rank_one_optimum(&datum, &table, &table, cfg, None)
}

// ---------------------------------------------------------------------------
// General data.

struct BlockObjective<'a> {
    datum: &'a MultiDatum,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
}

impl<'a> BlockObjective<'a> {
    fn new(datum: &'a MultiDatum) -> Self {
        let dims = datum.dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut len = 0;
        for d in &dims {
            offsets.push(len);
            len += d * (d + 1) / 2;
        }
        Self {
            datum,
            dims,
            offsets,
            len,
        }
    }

    /// Lower-triangular factor of block `i`; diagonal entries are `exp(θ)`.
    fn factor(&self, theta: &[f64], i: usize) -> DMatrix<f64> {
        let d = self.dims[i];
        let mut l = DMatrix::zeros(d, d);
        let mut k = self.offsets[i];
        for r in 0..d {
            for c in 0..=r {
                l[(r, c)] = if r == c { theta[k].exp() } else { theta[k] };
                k += 1;
            }
        }
        l
    }

    fn precisions(&self, theta: &[f64]) -> Vec<DMatrix<f64>> {
        (0..self.dims.len())
            .map(|i| {
                let l = self.factor(theta, i);
                &l * l.transpose()
            })
            .collect()
    }

    fn log_det_a(&self, theta: &[f64], i: usize) -> f64 {
        (0..self.dims[i])
            .map(|r| 2.0 * theta[self.offsets[i] + r * (r + 1) / 2 + r])
            .sum()
    }

    /// Objective and gradient; `None` when the aggregate is not positive
    /// definite.
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let a = self.precisions(theta);
        let mq = self.datum.aggregate(&a);
        let chol = mq.clone().cholesky()?;
        let log_det_q = linalg::spd_log_det(&mq)?;
        let q_inv = chol.inverse();
        let mut value = log_det_q;
        let mut grad = vec![0.0; self.len];
        for i in 0..self.dims.len() {
            let c = self.datum.exponent(i);
            value -= c * self.log_det_a(theta, i);
            let b = self.datum.map(i);
            let g = b * &q_inv * b.transpose() * c;
            let l = self.factor(theta, i);
            let dl = &g * &l * 2.0;
            let mut k = self.offsets[i];
            for r in 0..self.dims[i] {
                for col in 0..=r {
                    grad[k] = if r == col {
                        dl[(r, col)] * l[(r, col)] - 2.0 * c
                    } else {
                        dl[(r, col)]
                    };
                    k += 1;
                }
            }
        }
        value.is_finite().then_some((value, grad))
    }
}

/// Value and gradient of `log det(Σ c_i B_i^T A_i B_i) − Σ c_i log det A_i`
/// in the triangular-factor parametrization; exposed for gradient tests.
pub fn block_objective(datum: &MultiDatum, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    BlockObjective::new(datum).eval(theta)
}

/// Number of parameters of [`block_objective`].
pub fn block_parameter_count(datum: &MultiDatum) -> usize {
    BlockObjective::new(datum).len
}

struct BlockRun {
    theta: Vec<f64>,
    value: f64,
    residual: f64,
    iterations: usize,
    status: OptimumStatus,
}

fn bfgs(obj: &BlockObjective, theta0: Vec<f64>, cfg: &SolverConfig) -> Result<BlockRun> {
    let n = obj.len;
    let mut theta = theta0;
    let (mut value, mut grad) = obj
        .eval(&theta)
        .ok_or(BlError::Singular { min_eigenvalue: 0.0 })?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let cap = cfg.max_iter.max(1) * 4;
    loop {
        let residual = max_abs(&grad);
        if residual <= cfg.tol {
            return Ok(BlockRun {
                theta,
                value,
                residual,
                iterations,
                status: OptimumStatus::Converged,
            });
        }
        if max_abs(&theta) > cfg.divergence_bound {
            return Ok(BlockRun {
                theta,
                value,
                residual,
                iterations,
                status: OptimumStatus::Diverged,
            });
        }
        if iterations >= cap {
            return Err(BlError::IterationCap {
                iterations,
                residual,
                lambda: theta.clone(),
            });
        }
        iterations += 1;
        let g = DVector::from_column_slice(&grad);
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut t = 1.0;
        let mut next = None;
        while t > 1e-14 {
            let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let Some((v, gr)) = obj.eval(&trial) {
                if v <= value + 1e-4 * t * slope {
                    next = Some((trial, v, gr));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((new_theta, new_value, new_grad)) = next else {
            let status = if residual <= cfg.tol.sqrt() {
                OptimumStatus::Converged
            } else {
                return Err(BlError::IterationCap {
                    iterations,
                    residual,
                    lambda: theta.clone(),
                });
            };
            return Ok(BlockRun {
                theta,
                value,
                residual,
                iterations,
                status,
            });
        };
        let s = DVector::from_iterator(n, new_theta.iter().zip(&theta).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, new_grad.iter().zip(&grad).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        theta = new_theta;
        value = new_value;
        grad = new_grad;
    }
}

/// `D = inf det(Σ c_i B_i^T A_i B_i) / Π (det A_i)^{c_i}` over SPD blocks,
/// by BFGS from the identity plus `cfg.restarts` random starts; the lowest
/// objective wins.
pub fn minimize_block(datum: &MultiDatum, cfg: &SolverConfig) -> Result<GaussianOptimum> {
    let report = datum.validate();
    if !report.is_empty() {
        let names: Vec<&str> = report.violations().iter().map(|v| v.name()).collect();
        if report.has(crate::datum::Violation::Kernel) {
            return Err(BlError::Singular { min_eigenvalue: 0.0 });
        }
        let weighted: f64 = datum.exponents().iter().zip(datum.dims()).map(|(c, d)| c * d as f64).sum();
        if (weighted - datum.n() as f64).abs() > HOMOGENEITY_TOL {
            let mut opt = GaussianOptimum::new(f64::NEG_INFINITY, OptimumStatus::Infeasible);
            opt.blocks = datum.dims().iter().map(|&d| DMatrix::identity(d, d)).collect();
            return Ok(opt);
        }
        return Err(BlError::Precondition(format!("invalid datum: {}", names.join(", "))));
    }
    let obj = BlockObjective::new(datum);
    let mut best: Option<BlockRun> = None;
    let mut total_iterations = 0;
    for k in 0..=cfg.restarts {
        let theta0 = if k == 0 {
            vec![0.0; obj.len]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
            (0..obj.len).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let run = bfgs(&obj, theta0, cfg)?;
        total_iterations += run.iterations;
        let better = match &best {
            None => true,
            Some(b) => run.value < b.value - 1e-12 || (run.value <= b.value + 1e-12 && run.residual < b.residual),
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.expect("at least one start");
    let mut opt = GaussianOptimum::new(run.value, run.status);
    opt.blocks = obj.precisions(&run.theta);
    if opt.blocks.iter().all(|a| a.nrows() == 1) {
        opt.lambda = opt.blocks.iter().map(|a| a[(0, 0)]).collect();
    }
    opt.stationarity_residual = run.residual;
    opt.iterations = total_iterations;
    Ok(opt)
}
