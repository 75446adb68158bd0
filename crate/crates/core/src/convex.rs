//! Decompositions of the identity, zonotope volumes and their lower bound,
//! and the projection form of the Brunn–Minkowski-type inequality.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::datum::{MultiDatum, RankOneDatum, RANK_RTOL};
use crate::error::{BlError, Result};
use crate::linalg;
use crate::transport::{eval_i, mass_product, Estimate, GridFunction, GridOptions, ROUNDOFF_TOL};

/// Tolerance on `‖Σ c_i u_i⊗u_i − I‖_F` for a decomposition of the identity.
pub const BALL_TOL: f64 = 1e-8;
pub const UNIT_TOL: f64 = 1e-10;

/// `‖Σ c_i u_i⊗u_i − I_n‖_F`.
pub fn ball_check(u: &[Vec<f64>], c: &[f64]) -> f64 {
    let n = u.first().map_or(0, |v| v.len());
    let s = linalg::weighted_outer_sum(u, c, n);
    (s - DMatrix::identity(n, n)).norm()
}

/// Unit vectors `u_i` and weights `c_i > 0` with `Σ c_i u_i⊗u_i = I_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallDecomposition {
    u: Vec<Vec<f64>>,
    c: Vec<f64>,
}

impl BallDecomposition {
    pub fn new(u: Vec<Vec<f64>>, c: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.len() != c.len() {
            return Err(BlError::Malformed("need as many weights as vectors".into()));
        }
        let n = u[0].len();
        if n == 0 || u.iter().any(|v| v.len() != n) {
            return Err(BlError::Malformed("vectors must share a positive dimension".into()));
        }
        if let Some(i) = u.iter().position(|v| (linalg::norm(v) - 1.0).abs() > UNIT_TOL) {
            return Err(BlError::Precondition(format!(
                "vector {i} has norm {}",
                linalg::norm(&u[i])
            )));
        }
        if c.iter().any(|w| !(*w > 0.0)) {
            return Err(BlError::Precondition("weights must be positive".into()));
        }
        let residual = ball_check(&u, &c);
        if residual > BALL_TOL {
            return Err(BlError::Precondition(format!(
                "not a decomposition of the identity (residual {residual:e})"
            )));
        }
        Ok(Self { u, c })
    }

    pub fn n(&self) -> usize {
        self.u[0].len()
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn weights(&self) -> &[f64] {
        &self.c
    }

    /// The rank-one datum `(u_i, c_i)`.
    pub fn datum(&self) -> RankOneDatum {
        RankOneDatum::new(self.n(), self.u.clone(), self.c.clone()).expect("validated shapes")
    }

    /// Vectors `√c_i u_i`.
    pub fn scaled_vectors(&self) -> Vec<Vec<f64>> {
        self.u
            .iter()
            .zip(&self.c)
            .map(|(v, w)| v.iter().map(|x| x * w.sqrt()).collect())
            .collect()
    }
}

/// Orthonormal `v_1..v_m` in `R^m` whose first `n` coordinates are
/// `√c_i u_i`: the rows `√c_i u_i` (orthonormal as rows of an `n × m`
/// matrix) are completed to an orthogonal matrix by Gram–Schmidt.
pub fn orthonormal_lift(u: &[Vec<f64>], c: &[f64]) -> Result<Vec<Vec<f64>>> {
    let residual = ball_check(u, c);
    if residual > BALL_TOL {
        return Err(BlError::Precondition(format!(
            "not a decomposition of the identity (residual {residual:e})"
        )));
    }
    let m = u.len();
    let n = u[0].len();
    let mut rows: Vec<DVector<f64>> = (0..n)
        .map(|r| DVector::from_iterator(m, (0..m).map(|i| c[i].sqrt() * u[i][r])))
        .collect();
    let mut candidates: Vec<usize> = (0..m).collect();
    while rows.len() < m {
        // Pick the standard vector with the largest component outside the
        // current span, orthogonalize twice for stability.
        let (best, vec) = candidates
            .iter()
            .map(|&k| {
                let mut e = DVector::zeros(m);
                e[k] = 1.0;
                for _ in 0..2 {
                    for r in &rows {
                        e -= r * r.dot(&e);
                    }
                }
                (k, e)
            })
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).expect("finite"))
            .expect("candidates remain");
        candidates.retain(|&k| k != best);
        rows.push(vec.normalize());
    }
    Ok((0..m).map(|i| rows.iter().map(|r| r[i]).collect()).collect())
}

/// A decomposition of the identity from the first `n` columns of a random
/// orthogonal `m × m` matrix (QR of a Gaussian matrix).
pub fn random_ball_decomposition(m: usize, n: usize, rng: &mut impl Rng) -> Result<BallDecomposition> {
    if n == 0 || n > m {
        return Err(BlError::Precondition(format!("need 0 < n ≤ m, got n = {n}, m = {m}")));
    }
    loop {
        let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let rows: Vec<Vec<f64>> = (0..m).map(|i| (0..n).map(|j| q[(i, j)]).collect()).collect();
        let norms: Vec<f64> = rows.iter().map(|r| linalg::norm(r)).collect();
        if norms.iter().any(|&s| s < 1e-6) {
            continue;
        }
        let u = rows
            .iter()
            .zip(&norms)
            .map(|(r, s)| r.iter().map(|x| x / s).collect())
            .collect();
        let c = norms.iter().map(|s| s * s).collect();
        return BallDecomposition::new(u, c);
    }
}

/// Minkowski sum of the segments `[−g_i, g_i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Zonotope {
    n: usize,
    generators: Vec<Vec<f64>>,
}

impl Zonotope {
    pub fn new(n: usize, generators: Vec<Vec<f64>>) -> Result<Self> {
        if n == 0 || generators.iter().any(|g| g.len() != n) {
            return Err(BlError::Malformed("generators must lie in R^n".into()));
        }
        Ok(Self { n, generators })
    }

    /// Generators `α_i u_i`.
    pub fn from_directions(u: &[Vec<f64>], alpha: &[f64]) -> Result<Self> {
        if u.is_empty() || u.len() != alpha.len() {
            return Err(BlError::Malformed("need one scale per direction".into()));
        }
        let generators = u
            .iter()
            .zip(alpha)
            .map(|(v, a)| v.iter().map(|x| a * x).collect())
            .collect();
        Self::new(u[0].len(), generators)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    /// Whether `x` lies in the zonotope, from the facet normals.
    fn contains(&self, x: &[f64], normals: &[(Vec<f64>, f64)]) -> bool {
        normals
            .iter()
            .all(|(nu, h)| linalg::dot(nu, x).abs() <= *h)
    }

    /// `(ν, h(ν))` for every hyperplane spanned by `n − 1` generators, with
    /// support value `h(ν) = Σ |⟨g_i, ν⟩|`.
    fn facet_normals(&self) -> Vec<(Vec<f64>, f64)> {
        let n = self.n;
        let support = |nu: &[f64]| self.generators.iter().map(|g| linalg::dot(g, nu).abs()).sum();
        if n == 1 {
            return vec![(vec![1.0], support(&[1.0]))];
        }
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for subset in linalg::combinations(self.generators.len(), n - 1) {
            let rows = DMatrix::from_fn(n - 1, n, |r, col| self.generators[subset[r]][col]);
            let nu: Vec<f64> = (0..n)
                .map(|k| {
                    let minor = rows.clone().remove_column(k);
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * linalg::det(&minor)
                })
                .collect();
            let len = linalg::norm(&nu);
            if len < 1e-12 {
                continue;
            }
            let nu: Vec<f64> = nu.iter().map(|x| x / len).collect();
            let h = support(&nu);
            out.push((nu, h));
        }
        out
    }
}

/// `2^n Σ_{|I|=n} |det (g_i)_{i∈I}|`.
pub fn zonotope_volume(z: &Zonotope) -> Result<f64> {
    let n = z.n;
    let m = linalg::columns(&z.generators, n);
    if linalg::rank(&m, RANK_RTOL) < n {
        return Err(BlError::Precondition("generators do not span R^n".into()));
    }
    let total: f64 = linalg::combinations(z.generators.len(), n)
        .iter()
        .map(|s| {
            let sub = DMatrix::from_fn(n, n, |r, c| z.generators[s[c]][r]);
            linalg::det(&sub).abs()
        })
        .sum();
    Ok(2f64.powi(n as i32) * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub volume: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub const MC_CHUNK: usize = 1 << 16;

/// Hit-or-miss volume in the bounding box; chunk `k` draws from stream `k`
/// of a ChaCha generator seeded with `seed`.
pub fn zonotope_volume_mc(z: &Zonotope, samples: usize, seed: u64) -> Result<MonteCarloEstimate> {
    let n = z.n;
    let half: Vec<f64> = (0..n)
        .map(|j| z.generators.iter().map(|g| g[j].abs()).sum())
        .collect();
    if half.iter().any(|h| !(*h > 0.0)) {
        return Err(BlError::Precondition("generators do not span R^n".into()));
    }
    let normals = z.facet_normals();
    let box_volume: f64 = half.iter().map(|h| 2.0 * h).product();
    let mut hits = 0usize;
    let mut done = 0usize;
    let mut stream = 0u64;
    let mut x = vec![0.0; n];
    while done < samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        stream += 1;
        let take = MC_CHUNK.min(samples - done);
        for _ in 0..take {
            for j in 0..n {
                x[j] = rng.random_range(-half[j]..half[j]);
            }
            if z.contains(&x, &normals) {
                hits += 1;
            }
        }
        done += take;
    }
    let p = hits as f64 / samples as f64;
    Ok(MonteCarloEstimate {
        volume: p * box_volume,
        std_error: box_volume * (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZonoidReport {
    pub volume: f64,
    pub bound: f64,
    /// `volume − bound`.
    pub margin: f64,
    pub satisfied: bool,
}

/// Compares the volume of the zonotope with generators `α_i u_i` against
/// `2^n Π (α_i/c_i)^{c_i}`.
pub fn zonoid_bound_check(u: &[Vec<f64>], c: &[f64], alpha: &[f64]) -> Result<ZonoidReport> {
    let residual = ball_check(u, c);
    if residual > BALL_TOL {
        return Err(BlError::Precondition(format!(
            "not a decomposition of the identity (residual {residual:e})"
        )));
    }
    if alpha.len() != u.len() || alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(BlError::Malformed("need one positive scale per vector".into()));
    }
    let n = u[0].len();
    let volume = zonotope_volume(&Zonotope::from_directions(u, alpha)?)?;
    let bound = zonoid_bound(n, c, alpha);
    let margin = volume - bound;
    Ok(ZonoidReport {
        volume,
        bound,
        margin,
        satisfied: volume >= bound - 1e-9,
    })
}

pub fn zonoid_bound(n: usize, c: &[f64], alpha: &[f64]) -> f64 {
    2f64.powi(n as i32) * c.iter().zip(alpha).map(|(ci, a)| (a / ci).powf(*ci)).product::<f64>()
}

/// The sup-convolution functional on the indicators of `(−α_i/c_i, α_i/c_i)`
/// for the datum `(u_i, c_i)`: its exact value is the zonotope volume and the
/// reverse inequality bounds it below by [`zonoid_bound`]. Returns the grid
/// estimate and `Π(∫f_i)^{c_i}`.
pub fn zonoid_grid_oracle(
    u: &[Vec<f64>],
    c: &[f64],
    alpha: &[f64],
    cells: usize,
    opts: &GridOptions,
) -> Result<(Estimate, f64)> {
    let datum = RankOneDatum::new(u[0].len(), u.to_vec(), c.to_vec())?.to_multi();
    let f = c
        .iter()
        .zip(alpha)
        .map(|(ci, a)| {
            let r = a / ci;
            GridFunction::on_interval(-r, r, cells, |_| 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let est = eval_i(&datum, &f, opts)?;
    Ok((est, mass_product(&datum, &f)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BmReport {
    /// Grid volume of `Σ c_i K_i`.
    pub sum_volume: Estimate,
    /// `Π Vol(K_i)^{c_i}`.
    pub product: f64,
    pub gap: f64,
    pub satisfied: bool,
}

/// `Vol(Σ c_i K_i) ≥ Π Vol_{E_i}(K_i)^{c_i}` for bodies `K_i` in subspaces
/// `E_i` (orthonormal bases as `n × k_i` columns) with `Σ c_i P_i = I`. The
/// bodies are indicator grids in the coordinates of their subspace.
pub fn bm_projection_check(
    bases: &[DMatrix<f64>],
    c: &[f64],
    bodies: &[GridFunction],
    opts: &GridOptions,
) -> Result<BmReport> {
    if bases.is_empty() || bases.len() != c.len() || bases.len() != bodies.len() {
        return Err(BlError::Malformed("need one basis, weight and body per subspace".into()));
    }
    let n = bases[0].nrows();
    if n > 3 {
        return Err(BlError::Precondition(format!("grid check needs n ≤ 3, got {n}")));
    }
    let mut sum = DMatrix::zeros(n, n);
    for (q, ci) in bases.iter().zip(c) {
        if q.nrows() != n {
            return Err(BlError::Malformed("bases live in different spaces".into()));
        }
        let gram = q.transpose() * q;
        if (gram - DMatrix::identity(q.ncols(), q.ncols())).amax() > 1e-10 {
            return Err(BlError::Precondition("basis columns are not orthonormal".into()));
        }
        sum += q * q.transpose() * *ci;
    }
    let residual = (sum - DMatrix::identity(n, n)).norm();
    if residual > BALL_TOL {
        return Err(BlError::Precondition(format!(
            "weighted projections do not sum to the identity (residual {residual:e})"
        )));
    }
    let datum = MultiDatum::new(n, bases.iter().zip(c).map(|(q, ci)| (q.transpose(), *ci)).collect())?;
    let sum_volume = eval_i(&datum, bodies, opts)?;
    let product = mass_product(&datum, bodies);
    let gap = sum_volume.value - product;
    Ok(BmReport {
        satisfied: gap >= -(sum_volume.error + ROUNDOFF_TOL * product),
        sum_volume,
        product,
        gap,
    })
}
