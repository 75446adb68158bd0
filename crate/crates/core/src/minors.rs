//! Squared maximal minors `d_I = det((v_i)_{i∈I})²` and the Cauchy–Binet
//! expansion `det(Σ λ_i v_i⊗v_i) = Σ_I λ_I d_I`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::datum::{RankOneDatum, RANK_RTOL};
use crate::error::{BlError, Result};
use crate::linalg;

/// Default cap on the number of enumerated subsets.
pub const DEFAULT_SUBSET_CAP: u128 = 2_000_000;
/// Environment variable overriding [`DEFAULT_SUBSET_CAP`].
pub const SUBSET_CAP_ENV: &str = "BL_SUBSET_CAP";
/// Determinants below this magnitude are treated as exactly zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-14;
/// Weights outside `[1/LOG_DOMAIN_BOUND, LOG_DOMAIN_BOUND]` switch
/// [`weighted_gram_det`] to log-domain accumulation.
pub const LOG_DOMAIN_BOUND: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinorOptions {
    pub zero_tol: f64,
    pub subset_cap: u128,
}

impl Default for MinorOptions {
    fn default() -> Self {
        Self {
            zero_tol: DEFAULT_ZERO_TOL,
            subset_cap: DEFAULT_SUBSET_CAP,
        }
    }
}

impl MinorOptions {
    /// Defaults, with the subset cap taken from `BL_SUBSET_CAP` when set to
    /// a valid integer.
    pub fn from_env() -> Self {
        let mut opts = Self::default();
        if let Ok(raw) = std::env::var(SUBSET_CAP_ENV) {
            match raw.trim().parse::<u128>() {
                Ok(cap) => opts.subset_cap = cap,
                Err(_) => log::warn!("ignoring unparsable {SUBSET_CAP_ENV}={raw}"),
            }
        }
        opts
    }
}

/// Checks `C(m, n)` against the cap.
pub fn check_subset_cap(m: usize, n: usize, cap: u128) -> Result<()> {
    let count = linalg::binomial(m, n);
    if count > cap {
        return Err(BlError::SubsetCap { m, n, count, cap });
    }
    Ok(())
}

/// One entry per `n`-subset of `0..m`, lexicographic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorTable {
    m: usize,
    n: usize,
    subsets: Vec<Vec<usize>>,
    minors: Vec<f64>,
}

impl MinorTable {
    /// Builds the table for arbitrary vectors of `R^n` (no exponents needed).
    pub fn from_vectors(n: usize, vectors: &[Vec<f64>], opts: MinorOptions) -> Result<Self> {
        let m = vectors.len();
        check_subset_cap(m, n, opts.subset_cap)?;
        let subsets = linalg::combinations(m, n);
        let minors = subsets
            .iter()
            .map(|s| {
                let sub = DMatrix::from_fn(n, n, |r, c| vectors[s[c]][r]);
                let d = linalg::det(&sub);
                if d.abs() < opts.zero_tol {
                    0.0
                } else {
                    d * d
                }
            })
            .collect();
        Ok(Self {
            m,
            n,
            subsets,
            minors,
        })
    }

    /// Builds a table directly from subsets and values (values must be
    /// nonnegative and subsets lexicographic over `0..m`).
    pub fn from_parts(m: usize, n: usize, minors: Vec<f64>) -> Result<Self> {
        let subsets = linalg::combinations(m, n);
        if subsets.len() != minors.len() {
            return Err(BlError::Malformed(format!(
                "expected {} minors, got {}",
                subsets.len(),
                minors.len()
            )));
        }
        if minors.iter().any(|d| !(*d >= 0.0)) {
            return Err(BlError::Malformed("minors must be nonnegative".into()));
        }
        Ok(Self {
            m,
            n,
            subsets,
            minors,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.minors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minors.is_empty()
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn minors(&self) -> &[f64] {
        &self.minors
    }

    /// `d_I` for a sorted subset.
    pub fn get(&self, subset: &[usize]) -> f64 {
        self.minors[linalg::subset_rank(subset, self.m)]
    }

    /// Subsets whose vectors form a basis, with their minors.
    pub fn admissible(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.subsets
            .iter()
            .zip(&self.minors)
            .filter(|(_, &d)| d > 0.0)
            .map(|(s, &d)| (s.as_slice(), d))
    }

    pub fn total(&self) -> f64 {
        self.minors.iter().sum()
    }

    /// Table of the rescaled vectors `√w_i v_i`, i.e. entries `w_I d_I`.
    pub fn scaled(&self, weights: &[f64]) -> Self {
        let minors = self
            .subsets
            .iter()
            .zip(&self.minors)
            .map(|(s, &d)| d * s.iter().map(|&i| weights[i]).product::<f64>())
            .collect();
        Self {
            m: self.m,
            n: self.n,
            subsets: self.subsets.clone(),
            minors,
        }
    }
}

/// Table of squared minors of a spanning rank-one datum.
pub fn minor_table(datum: &RankOneDatum, opts: MinorOptions) -> Result<MinorTable> {
    check_subset_cap(datum.m(), datum.n(), opts.subset_cap)?;
    let rank = linalg::rank(&datum.matrix(), RANK_RTOL);
    if rank < datum.n() {
        return Err(BlError::Precondition(format!(
            "vectors span a subspace of dimension {rank} < {}",
            datum.n()
        )));
    }
    MinorTable::from_vectors(datum.n(), datum.vectors(), opts)
}

/// `log Σ_I λ_I d_I`, evaluated with a max-shift.
pub fn log_weighted_gram_det(table: &MinorTable, lambda: &[f64]) -> Result<f64> {
    check_weights(table, lambda)?;
    let logs: Vec<f64> = lambda.iter().map(|l| l.ln()).collect();
    let terms: Vec<f64> = table
        .admissible()
        .map(|(s, d)| d.ln() + s.iter().map(|&i| logs[i]).sum::<f64>())
        .collect();
    Ok(linalg::log_sum_exp(&terms))
}

/// `det(Σ λ_i v_i⊗v_i)` through the minor expansion `Σ_I λ_I d_I`.
///
/// Falls back to log-domain accumulation when some `λ_i` is outside
/// `[1e-100, 1e100]`.
pub fn weighted_gram_det(table: &MinorTable, lambda: &[f64]) -> Result<f64> {
    check_weights(table, lambda)?;
    let extreme = lambda
        .iter()
        .any(|&l| l > LOG_DOMAIN_BOUND || l < 1.0 / LOG_DOMAIN_BOUND);
    if extreme {
        return Ok(log_weighted_gram_det(table, lambda)?.exp());
    }
    Ok(table
        .admissible()
        .map(|(s, d)| d * s.iter().map(|&i| lambda[i]).product::<f64>())
        .sum())
}

fn check_weights(table: &MinorTable, lambda: &[f64]) -> Result<()> {
    if lambda.len() != table.m() {
        return Err(BlError::Malformed(format!(
            "expected {} weights, got {}",
            table.m(),
            lambda.len()
        )));
    }
    if let Some(bad) = lambda.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(BlError::Precondition(format!("weights must be positive, got {bad}")));
    }
    Ok(())
}
