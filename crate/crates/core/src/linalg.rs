//! Small dense helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{BlError, Result};

/// Determinant by LU with partial pivoting.
pub fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
/// Returns `None` when the factorization fails.
pub fn spd_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m)
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Checks symmetry (relative 1e-10) and strict positivity of the spectrum.
pub fn check_spd(m: &DMatrix<f64>, index: usize) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(BlError::NotSpd {
            index,
            min_eigenvalue: f64::NAN,
        });
    }
    let lo = min_eigenvalue(m);
    if !(lo > 0.0) {
        return Err(BlError::NotSpd {
            index,
            min_eigenvalue: lo,
        });
    }
    Ok(())
}

/// Numerical rank from singular values, relative threshold `rtol`.
pub fn rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * top).count()
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn column_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let rows = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = &svd.singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..sv.len()).filter(|&k| top > 0.0 && sv[k] > rtol * top).collect();
    let mut out = DMatrix::zeros(rows, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        out.set_column(j, &u.column(k));
    }
    out
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    // Eigen-decomposition of the Gram matrix keeps the full right basis even
    // when the matrix is wide.
    let gram = m.transpose() * m;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..cols)
        .filter(|&k| eig.eigenvalues[k] <= (rtol * rtol) * top.max(f64::MIN_POSITIVE))
        .collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        out.set_column(j, &eig.eigenvectors.column(k));
    }
    out
}

/// `C(m, n)` without overflow for the sizes we care about.
pub fn binomial(m: usize, n: usize) -> u128 {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut acc: u128 = 1;
    for k in 0..n {
        acc = acc * (m - k) as u128 / (k + 1) as u128;
    }
    acc
}

/// All `n`-subsets of `0..m` in lexicographic order.
pub fn combinations(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        out.push(idx.clone());
        let mut k = n;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if idx[k] != k + m - n {
                break;
            }
            if k == 0 {
                return out;
            }
        }
        idx[k] += 1;
        for j in k + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Lexicographic rank of a sorted `n`-subset of `0..m` (inverse of
/// [`combinations`]).
pub fn subset_rank(subset: &[usize], m: usize) -> usize {
    let n = subset.len();
    let mut rank: u128 = 0;
    let mut prev = 0usize;
    for (k, &s) in subset.iter().enumerate() {
        for v in prev..s {
            rank += binomial(m - v - 1, n - k - 1);
        }
        prev = s + 1;
    }
    rank as usize
}

/// Matrix whose columns are the given vectors.
pub fn columns(vectors: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, vectors.len(), |r, c| vectors[c][r])
}

/// Sum of `w_i v_i v_i^T`.
pub fn weighted_outer_sum(vectors: &[Vec<f64>], weights: &[f64], dim: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(dim, dim);
    for (v, &w) in vectors.iter().zip(weights) {
        for r in 0..dim {
            for c in 0..dim {
                acc[(r, c)] += w * v[r] * v[c];
            }
        }
    }
    acc
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stable `log(sum(exp(terms)))`; `-inf` for an empty slice.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_are_lexicographic_and_ranked() {
        let all = combinations(5, 3);
        assert_eq!(all.len(), 10);
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all[9], vec![2, 3, 4]);
        for (k, s) in all.iter().enumerate() {
            assert_eq!(subset_rank(s, 5), k);
        }
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(40, 20), 137_846_528_820);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        let ns = null_space(&m, 1e-9);
        assert_eq!(ns.ncols(), 2);
        assert!((m * ns).amax() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_shifted() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
