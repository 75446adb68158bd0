//! Closed-form values of the functionals on centered Gaussians
//! `G_A(x) = exp(-⟨Ax, x⟩)`.
//!
//! The J-ratio uses the quadratic form `Q = Σ c_i B_i^T A_i B_i` directly. The
//! I-ratio is computed from its own definition as an infimal quadratic form
//! (a constrained least-squares problem), never through `Q^{-1}`, so the
//! product of the two is an actual check of the duality `R = Q*`.

use nalgebra::{DMatrix, DVector};

use crate::datum::MultiDatum;
use crate::error::{BlError, Result};
use crate::linalg;

/// Relative eigenvalue threshold for declaring an aggregate form singular.
pub const SINGULAR_RTOL: f64 = 1e-14;

fn check_inputs(datum: &MultiDatum, mats: &[DMatrix<f64>]) -> Result<()> {
    if mats.len() != datum.m() {
        return Err(BlError::Malformed(format!(
            "expected {} matrices, got {}",
            datum.m(),
            mats.len()
        )));
    }
    for (i, (a, ni)) in mats.iter().zip(datum.dims()).enumerate() {
        if a.nrows() != ni || a.ncols() != ni {
            return Err(BlError::Malformed(format!(
                "matrix {} is {}x{}, expected {}x{}",
                i,
                a.nrows(),
                a.ncols(),
                ni,
                ni
            )));
        }
        linalg::check_spd(a, i)?;
    }
    Ok(())
}

fn log_det_nonsingular(m: &DMatrix<f64>) -> Result<f64> {
    let eig = linalg::symmetric_eigenvalues(m);
    let top = eig.iter().cloned().fold(0.0, f64::max);
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lo > SINGULAR_RTOL * top) {
        return Err(BlError::Singular { min_eigenvalue: lo });
    }
    Ok(eig.iter().map(|e| e.ln()).sum())
}

fn weighted_log_dets(datum: &MultiDatum, mats: &[DMatrix<f64>]) -> f64 {
    mats.iter()
        .zip(datum.exponents())
        .map(|(a, c)| c * linalg::spd_log_det(a).unwrap_or_else(|| linalg::det(a).ln()))
        .sum()
}

/// `J(G_{A_1},…,G_{A_m}) / Π (∫ G_{A_i})^{c_i}
///   = (det(Σ c_i B_i^T A_i B_i) / Π (det A_i)^{c_i})^{-1/2}`.
pub fn gaussian_j_ratio(datum: &MultiDatum, a: &[DMatrix<f64>]) -> Result<f64> {
    check_inputs(datum, a)?;
    let q = datum.aggregate(a);
    let log_det_q = log_det_nonsingular(&q)?;
    Ok((-0.5 * (log_det_q - weighted_log_dets(datum, a))).exp())
}

/// Matrix of the infimal form
/// `R(x) = inf { Σ c_i ⟨P_i x_i, x_i⟩ : x = Σ c_i B_i^T x_i }`,
/// obtained by solving the KKT system of the constrained least squares.
pub fn infimal_form(datum: &MultiDatum, precisions: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    check_inputs(datum, precisions)?;
    let n = datum.n();
    let dims = datum.dims();
    let total: usize = dims.iter().sum();
    let mut w = DMatrix::zeros(total, total);
    let mut k = DMatrix::zeros(n, total);
    let mut off = 0;
    for (i, ni) in dims.iter().enumerate() {
        let c = datum.exponent(i);
        w.view_mut((off, off), (*ni, *ni)).copy_from(&(&precisions[i] * c));
        k.view_mut((0, off), (n, *ni)).copy_from(&(datum.map(i).transpose() * c));
        off += ni;
    }
    // [ 2W  -K^T ] [X]   [0]
    // [ K    0   ] [μ] = [x]
    let size = total + n;
    let mut kkt = DMatrix::zeros(size, size);
    kkt.view_mut((0, 0), (total, total)).copy_from(&(&w * 2.0));
    kkt.view_mut((0, total), (total, n)).copy_from(&(-k.transpose()));
    kkt.view_mut((total, 0), (n, total)).copy_from(&k);
    let lu = kkt.lu();
    let mut sol = DMatrix::zeros(total, n);
    for col in 0..n {
        let mut rhs = DVector::zeros(size);
        rhs[total + col] = 1.0;
        let x = lu.solve(&rhs).ok_or(BlError::Singular { min_eigenvalue: 0.0 })?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BlError::Singular { min_eigenvalue: 0.0 });
        }
        sol.set_column(col, &x.rows(0, total));
    }
    let r = sol.transpose() * w * sol;
    Ok((&r + r.transpose()) * 0.5)
}

/// `I(G_{P_1},…,G_{P_m}) / Π (∫ G_{P_i})^{c_i} = (Π (det P_i)^{c_i} / det R)^{1/2}`
/// where `R` is the [`infimal_form`] for the precisions `P_i`.
pub fn gaussian_i_ratio(datum: &MultiDatum, precisions: &[DMatrix<f64>]) -> Result<f64> {
    let r = infimal_form(datum, precisions)?;
    let log_det_r = log_det_nonsingular(&r)?;
    Ok((0.5 * (weighted_log_dets(datum, precisions) - log_det_r)).exp())
}

/// Product of the J-ratio at `(A_i)` and the I-ratio at `(A_i^{-1})`; equals
/// one for every admissible input.
pub fn dual_quadratic_check(datum: &MultiDatum, a: &[DMatrix<f64>]) -> Result<f64> {
    let j = gaussian_j_ratio(datum, a)?;
    let inverses = a
        .iter()
        .enumerate()
        .map(|(i, m)| {
            m.clone().try_inverse().ok_or(BlError::NotSpd {
                index: i,
                min_eigenvalue: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let i = gaussian_i_ratio(datum, &inverses)?;
    Ok(j * i)
}

/// `1 × 1` blocks from scalar precisions.
pub fn scalar_blocks(values: &[f64]) -> Vec<DMatrix<f64>> {
    values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::RankOneDatum;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn prekopa_leindler(n: usize, alpha: f64) -> MultiDatum {
        MultiDatum::new(
            n,
            vec![(DMatrix::identity(n, n), alpha), (DMatrix::identity(n, n), 1.0 - alpha)],
        )
        .unwrap()
    }

    fn triple() -> MultiDatum {
        RankOneDatum::new(
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2]],
            vec![0.75, 0.75, 0.5],
        )
        .unwrap()
        .to_multi()
    }

    #[test]
    fn prekopa_leindler_identity_ratio_is_one() {
        let d = prekopa_leindler(2, 0.3);
        let a = vec![DMatrix::identity(2, 2); 2];
        assert!((gaussian_j_ratio(&d, &a).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let d = triple();
        let base = gaussian_j_ratio(&d, &scalar_blocks(&[1.0, 2.0, 3.0])).unwrap();
        let scaled = gaussian_j_ratio(&d, &scalar_blocks(&[7.0, 14.0, 21.0])).unwrap();
        assert!((base / scaled - 1.0).abs() < 1e-13);
    }

    #[test]
    fn triple_ratio_at_identity() {
        // Q = diag(3/4, 3/4) + (1/2) w w^T with w = (1,1)/√2, det Q = 15/16.
        let r = gaussian_j_ratio(&triple(), &scalar_blocks(&[1.0, 1.0, 1.0])).unwrap();
        assert!((r - (15.0f64 / 16.0).powf(-0.5)).abs() < 1e-14);
    }

    #[test]
    fn duality_on_triple() {
        let p = dual_quadratic_check(&triple(), &scalar_blocks(&[2.0, 3.0, 5.0])).unwrap();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duality_identity_inputs() {
        let d = prekopa_leindler(3, 0.6);
        let p = dual_quadratic_check(&d, &vec![DMatrix::identity(3, 3); 2]).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_spd_is_rejected() {
        let d = triple();
        let err = gaussian_j_ratio(&d, &scalar_blocks(&[1.0, -1.0, 1.0])).unwrap_err();
        assert!(matches!(err, BlError::NotSpd { index: 1, .. }));
    }

    #[test]
    fn degenerate_kernel_is_singular() {
        let d = MultiDatum::new(2, vec![(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 2.0)]).unwrap();
        assert!(matches!(
            gaussian_j_ratio(&d, &scalar_blocks(&[1.0])),
            Err(BlError::Singular { .. })
        ));
    }
}
