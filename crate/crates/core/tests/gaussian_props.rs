mod common;

use bl_core::gaussian::{dual_quadratic_check, gaussian_j_ratio, scalar_blocks};
use bl_core::linalg;
use bl_core::optimize::{minimize, LogSumExp, SolverConfig};
use bl_core::{minor_table, weighted_gram_det, MinorOptions, MultiDatum};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn direct_det(v: &[Vec<f64>], lambda: &[f64], n: usize) -> f64 {
    linalg::det(&linalg::weighted_outer_sum(v, lambda, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cauchy_binet_matches_direct_determinant(n in 1usize..=3, extra in 0usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = n + extra;
        let v = random_vectors(n, m, &mut r);
        let lambda: Vec<f64> = (0..m).map(|_| r.random_range(0.1..10.0)).collect();
        let table = bl_core::MinorTable::from_vectors(n, &v, MinorOptions::default()).unwrap();
        let a = weighted_gram_det(&table, &lambda).unwrap();
        let b = direct_det(&v, &lambda, n);
        prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn minors_are_orthogonally_invariant(n in 1usize..=3, extra in 0usize..=3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = generic_datum(n, n + extra, &mut r);
        let u = random_orthogonal(n, &mut r);
        let t1 = minor_table(&d, MinorOptions::default()).unwrap();
        let t2 = minor_table(&d.transformed(&u).unwrap(), MinorOptions::default()).unwrap();
        for (a, b) in t1.minors().iter().zip(t2.minors()) {
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn weighted_det_scales_by_power_n(n in 1usize..=3, extra in 0usize..=3, t in 0.1f64..10.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = n + extra;
        let v = random_vectors(n, m, &mut r);
        let lambda: Vec<f64> = (0..m).map(|_| r.random_range(0.1..5.0)).collect();
        let scaled: Vec<f64> = lambda.iter().map(|l| l * t).collect();
        let table = bl_core::MinorTable::from_vectors(n, &v, MinorOptions::default()).unwrap();
        let a = weighted_gram_det(&table, &scaled).unwrap();
        let b = t.powi(n as i32) * weighted_gram_det(&table, &lambda).unwrap();
        prop_assert!(rel(a, b) < 1e-12);
    }

    #[test]
    fn duality_product_is_one(n in 1usize..=3, m in 1usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        // Block dimensions in 1..=n; add blocks until the maps jointly span R^n.
        let mut blocks = Vec::new();
        let mut total = 0;
        while blocks.len() < m || total < n {
            let k = r.random_range(1..=n);
            let b = DMatrix::from_fn(k, n, |_, _| r.random_range(-1.5..1.5));
            blocks.push((b, r.random_range(0.2..1.0)));
            total += k;
        }
        let datum = MultiDatum::new(n, blocks).unwrap();
        let a: Vec<DMatrix<f64>> = datum.dims().iter().map(|&k| random_spd(k, &mut r)).collect();
        let p = dual_quadratic_check(&datum, &a).unwrap();
        prop_assert!((p - 1.0).abs() < 1e-9, "product {p}");
    }

    #[test]
    fn phi_gradient_matches_central_differences(n in 1usize..=3, extra in 0usize..=3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = generic_datum(n, n + extra, &mut r);
        let table = minor_table(&d, MinorOptions::default()).unwrap();
        let f = LogSumExp::new(&table, d.exponents());
        let x: Vec<f64> = (0..d.m()).map(|_| r.random_range(-3.0..3.0)).collect();
        let g = f.grad_phi(&x);
        let h = 1e-5;
        for i in 0..d.m() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.phi(&xp) - f.phi(&xm)) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() <= 1e-5 * g[i].abs().max(1e-3), "{} vs {}", g[i], fd);
        }
    }

    #[test]
    fn psi_is_midpoint_convex(n in 1usize..=3, extra in 0usize..=3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = generic_datum(n, n + extra, &mut r);
        let table = minor_table(&d, MinorOptions::default()).unwrap();
        let f = LogSumExp::new(&table, d.exponents());
        let x: Vec<f64> = (0..d.m()).map(|_| r.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..d.m()).map(|_| r.random_range(-5.0..5.0)).collect();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        prop_assert!(f.psi(&mid) <= 0.5 * (f.psi(&x) + f.psi(&y)) + 1e-12);
    }

    #[test]
    fn phi_shifts_by_n_along_ones(n in 1usize..=3, extra in 0usize..=3, t in -5.0f64..5.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = generic_datum(n, n + extra, &mut r);
        let table = minor_table(&d, MinorOptions::default()).unwrap();
        let f = LogSumExp::new(&table, d.exponents());
        let x: Vec<f64> = (0..d.m()).map(|_| r.random_range(-3.0..3.0)).collect();
        let xs: Vec<f64> = x.iter().map(|v| v + t).collect();
        prop_assert!((f.phi(&xs) - f.phi(&x) - n as f64 * t).abs() < 1e-10);
        // and ψ is constant along that direction, since Σc = n
        prop_assert!((f.psi(&xs) - f.psi(&x)).abs() < 1e-10);
    }

    #[test]
    fn constant_is_invariant_under_orthogonal_maps_and_relabeling(n in 1usize..=3, extra in 0usize..=3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = generic_datum(n, n + extra, &mut r);
        let cfg = SolverConfig::default();
        let base = minimize(&d, &minor_table(&d, MinorOptions::default()).unwrap(), &cfg).unwrap();
        let u = random_orthogonal(n, &mut r);
        let rot = d.transformed(&u).unwrap();
        let opt = minimize(&rot, &minor_table(&rot, MinorOptions::default()).unwrap(), &cfg).unwrap();
        prop_assert!(rel(base.d, opt.d) < 1e-8);
        let mut perm: Vec<usize> = (0..d.m()).collect();
        perm.reverse();
        let p = d.permuted(&perm).unwrap();
        let opt = minimize(&p, &minor_table(&p, MinorOptions::default()).unwrap(), &cfg).unwrap();
        prop_assert!(rel(base.d, opt.d) < 1e-8);
    }

    #[test]
    fn minimum_is_below_every_sampled_ratio(n in 1usize..=3, extra in 0usize..=3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = generic_datum(n, n + extra, &mut r);
        let opt = minimize(&d, &minor_table(&d, MinorOptions::default()).unwrap(), &SolverConfig::default()).unwrap();
        let multi = d.to_multi();
        for _ in 0..20 {
            let lambda: Vec<f64> = (0..d.m()).map(|_| r.random_range(-3.0f64..3.0).exp()).collect();
            let j = gaussian_j_ratio(&multi, &scalar_blocks(&lambda)).unwrap();
            // J-ratio = (det / Πλ^c)^{-1/2} ≤ 1/√D
            prop_assert!(j <= opt.f * (1.0 + 1e-9));
        }
    }
}

/// For a decomposition of the identity with `v_i = √c_i u_i`, the weighted
/// determinant dominates `Π λ_i^{|v_i|²}`, with equality at equal weights, and
/// `Σ_{I∋i} d_I = |v_i|²`.
#[test]
fn ball_determinant_bound_and_exponent_identity() {
    let mut r = rng(3);
    for trial in 0..100 {
        let m = r.random_range(2..=8);
        let n = r.random_range(1..=m.min(4));
        let b = bl_core::convex::random_ball_decomposition(m, n, &mut r).unwrap();
        let v = b.scaled_vectors();
        let table = bl_core::MinorTable::from_vectors(n, &v, MinorOptions::default()).unwrap();
        for i in 0..m {
            let s: f64 = table.admissible().filter(|(s, _)| s.contains(&i)).map(|(_, d)| d).sum();
            assert!((s - b.weights()[i]).abs() < 1e-10, "trial {trial}: {s} vs {}", b.weights()[i]);
        }
        let equal = vec![1.7; m];
        let lhs = direct_det(&v, &equal, n);
        assert!((lhs - 1.7f64.powi(n as i32)).abs() < 1e-10 * lhs);
        for _ in 0..10 {
            let lambda: Vec<f64> = (0..m).map(|_| r.random_range(-2.0f64..2.0).exp()).collect();
            let lhs = direct_det(&v, &lambda, n);
            let rhs: f64 = lambda.iter().zip(b.weights()).map(|(l, c)| l.powf(*c)).product();
            assert!(lhs >= rhs * (1.0 - 1e-10), "{lhs} < {rhs}");
        }
    }
}
