mod common;

use bl_core::optimize::{extremizer_family, minimize, GaussianDescriptor, Side, SolverConfig};
use bl_core::transport::{
    convolution_closure_check, eval_i, eval_j, functional_ratio, intertwining_residual, mass_product,
    monotone_map, verify_fond, GridFunction, GridOptions,
};
use bl_core::{minor_table, MinorOptions, MultiDatum, RankOneDatum};
use common::*;
use rand::Rng;

fn triple() -> RankOneDatum {
    let s = 3f64.sqrt() / 2.0;
    RankOneDatum::new(2, vec![vec![1.0, 0.0], vec![-0.5, s], vec![-0.5, -s]], vec![2.0 / 3.0; 3]).unwrap()
}

/// Sum of a few Gaussian bumps sampled on `[-6, 6]`.
fn random_density(cells: usize, rng: &mut impl Rng) -> GridFunction {
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| (rng.random_range(0.2..2.0), rng.random_range(-1.5..1.5), rng.random_range(0.5..3.0)))
        .collect();
    GridFunction::on_interval(-6.0, 6.0, cells, |t| {
        bumps.iter().map(|(a, mu, p)| a * (-p * (t - mu) * (t - mu)).exp()).sum()
    })
    .unwrap()
}

fn sample(g: &GaussianDescriptor, h: f64, half_cells: usize) -> GridFunction {
    let c = (g.center / h).round() * h;
    let l = half_cells as f64 * h;
    GridFunction::on_interval(c - l, c + l, 2 * half_cells, |t| g.eval(t)).unwrap()
}

/// Gauss–Legendre on `[a, b]` with three nodes.
fn gauss3(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let m = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let k = (0.6f64).sqrt();
    r * (5.0 * f(m - r * k) + 8.0 * f(m) + 5.0 * f(m + r * k)) / 9.0
}

fn edges(g: &GridFunction) -> Vec<f64> {
    (0..=g.shape()[0]).map(|k| g.origin()[0] + k as f64 * g.cell()[0]).collect()
}

fn histogram(g: &GridFunction, x: f64) -> f64 {
    let k = ((x - g.origin()[0]) / g.cell()[0]).floor();
    if k < 0.0 || k >= g.shape()[0] as f64 {
        return 0.0;
    }
    g.samples()[k as usize]
}

#[test]
fn monotone_map_pushes_h_forward_to_f() {
    let mut r = rng(31);
    for _ in 0..20 {
        let f = random_density(300, &mut r).normalized().unwrap();
        let h = random_density(170, &mut r).normalized().unwrap();
        let u = monotone_map(&f, &h).unwrap();
        assert!(u.is_monotone());
        assert!(intertwining_residual(&u, &f, &h).unwrap() < 1e-12);
        let (w, s) = (r.random_range(0.5..3.0), r.random_range(-2.0..2.0));
        let b = |t: f64| 1.0 / (1.0 + (w * (t - s)).powi(2));
        // ∫ b(u(x)) h(x) dx, splitting at every kink of u and every cell edge of h
        let mut cuts: Vec<f64> = edges(&h).into_iter().chain(u.breakpoints.iter().cloned()).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let lhs: f64 = cuts
            .windows(2)
            .filter(|p| p[1] > p[0])
            .map(|p| {
                let mid = 0.5 * (p[0] + p[1]);
                histogram(&h, mid) * gauss3(p[0], p[1], |x| b(u.eval(x)))
            })
            .sum();
        let rhs: f64 = edges(&f)
            .windows(2)
            .map(|p| histogram(&f, 0.5 * (p[0] + p[1])) * gauss3(p[0], p[1], b))
            .sum();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }
}

#[test]
fn functionals_respect_pointwise_domination() {
    let mut r = rng(32);
    let d = triple().to_multi();
    let opts = GridOptions { grid: 96, ..GridOptions::default() };
    for _ in 0..5 {
        let f: Vec<GridFunction> = (0..3).map(|_| random_density(96, &mut r)).collect();
        let g: Vec<GridFunction> = f
            .iter()
            .map(|fi| {
                let extra = random_density(96, &mut r);
                GridFunction::new(
                    fi.origin().to_vec(),
                    fi.cell().to_vec(),
                    fi.shape().to_vec(),
                    fi.samples().iter().zip(extra.samples()).map(|(a, b)| a + 0.3 * b).collect(),
                )
                .unwrap()
            })
            .collect();
        let (jf, jg) = (eval_j(&d, &f, &opts).unwrap(), eval_j(&d, &g, &opts).unwrap());
        assert!(jf.value <= jg.value + jf.error + jg.error);
        let (i_f, i_g) = (eval_i(&d, &f, &opts).unwrap(), eval_i(&d, &g, &opts).unwrap());
        assert!(i_f.value <= i_g.value + i_f.error + i_g.error);
    }
}

#[test]
fn refinement_stays_within_error_bars() {
    let mut r = rng(33);
    let d = triple().to_multi();
    let trials = 20;
    let (mut ok_j, mut ok_i) = (0, 0);
    for _ in 0..trials {
        let seed = r.random::<u64>();
        let coarse: Vec<GridFunction> = {
            let mut s = rng(seed);
            (0..3).map(|_| random_density(64, &mut s)).collect()
        };
        let fine: Vec<GridFunction> = {
            let mut s = rng(seed);
            (0..3).map(|_| random_density(128, &mut s)).collect()
        };
        let o1 = GridOptions { grid: 64, ..GridOptions::default() };
        let o2 = GridOptions { grid: 128, ..GridOptions::default() };
        let (a, b) = (eval_j(&d, &coarse, &o1).unwrap(), eval_j(&d, &fine, &o2).unwrap());
        ok_j += ((a.value - b.value).abs() < a.error) as usize;
        let (a, b) = (eval_i(&d, &coarse, &o1).unwrap(), eval_i(&d, &fine, &o2).unwrap());
        ok_i += ((a.value - b.value).abs() < a.error) as usize;
    }
    assert!(ok_j * 100 >= 95 * trials, "J: {ok_j}/{trials}");
    assert!(ok_i * 100 >= 95 * trials, "I: {ok_i}/{trials}");
}

#[test]
fn random_densities_obey_both_inequalities() {
    let mut r = rng(34);
    let opts = GridOptions { grid: 128, ..GridOptions::default() };
    let data = vec![
        triple(),
        RankOneDatum::new(1, vec![vec![1.0], vec![1.0]], vec![0.3, 0.7]).unwrap(),
        RankOneDatum::new(2, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![0.75, 0.75, 0.5]).unwrap(),
    ];
    for d in data {
        let opt = minimize(&d, &minor_table(&d, MinorOptions::default()).unwrap(), &SolverConfig::default()).unwrap();
        let multi = d.to_multi();
        for _ in 0..4 {
            let f: Vec<GridFunction> = (0..d.m()).map(|_| random_density(128, &mut r)).collect();
            let p = mass_product(&multi, &f);
            let j = eval_j(&multi, &f, &opts).unwrap();
            assert!(j.value <= opt.f * p + j.error, "{} > {}", j.value, opt.f * p);
            let i = eval_i(&multi, &f, &opts).unwrap();
            assert!(i.value >= opt.e * p - i.error, "{} < {}", i.value, opt.e * p);
        }
    }
}

#[test]
fn gaussian_extremizers_attain_the_constants() {
    let d = RankOneDatum::new(2, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![0.75, 0.75, 0.5]).unwrap();
    let opt = minimize(&d, &minor_table(&d, MinorOptions::default()).unwrap(), &SolverConfig::default()).unwrap();
    let multi = d.to_multi();
    let opts = GridOptions { grid: 192, ..GridOptions::default() };
    let h = 0.05;
    // coherent translations on the BL side
    let tuple: Vec<GridFunction> = extremizer_family(&d, &opt, Side::Bl, 1.0, &[0.4, -0.3])
        .unwrap()
        .iter()
        .map(|g| sample(g, h, 160))
        .collect();
    let ratio = functional_ratio(&multi, &tuple, Side::Bl, &opts).unwrap();
    assert!((ratio.value - opt.f).abs() <= 3.0 * ratio.error + 1e-6, "{ratio:?} vs {}", opt.f);
    // arbitrary translations on the RBL side
    let tuple: Vec<GridFunction> = extremizer_family(&d, &opt, Side::Rbl, 1.0, &[0.5, -0.7, 0.2])
        .unwrap()
        .iter()
        .map(|g| sample(g, h, 160))
        .collect();
    let ratio = functional_ratio(&multi, &tuple, Side::Rbl, &opts).unwrap();
    assert!((ratio.value - opt.e).abs() <= 3.0 * ratio.error + 1e-6, "{ratio:?} vs {}", opt.e);
}

#[test]
fn incoherent_translations_lose_on_the_bl_side() {
    let d = triple();
    let opt = minimize(&d, &minor_table(&d, MinorOptions::default()).unwrap(), &SolverConfig::default()).unwrap();
    let mut fam = extremizer_family(&d, &opt, Side::Bl, 1.0, &[0.0, 0.0]).unwrap();
    // shift the centers by (1, 1, 1): no y has ⟨y, u_i⟩ = 1 for all three
    for g in &mut fam {
        g.center += 1.0;
    }
    let tuple: Vec<GridFunction> = fam.iter().map(|g| sample(g, 0.05, 160)).collect();
    let ratio = functional_ratio(&d.to_multi(), &tuple, Side::Bl, &GridOptions { grid: 192, ..GridOptions::default() }).unwrap();
    assert!(ratio.value + ratio.error < opt.f - 0.05, "{ratio:?}");
}

#[test]
fn convolution_keeps_bl_extremizers() {
    let d = triple();
    let opt = minimize(&d, &minor_table(&d, MinorOptions::default()).unwrap(), &SolverConfig::default()).unwrap();
    let multi = d.to_multi();
    let opts = GridOptions { grid: 192, ..GridOptions::default() };
    let h = 0.05;
    let tuple = |a: f64| -> Vec<GridFunction> {
        extremizer_family(&d, &opt, Side::Bl, a, &[0.0, 0.0]).unwrap().iter().map(|g| sample(g, h, 100)).collect()
    };
    let (first, second) = (tuple(1.0), tuple(1.4));
    let r1 = functional_ratio(&multi, &first, Side::Bl, &opts).unwrap();
    let r2 = functional_ratio(&multi, &second, Side::Bl, &opts).unwrap();
    let tau = (r1.value - opt.f).abs().max((r2.value - opt.f).abs()) + r1.error.max(r2.error);
    let report = convolution_closure_check(&multi, &first, &second, Side::Bl, opt.f, tau, &opts).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn fond_gap_is_nonnegative_for_random_densities() {
    let mut r = rng(35);
    let d = triple();
    let multi: MultiDatum = d.to_multi();
    let opts = GridOptions { grid: 96, ..GridOptions::default() };
    for _ in 0..4 {
        let f: Vec<GridFunction> = (0..3).map(|_| random_density(96, &mut r).normalized().unwrap()).collect();
        let h: Vec<GridFunction> = (0..3).map(|_| random_density(96, &mut r).normalized().unwrap()).collect();
        let report = verify_fond(&multi, &f, &h, 1.0, &opts).unwrap();
        assert!(!report.violation, "{report:?}");
        assert!(report.renormalized.is_empty());
        assert!(report.transport_residual.unwrap() < 1e-9);
    }
}

#[test]
fn holder_chain_on_the_line() {
    let mut r = rng(36);
    let d = RankOneDatum::new(1, vec![vec![1.0], vec![1.0]], vec![0.4, 0.6]).unwrap().to_multi();
    let opts = GridOptions { grid: 256, ..GridOptions::default() };
    for _ in 0..5 {
        let f: Vec<GridFunction> = (0..2).map(|_| random_density(256, &mut r)).collect();
        let p = mass_product(&d, &f);
        let i = eval_i(&d, &f, &opts).unwrap();
        let j = eval_j(&d, &f, &opts).unwrap();
        assert!(i.value >= p - i.error && p >= j.value - j.error, "{} {} {}", i.value, p, j.value);
    }
}
