mod common;

use bl_core::optimize::{minimize, SolverConfig};
use bl_core::structure::{
    decompose, feasibility_with, split, ExactCheck, FeasibilityOptions, FeasibilityStatus,
};
use bl_core::{minor_table, MinorOptions, RankOneDatum};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// Vectors spread over a direct sum of random subspaces of the given
/// dimensions, each block with `dim + 1` generic vectors.
fn block_fixture(dims: &[usize], orthogonal: bool, rng: &mut impl Rng) -> (RankOneDatum, Vec<Vec<usize>>) {
    let n: usize = dims.iter().sum();
    let frame = if orthogonal {
        random_orthogonal(n, rng)
    } else {
        let mut g = random_orthogonal(n, rng);
        g += DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
        g
    };
    let mut vectors = Vec::new();
    let mut c = Vec::new();
    let mut blocks = Vec::new();
    let mut col = 0;
    for &k in dims {
        let basis = frame.columns(col, k).into_owned();
        let local = generic_datum(k, k + 1, rng);
        let mut block = Vec::new();
        for (w, ci) in local.vectors().iter().zip(local.exponents()) {
            block.push(vectors.len());
            vectors.push((&basis * DVector::from_column_slice(w)).iter().cloned().collect());
            c.push(*ci);
        }
        blocks.push(block);
        col += k;
    }
    (RankOneDatum::new(n, vectors, c).unwrap(), blocks)
}

fn canonical(blocks: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = blocks
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.sort();
            b
        })
        .collect();
    out.sort();
    out
}

#[test]
fn decompose_recovers_constructed_blocks_under_relabeling() {
    let mut r = rng(21);
    for dims in [vec![1, 1], vec![2, 1], vec![1, 1, 1], vec![2, 2], vec![1, 2]] {
        for orthogonal in [true, false] {
            let (d, blocks) = block_fixture(&dims, orthogonal, &mut r);
            assert_eq!(canonical(&decompose(&d).unwrap().blocks), canonical(&blocks));
            for _ in 0..20 {
                let mut perm: Vec<usize> = (0..d.m()).collect();
                perm.shuffle(&mut r);
                let u = random_orthogonal(d.n(), &mut r);
                let moved = d.permuted(&perm).unwrap().transformed(&u).unwrap();
                let part = decompose(&moved).unwrap();
                // position k of the relabeled datum holds original index perm[k]
                let back: Vec<Vec<usize>> =
                    part.blocks.iter().map(|b| b.iter().map(|&k| perm[k]).collect()).collect();
                assert_eq!(canonical(&back), canonical(&blocks));
            }
        }
    }
}

#[test]
fn constant_factors_over_blocks() {
    let mut r = rng(22);
    let cfg = SolverConfig::default();
    for dims in [vec![1, 1], vec![2, 1], vec![1, 1, 1], vec![2, 2]] {
        for orthogonal in [true, false] {
            let (d, _) = block_fixture(&dims, orthogonal, &mut r);
            let global = minimize(&d, &minor_table(&d, MinorOptions::default()).unwrap(), &cfg).unwrap();
            let part = decompose(&d).unwrap();
            let product: f64 = split(&d, &part)
                .unwrap()
                .iter()
                .map(|b| minimize(b, &minor_table(b, MinorOptions::default()).unwrap(), &cfg).unwrap().d)
                .product();
            let g = part.gram_factor();
            if orthogonal {
                assert!((g - 1.0).abs() < 1e-10);
            }
            assert!(rel(global.d, g * product) < 1e-6, "{} vs {} * {}", global.d, g, product);
        }
    }
}

#[test]
fn irreducible_generic_data_form_one_block() {
    let mut r = rng(23);
    for _ in 0..20 {
        let n = r.random_range(1..=3);
        let d = generic_datum(n, n + r.random_range(1..=3), &mut r);
        assert!(decompose(&d).unwrap().is_irreducible());
    }
}

fn verdict(d: &RankOneDatum, exact: ExactCheck) -> FeasibilityStatus {
    let table = minor_table(d, MinorOptions::default()).unwrap();
    let opts = FeasibilityOptions {
        exact,
        ..FeasibilityOptions::default()
    };
    feasibility_with(d, &table, opts).unwrap().status
}

#[test]
fn feasibility_matches_construction() {
    let mut r = rng(24);
    for _ in 0..30 {
        let n = r.random_range(1..=3);
        let m = n + r.random_range(1..=3);
        // interior: positive combination of every basis indicator
        let d = generic_datum(n, m, &mut r);
        let table = minor_table(&d, MinorOptions::default()).unwrap();
        let cert = feasibility_with(&d, &table, FeasibilityOptions::default()).unwrap();
        assert_eq!(cert.status, FeasibilityStatus::RelativeInterior);
        assert!(cert.weight_residual(d.exponents()).unwrap() < 1e-9);
        assert_eq!(verdict(&d, ExactCheck::Always), FeasibilityStatus::RelativeInterior);

        // outside: push one exponent above 1; x = −e_i separates
        let i = r.random_range(0..m);
        let bump = r.random_range(0.05..0.5);
        let mut c = d.exponents().to_vec();
        c[i] = 1.0 + bump;
        let rest: f64 = (0..m).filter(|&j| j != i).map(|j| c[j]).sum();
        let want = n as f64 - c[i];
        if want <= 0.0 {
            continue;
        }
        for j in 0..m {
            if j != i {
                c[j] *= want / rest;
            }
        }
        let bad = d.with_exponents(c.clone()).unwrap();
        let cert = feasibility_with(&bad, &table, FeasibilityOptions::default()).unwrap();
        assert_eq!(cert.status, FeasibilityStatus::Infeasible);
        assert!((cert.separator_margin(&table, &c).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(verdict(&bad, ExactCheck::Never), FeasibilityStatus::Infeasible);
        assert_eq!(verdict(&bad, ExactCheck::Always), FeasibilityStatus::Infeasible);
    }
}

#[test]
fn vertex_exponents_sit_on_the_boundary() {
    let mut r = rng(25);
    for _ in 0..10 {
        let d = generic_datum(2, 4, &mut r);
        let b = d.with_exponents(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(verdict(&b, ExactCheck::Never), FeasibilityStatus::Boundary);
        assert_eq!(verdict(&b, ExactCheck::Always), FeasibilityStatus::Boundary);
    }
}
