#![allow(dead_code)]

use bl_core::RankOneDatum;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_orthogonal(k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    g.qr().q()
}

pub fn random_vectors(n: usize, m: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

/// Exponents in the interior of the basis polytope: a random convex
/// combination of the indicators of all n-subsets (generic vectors make every
/// subset a basis).
pub fn interior_exponents(n: usize, m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let subsets = bl_core::linalg::combinations(m, n);
    let w: Vec<f64> = subsets.iter().map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut c = vec![0.0; m];
    for (s, wi) in subsets.iter().zip(&w) {
        for &i in s {
            c[i] += wi / total;
        }
    }
    c
}

pub fn generic_datum(n: usize, m: usize, rng: &mut impl Rng) -> RankOneDatum {
    let v = random_vectors(n, m, rng);
    let c = interior_exponents(n, m, rng);
    RankOneDatum::new(n, v, c).unwrap()
}

pub fn random_spd(k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(k, k) * 0.2
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
