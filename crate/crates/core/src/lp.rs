//! Dense two-phase simplex with Bland's rule, generic over the scalar field so
//! the same code runs in `f64` and in exact rational arithmetic.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub trait LpScalar:
    Clone
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_usize(v: usize) -> Self;
    fn is_pos(&self) -> bool;
    fn is_neg(&self) -> bool;
    fn to_f64(&self) -> f64;
    fn is_nonzero(&self) -> bool {
        self.is_pos() || self.is_neg()
    }
}

/// Pivot and optimality tolerance for the floating-point instance.
pub const F64_EPS: f64 = 1e-10;

impl LpScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_usize(v: usize) -> Self {
        v as f64
    }
    fn is_pos(&self) -> bool {
        *self > F64_EPS
    }
    fn is_neg(&self) -> bool {
        *self < -F64_EPS
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl LpScalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_usize(v: usize) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn is_pos(&self) -> bool {
        Signed::is_positive(self)
    }
    fn is_neg(&self) -> bool {
        Signed::is_negative(self)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Best rational approximation of `x` within `tol` by continued fractions
/// (denominator at most `max_den`); falls back to the exact binary value.
pub fn rationalize(x: f64, tol: f64, max_den: i64) -> BigRational {
    let exact = || BigRational::from_float(x).expect("finite input");
    if !x.is_finite() {
        return exact();
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            break;
        }
        let a = a as i128;
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 > max_den as i128 {
            break;
        }
        (h0, h1) = (h1, h2);
        (k0, k1) = (k1, k2);
        if ((h1 as f64) / (k1 as f64) - x).abs() <= tol {
            return BigRational::new(BigInt::from(h1), BigInt::from(k1));
        }
        let frac = r - a as f64;
        if frac.abs() < 1e-300 {
            break;
        }
        r = 1.0 / frac;
    }
    exact()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `maximize objective·x  s.t.  rows[k]·x (rel) rhs[k],  x ≥ 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram<S> {
    pub num_vars: usize,
    pub objective: Vec<S>,
    pub rows: Vec<(Vec<S>, Relation, S)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<S> {
    Optimal { x: Vec<S>, value: S },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<S> {
    pub outcome: LpOutcome<S>,
    pub pivots: usize,
}

pub const MAX_PIVOTS: usize = 200_000;

struct Tableau<S> {
    // rows x (cols + 1); last column is the right-hand side.
    t: Vec<Vec<S>>,
    // reduced costs (len cols + 1); last entry is minus the objective value
    // convention: z-row holds c_B B^{-1} A_j - c_j and c_B B^{-1} b.
    z: Vec<S>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl<S: LpScalar> Tableau<S> {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c].clone();
        for v in self.t[r].iter_mut() {
            *v = v.clone() / p.clone();
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r || !row[c].is_nonzero() {
                continue;
            }
            let f = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                if pv.is_nonzero() {
                    *v = v.clone() - f.clone() * pv.clone();
                }
            }
            row[c] = S::zero();
        }
        if self.z[c].is_nonzero() {
            let f = self.z[c].clone();
            for (v, pv) in self.z.iter_mut().zip(&pivot_row) {
                if pv.is_nonzero() {
                    *v = v.clone() - f.clone() * pv.clone();
                }
            }
            self.z[c] = S::zero();
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs Bland's rule over columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> Result<bool, String> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(format!("pivot limit {MAX_PIVOTS} exceeded"));
            }
            let entering = (0..allowed).find(|&j| self.z[j].is_neg());
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, S)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if !row[c].is_pos() {
                    continue;
                }
                let ratio = row[self.cols].clone() / row[c].clone();
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br || (!(br < ratio) && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match best {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }
}

impl<S: LpScalar> LinearProgram<S> {
    pub fn solve(&self) -> Result<LpSolution<S>, String> {
        let n = self.num_vars;
        // Slack/surplus columns for inequalities.
        let slack_count = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let m = self.rows.len();
        let cols = n + slack_count + m; // originals, slacks, artificials
        let art0 = n + slack_count;
        let mut t = Vec::with_capacity(m);
        let mut slack = n;
        for (k, (coeffs, rel, rhs)) in self.rows.iter().enumerate() {
            let mut row = vec![S::zero(); cols + 1];
            for (j, a) in coeffs.iter().enumerate() {
                row[j] = a.clone();
            }
            match rel {
                Relation::Le => {
                    row[slack] = S::one();
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -S::one();
                    slack += 1;
                }
                Relation::Eq => {}
            }
            row[cols] = rhs.clone();
            if rhs.is_neg() || (!rhs.is_pos() && rhs.clone() < S::zero()) {
                for v in row.iter_mut() {
                    *v = -v.clone();
                }
            }
            row[art0 + k] = S::one();
            t.push(row);
        }
        // Phase 1: maximize -Σ artificials.
        let mut z = vec![S::zero(); cols + 1];
        for row in &t {
            for j in 0..art0 {
                z[j] = z[j].clone() - row[j].clone();
            }
            z[cols] = z[cols].clone() - row[cols].clone();
        }
        let mut tab = Tableau {
            t,
            z,
            basis: (art0..art0 + m).collect(),
            cols,
            pivots: 0,
        };
        tab.optimize(cols)?;
        if tab.z[cols].is_neg() {
            return Ok(LpSolution {
                outcome: LpOutcome::Infeasible,
                pivots: tab.pivots,
            });
        }
        // Drive artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.t.len() {
            if tab.basis[r] >= art0 {
                if let Some(c) = (0..art0).find(|&j| tab.t[r][j].is_nonzero()) {
                    tab.pivot(r, c);
                } else {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
            r += 1;
        }
        // Phase 2.
        let mut costs = vec![S::zero(); cols];
        for (j, c) in self.objective.iter().enumerate() {
            costs[j] = c.clone();
        }
        let mut z = vec![S::zero(); cols + 1];
        for j in 0..=cols {
            let mut acc = if j < cols { -costs[j].clone() } else { S::zero() };
            for (i, row) in tab.t.iter().enumerate() {
                let cb = costs[tab.basis[i]].clone();
                if cb.is_nonzero() && row[j].is_nonzero() {
                    acc = acc + cb * row[j].clone();
                }
            }
            z[j] = acc;
        }
        for j in art0..cols {
            z[j] = S::zero();
        }
        tab.z = z;
        if !tab.optimize(art0)? {
            return Ok(LpSolution {
                outcome: LpOutcome::Unbounded,
                pivots: tab.pivots,
            });
        }
        let mut x = vec![S::zero(); n];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < n {
                x[b] = tab.t[i][cols].clone();
            }
        }
        Ok(LpSolution {
            outcome: LpOutcome::Optimal {
                x,
                value: tab.z[cols].clone(),
            },
            pivots: tab.pivots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let lp = LinearProgram {
            num_vars: 2,
            objective: vec![3.0, 5.0],
            rows: vec![
                (vec![1.0, 0.0], Relation::Le, 4.0),
                (vec![0.0, 2.0], Relation::Le, 12.0),
                (vec![3.0, 2.0], Relation::Le, 18.0),
            ],
        };
        match lp.solve().unwrap().outcome {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 36.0).abs() < 1e-9);
                assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
            }
            o => panic!("unexpected {o:?}"),
        }
    }

    #[test]
    fn exact_equality_system_with_redundant_row() {
        // x + y = 1, 2x + 2y = 2, max x - y with x ≤ 3/4
        let lp = LinearProgram {
            num_vars: 2,
            objective: vec![q(1, 1), q(-1, 1)],
            rows: vec![
                (vec![q(1, 1), q(1, 1)], Relation::Eq, q(1, 1)),
                (vec![q(2, 1), q(2, 1)], Relation::Eq, q(2, 1)),
                (vec![q(1, 1), q(0, 1)], Relation::Le, q(3, 4)),
            ],
        };
        match lp.solve().unwrap().outcome {
            LpOutcome::Optimal { x, value } => {
                assert_eq!(value, q(1, 2));
                assert_eq!(x, vec![q(3, 4), q(1, 4)]);
            }
            o => panic!("unexpected {o:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram {
            num_vars: 1,
            objective: vec![1.0],
            rows: vec![(vec![1.0], Relation::Ge, 2.0), (vec![1.0], Relation::Le, 1.0)],
        };
        assert_eq!(lp.solve().unwrap().outcome, LpOutcome::Infeasible);
        let lp = LinearProgram {
            num_vars: 1,
            objective: vec![1.0],
            rows: vec![(vec![1.0], Relation::Ge, 2.0)],
        };
        assert_eq!(lp.solve().unwrap().outcome, LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs_rows_are_normalized() {
        // -x ≤ -1  ⇔ x ≥ 1; min x  (max -x) → 1
        let lp = LinearProgram {
            num_vars: 1,
            objective: vec![-1.0],
            rows: vec![(vec![-1.0], Relation::Le, -1.0)],
        };
        match lp.solve().unwrap().outcome {
            LpOutcome::Optimal { x, .. } => assert!((x[0] - 1.0).abs() < 1e-12),
            o => panic!("unexpected {o:?}"),
        }
    }

    #[test]
    fn rationalize_recovers_simple_fractions() {
        assert_eq!(rationalize(2.0 / 3.0, 1e-12, 1_000_000_000), q(2, 3));
        assert_eq!(rationalize(0.75, 1e-12, 1_000_000_000), q(3, 4));
        assert_eq!(rationalize(-1.5, 1e-12, 1_000_000_000), q(-3, 2));
        assert_eq!(rationalize(3.0, 1e-12, 1_000_000_000), q(3, 1));
    }
}
