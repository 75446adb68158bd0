//! Grid functions, one-dimensional monotone transport, and numerical
//! evaluation of the functionals
//! `J(f) = ∫ Π f_i^{c_i}(B_i x) dx` and
//! `I(f) = ∫ sup { Π f_i^{c_i}(y_i) : Σ c_i B_i^T y_i = x } dx`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::datum::MultiDatum;
use crate::error::{BlError, Result};
use crate::optimize::Side;

/// Densities below this fraction of the peak are treated as outside the
/// support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;
/// Mass fraction outside the evaluated box that triggers a warning.
pub const OUTSIDE_MASS_WARNING: f64 = 1e-6;
/// Relative slack for rounding when an inequality holds with equality.
pub const ROUNDOFF_TOL: f64 = 1e-12;

/// Nonnegative samples on a uniform lattice in dimension 1, 2 or 3.
///
/// Sample `k` sits at the cell center `origin + (k + ½)·cell`; samples are
/// stored row-major (last axis fastest). Off-lattice values interpolate
/// multilinearly between centers, are constant on the outer half cells and
/// vanish outside the lattice box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    origin: Vec<f64>,
    cell: Vec<f64>,
    shape: Vec<usize>,
    samples: Vec<f64>,
    total_mass: f64,
}

impl GridFunction {
    pub fn new(origin: Vec<f64>, cell: Vec<f64>, shape: Vec<usize>, samples: Vec<f64>) -> Result<Self> {
        let dim = shape.len();
        if !(1..=3).contains(&dim) {
            return Err(BlError::Malformed(format!("grid dimension must be 1, 2 or 3, got {dim}")));
        }
        if origin.len() != dim || cell.len() != dim {
            return Err(BlError::Malformed("origin, cell and shape lengths differ".into()));
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(BlError::Malformed("grid shape has an empty axis".into()));
        }
        if cell.iter().any(|h| !(*h > 0.0) || !h.is_finite()) || origin.iter().any(|o| !o.is_finite()) {
            return Err(BlError::Malformed("cell sizes must be positive and finite".into()));
        }
        let count: usize = shape.iter().product();
        if samples.len() != count {
            return Err(BlError::Malformed(format!(
                "expected {count} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(BlError::Malformed("samples must be finite and nonnegative".into()));
        }
        let volume: f64 = cell.iter().product();
        let total_mass = volume * samples.iter().sum::<f64>();
        Ok(Self {
            origin,
            cell,
            shape,
            samples,
            total_mass,
        })
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(
        origin: Vec<f64>,
        cell: Vec<f64>,
        shape: Vec<usize>,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let count: usize = shape.iter().product();
        let mut samples = Vec::with_capacity(count);
        let mut point = vec![0.0; shape.len()];
        for flat in 0..count {
            let mut rem = flat;
            for ax in (0..shape.len()).rev() {
                let k = rem % shape[ax];
                rem /= shape[ax];
                point[ax] = origin[ax] + (k as f64 + 0.5) * cell[ax];
            }
            samples.push(f(&point));
        }
        Self::new(origin, cell, shape, samples)
    }

    /// One-dimensional grid covering `[lo, hi]` with `cells` cells.
    pub fn on_interval(lo: f64, hi: f64, cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = (hi - lo) / cells as f64;
        Self::from_fn(vec![lo], vec![h], vec![cells], |p| f(p[0]))
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn cell(&self) -> &[f64] {
        &self.cell
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell.iter().product()
    }

    /// Cell volume times the sample sum; equals the integral of the
    /// interpolant.
    pub fn mass(&self) -> f64 {
        self.total_mass
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.origin.clone(),
            self.cell.clone(),
            self.shape.clone(),
            self.samples.iter().map(|v| v * s).collect(),
        )
    }

    /// Rescaled to unit mass.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.total_mass > 0.0) {
            return Err(BlError::ZeroMass);
        }
        self.scaled(1.0 / self.total_mass)
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| acc * s + i)
    }

    /// Interpolated value at `p`.
    pub fn value(&self, p: &[f64]) -> f64 {
        let d = self.dim();
        let mut lo = [0usize; 3];
        let mut w = [0.0f64; 3];
        for ax in 0..d {
            let rel = (p[ax] - self.origin[ax]) / self.cell[ax];
            let n = self.shape[ax];
            if !(rel >= 0.0 && rel <= n as f64) {
                return 0.0;
            }
            let s = rel - 0.5;
            if s <= 0.0 {
                lo[ax] = 0;
                w[ax] = 0.0;
            } else if s >= (n - 1) as f64 {
                lo[ax] = n - 1;
                w[ax] = 0.0;
            } else {
                let i = s.floor();
                lo[ax] = i as usize;
                w[ax] = s - i;
            }
        }
        let mut acc = 0.0;
        let mut idx = [0usize; 3];
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            for ax in 0..d {
                let up = (corner >> ax) & 1 == 1;
                let wa = if up { w[ax] } else { 1.0 - w[ax] };
                if wa == 0.0 {
                    weight = 0.0;
                    break;
                }
                weight *= wa;
                idx[ax] = lo[ax] + up as usize;
            }
            if weight > 0.0 {
                acc += weight * self.samples[self.flat_index(&idx[..d])];
            }
        }
        acc
    }

    /// Bounding box of the cells whose sample exceeds `threshold × peak`, and
    /// the fraction of mass outside it. `None` when the function vanishes.
    pub fn support_box(&self, threshold: f64) -> Option<(Vec<(f64, f64)>, f64)> {
        let peak = self.peak();
        if !(peak > 0.0) {
            return None;
        }
        let cut = threshold * peak;
        let d = self.dim();
        let mut lo = self.shape.clone();
        let mut hi = vec![0usize; d];
        let mut outside = 0.0;
        let mut idx = vec![0usize; d];
        for (flat, &s) in self.samples.iter().enumerate() {
            let mut rem = flat;
            for ax in (0..d).rev() {
                idx[ax] = rem % self.shape[ax];
                rem /= self.shape[ax];
            }
            if s > cut {
                for ax in 0..d {
                    lo[ax] = lo[ax].min(idx[ax]);
                    hi[ax] = hi[ax].max(idx[ax]);
                }
            } else {
                outside += s;
            }
        }
        let bounds = (0..d)
            .map(|ax| {
                (
                    self.origin[ax] + lo[ax] as f64 * self.cell[ax],
                    self.origin[ax] + (hi[ax] + 1) as f64 * self.cell[ax],
                )
            })
            .collect();
        let total: f64 = self.samples.iter().sum();
        Some((bounds, outside / total))
    }

    /// Largest sample on the lattice boundary relative to the peak.
    pub fn boundary_fraction(&self) -> f64 {
        let peak = self.peak();
        if !(peak > 0.0) {
            return 0.0;
        }
        let d = self.dim();
        let mut worst: f64 = 0.0;
        let mut idx = vec![0usize; d];
        for (flat, &s) in self.samples.iter().enumerate() {
            let mut rem = flat;
            for ax in (0..d).rev() {
                idx[ax] = rem % self.shape[ax];
                rem /= self.shape[ax];
            }
            if (0..d).any(|ax| idx[ax] == 0 || idx[ax] + 1 == self.shape[ax]) {
                worst = worst.max(s / peak);
            }
        }
        worst
    }

    /// Half resolution: adjacent sample pairs averaged along every axis (odd
    /// axes padded with a zero sample), cells doubled.
    pub fn coarsened(&self) -> Result<Self> {
        let d = self.dim();
        let shape: Vec<usize> = self.shape.iter().map(|&s| s.div_ceil(2)).collect();
        let count: usize = shape.iter().product();
        let mut samples = vec![0.0; count];
        let mut idx = vec![0usize; d];
        for (flat, &s) in self.samples.iter().enumerate() {
            let mut rem = flat;
            for ax in (0..d).rev() {
                idx[ax] = (rem % self.shape[ax]) / 2;
                rem /= self.shape[ax];
            }
            let target = idx.iter().zip(&shape).fold(0, |acc, (&i, &n)| acc * n + i);
            samples[target] += s;
        }
        let norm = (1usize << d) as f64;
        samples.iter_mut().for_each(|v| *v /= norm);
        Self::new(
            self.origin.clone(),
            self.cell.iter().map(|h| 2.0 * h).collect(),
            shape,
            samples,
        )
    }

    /// Discrete convolution of two one-dimensional functions with equal cell
    /// size; total mass is the product of the masses.
    pub fn convolve(&self, other: &GridFunction) -> Result<Self> {
        if self.dim() != 1 || other.dim() != 1 {
            return Err(BlError::Precondition("convolution needs one-dimensional grids".into()));
        }
        let h = self.cell[0];
        if (other.cell[0] - h).abs() > 1e-12 * h {
            return Err(BlError::Precondition(format!(
                "cell sizes differ: {} vs {}",
                h, other.cell[0]
            )));
        }
        let (a, b) = (&self.samples, &other.samples);
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (j, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (l, &y) in b.iter().enumerate() {
                out[j + l] += x * y * h;
            }
        }
        let origin = self.origin[0] + other.origin[0] + 0.5 * h;
        Self::new(vec![origin], vec![h], vec![out.len()], out)
    }
}

/// Nondecreasing piecewise-linear map given by breakpoints and values.
/// A repeated breakpoint encodes a jump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneMap {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl MonotoneMap {
    pub fn eval(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        let v = &self.values;
        if x <= b[0] {
            return v[0];
        }
        let last = b.len() - 1;
        if x >= b[last] {
            return v[last];
        }
        let k = b.partition_point(|&p| p <= x);
        let (x0, x1) = (b[k - 1], b[k]);
        if x1 <= x0 {
            return v[k - 1];
        }
        v[k - 1] + (v[k] - v[k - 1]) * (x - x0) / (x1 - x0)
    }

    pub fn is_monotone(&self) -> bool {
        self.breakpoints.windows(2).all(|w| w[0] <= w[1]) && self.values.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Cell edges and normalized cumulative masses of a 1D grid function, read
/// as a histogram.
struct Cdf {
    edges: Vec<f64>,
    levels: Vec<f64>,
}

impl Cdf {
    fn new(g: &GridFunction) -> Result<Self> {
        if g.dim() != 1 {
            return Err(BlError::Precondition("transport needs one-dimensional grids".into()));
        }
        let total: f64 = g.samples.iter().sum();
        if !(total > 0.0) {
            return Err(BlError::ZeroMass);
        }
        let n = g.shape[0];
        let edges = (0..=n).map(|k| g.origin[0] + k as f64 * g.cell[0]).collect();
        let mut levels = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        levels.push(0.0);
        for s in &g.samples {
            acc += s;
            levels.push((acc / total).min(1.0));
        }
        levels[n] = 1.0;
        Ok(Self { edges, levels })
    }

    /// `[first, last]` points where the CDF equals `level`.
    fn level_set(&self, level: f64) -> (f64, f64) {
        let l = &self.levels;
        let e = &self.edges;
        let n = l.len() - 1;
        let j = l.partition_point(|&v| v < level);
        let first = if j == 0 {
            e[0]
        } else if j > n {
            e[n]
        } else {
            e[j - 1] + (level - l[j - 1]) / (l[j] - l[j - 1]) * (e[j] - e[j - 1])
        };
        let k = l.partition_point(|&v| v <= level);
        let last = if k == 0 {
            e[0]
        } else if k > n {
            e[n]
        } else {
            e[k - 1] + (level - l[k - 1]) / (l[k] - l[k - 1]) * (e[k] - e[k - 1])
        };
        (first, last)
    }

    /// CDF at `x` (linear inside cells).
    fn at(&self, x: f64) -> f64 {
        let e = &self.edges;
        let n = e.len() - 1;
        if x <= e[0] {
            return 0.0;
        }
        if x >= e[n] {
            return 1.0;
        }
        let h = e[1] - e[0];
        let k = (((x - e[0]) / h).floor() as usize).min(n - 1);
        self.levels[k] + (self.levels[k + 1] - self.levels[k]) * (x - e[k]) / h
    }
}

/// `u = F_f^{-1} ∘ F_h` on the support of `h`, exact for the histogram
/// densities of the two grids: `∫_{-∞}^{u(x)} f = ∫_{-∞}^x h` after
/// normalization.
pub fn monotone_map(f: &GridFunction, h: &GridFunction) -> Result<MonotoneMap> {
    let cf = Cdf::new(f)?;
    let ch = Cdf::new(h)?;
    let mut levels: Vec<f64> = cf.levels.iter().chain(&ch.levels).cloned().collect();
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
    levels.dedup();
    let mut breakpoints = Vec::with_capacity(2 * levels.len());
    let mut values = Vec::with_capacity(2 * levels.len());
    let last = levels.len() - 1;
    for (k, &level) in levels.iter().enumerate() {
        let (xa, xb) = ch.level_set(level);
        let (ya, yb) = cf.level_set(level);
        if k != 0 {
            breakpoints.push(xa);
            values.push(ya);
        }
        if k != last && (k == 0 || xa != xb || ya != yb) {
            breakpoints.push(xb);
            values.push(yb);
        }
    }
    Ok(MonotoneMap { breakpoints, values })
}

/// Largest `|F_f(u(x)) − F_h(x)|` over the breakpoints.
pub fn intertwining_residual(map: &MonotoneMap, f: &GridFunction, h: &GridFunction) -> Result<f64> {
    let cf = Cdf::new(f)?;
    let ch = Cdf::new(h)?;
    Ok(map
        .breakpoints
        .iter()
        .zip(&map.values)
        .map(|(&x, &y)| (cf.at(y) - ch.at(x)).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Cells per axis of the integration grid for `J`.
    pub grid: usize,
    /// Cap on the number of factor-sample tuples enumerated for `I`.
    pub product_cap: u128,
    /// Cap on the number of cells of the scatter grid for `I`.
    pub scatter_cap: usize,
    pub support_threshold: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            grid: 256,
            product_cap: 200_000_000,
            scatter_cap: 20_000_000,
            support_threshold: SUPPORT_THRESHOLD,
        }
    }
}

/// A grid value with the coarse-resolution value used for its error bar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub coarse: f64,
    /// `|value − coarse|`.
    pub error: f64,
    pub warnings: Vec<String>,
}

fn check_factors(datum: &MultiDatum, f: &[GridFunction]) -> Result<()> {
    if datum.n() > 3 {
        return Err(BlError::Precondition(format!("grid evaluation needs n ≤ 3, got {}", datum.n())));
    }
    if f.len() != datum.m() {
        return Err(BlError::Malformed(format!(
            "expected {} functions, got {}",
            datum.m(),
            f.len()
        )));
    }
    for (i, (g, ni)) in f.iter().zip(datum.dims()).enumerate() {
        if g.dim() != ni {
            return Err(BlError::Malformed(format!(
                "function {} is {}-dimensional, factor needs {}",
                i,
                g.dim(),
                ni
            )));
        }
    }
    Ok(())
}

fn support_warnings(f: &[GridFunction], threshold: f64) -> Vec<String> {
    let mut out = Vec::new();
    for (i, g) in f.iter().enumerate() {
        if let Some((_, outside)) = g.support_box(threshold) {
            if outside > OUTSIDE_MASS_WARNING {
                out.push(format!("function {i}: mass fraction {outside:e} below the support threshold"));
            }
        }
        let edge = g.boundary_fraction();
        if edge > OUTSIDE_MASS_WARNING {
            out.push(format!(
                "function {i}: boundary samples reach {edge:e} of the peak; support may be cut off"
            ));
        }
    }
    out
}

fn eval_j_once(datum: &MultiDatum, f: &[GridFunction], grid: usize, threshold: f64) -> Result<f64> {
    let n = datum.n();
    let dims = datum.dims();
    let total: usize = dims.iter().sum();
    let mut stacked = DMatrix::zeros(total, n);
    let mut intervals = Vec::with_capacity(total);
    let mut row = 0;
    for (i, g) in f.iter().enumerate() {
        let Some((bounds, _)) = g.support_box(threshold) else {
            return Ok(0.0);
        };
        stacked.rows_mut(row, dims[i]).copy_from(datum.map(i));
        intervals.extend(bounds);
        row += dims[i];
    }
    let pinv = stacked
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| BlError::Precondition(e.to_string()))?;
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for j in 0..n {
        for (k, (a, b)) in intervals.iter().enumerate() {
            let p = pinv[(j, k)];
            lo[j] += (p * a).min(p * b);
            hi[j] += (p * a).max(p * b);
        }
    }
    let step: Vec<f64> = (0..n).map(|j| (hi[j] - lo[j]) / grid as f64).collect();
    if step.iter().any(|s| !(*s > 0.0)) {
        return Ok(0.0);
    }
    let volume: f64 = step.iter().product();
    let count = grid.pow(n as u32);
    let exps = datum.exponents();
    let mut acc = 0.0;
    let mut x = vec![0.0; n];
    let mut y = [0.0f64; 3];
    for flat in 0..count {
        let mut rem = flat;
        for j in (0..n).rev() {
            let k = rem % grid;
            rem /= grid;
            x[j] = lo[j] + (k as f64 + 0.5) * step[j];
        }
        let mut prod = 1.0;
        for (i, g) in f.iter().enumerate() {
            let b = datum.map(i);
            for r in 0..dims[i] {
                y[r] = (0..n).map(|j| b[(r, j)] * x[j]).sum();
            }
            let v = g.value(&y[..dims[i]]);
            if v <= 0.0 {
                prod = 0.0;
                break;
            }
            prod *= v.powf(exps[i]);
        }
        acc += prod;
    }
    Ok(acc * volume)
}

/// Midpoint-rule value of `J`, with the error bar from a run at half the
/// resolution of both the integration grid and the factor grids.
pub fn eval_j(datum: &MultiDatum, f: &[GridFunction], opts: &GridOptions) -> Result<Estimate> {
    check_factors(datum, f)?;
    let grid = opts.grid.max(2);
    let value = eval_j_once(datum, f, grid, opts.support_threshold)?;
    let coarse_f = f.iter().map(|g| g.coarsened()).collect::<Result<Vec<_>>>()?;
    let coarse = eval_j_once(datum, &coarse_f, grid / 2, opts.support_threshold)?;
    Ok(Estimate {
        value,
        coarse,
        error: (value - coarse).abs(),
        warnings: support_warnings(f, opts.support_threshold),
    })
}

struct FactorSamples {
    /// `Π`-ready values `f_i(y)^{c_i}`.
    values: Vec<f64>,
    /// Images `c_i B_i^T y` (length `n` each).
    images: Vec<Vec<f64>>,
}

fn eval_i_once(datum: &MultiDatum, f: &[GridFunction], opts: &GridOptions) -> Result<f64> {
    let n = datum.n();
    let exps = datum.exponents();
    let mut factors = Vec::with_capacity(f.len());
    let mut attempted: u128 = 1;
    let mut half = vec![0.0; n];
    for (i, g) in f.iter().enumerate() {
        let b = datum.map(i);
        let c = exps[i];
        let cut = opts.support_threshold * g.peak();
        let d = g.dim();
        let mut values = Vec::new();
        let mut images = Vec::new();
        let mut idx = vec![0usize; d];
        let mut y = vec![0.0; d];
        for (flat, &s) in g.samples.iter().enumerate() {
            if !(s > cut) {
                continue;
            }
            let mut rem = flat;
            for ax in (0..d).rev() {
                idx[ax] = rem % g.shape[ax];
                rem /= g.shape[ax];
                y[ax] = g.origin[ax] + (idx[ax] as f64 + 0.5) * g.cell[ax];
            }
            values.push(s.powf(c));
            images.push((0..n).map(|j| c * (0..d).map(|r| b[(r, j)] * y[r]).sum::<f64>()).collect());
        }
        if values.is_empty() {
            return Ok(0.0);
        }
        attempted = attempted.saturating_mul(values.len() as u128);
        for j in 0..n {
            for r in 0..d {
                half[j] += 0.5 * c * b[(r, j)].abs() * g.cell[r];
            }
        }
        factors.push(FactorSamples { values, images });
    }
    if attempted > opts.product_cap {
        return Err(BlError::GridCap {
            attempted,
            cap: opts.product_cap,
        });
    }
    // Scatter grid: cell width equal to the image box of one sample tuple,
    // centered on the extreme image point so lattice-aligned images land on
    // cell centers.
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for fs in &factors {
        for j in 0..n {
            let (a, b) = fs
                .images
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[j]), b.max(p[j])));
            lo[j] += a;
            hi[j] += b;
        }
    }
    let mut width: Vec<f64> = half.iter().map(|h| 2.0 * h).collect();
    if width.iter().any(|w| !(*w > 0.0)) {
        return Err(BlError::Precondition("factor images do not cover every axis".into()));
    }
    let cells_for = |width: &[f64]| -> Vec<usize> {
        (0..n)
            .map(|j| ((hi[j] - lo[j]) / width[j]).floor() as usize + 1)
            .collect()
    };
    let mut counts = cells_for(&width);
    while counts.iter().product::<usize>() > opts.scatter_cap {
        width.iter_mut().for_each(|w| *w *= 1.25);
        counts = cells_for(&width);
    }
    let start: Vec<f64> = (0..n).map(|j| lo[j] - 0.5 * width[j]).collect();
    let mut strides = vec![1usize; n];
    for j in (0..n.saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * counts[j + 1];
    }
    let mut cells = vec![0.0f64; counts.iter().product()];

    let m = factors.len();
    let mut pos = vec![0usize; m];
    let mut point = vec![0.0; n];
    'outer: loop {
        let mut value = 1.0;
        point.iter_mut().for_each(|p| *p = 0.0);
        for (fs, &k) in factors.iter().zip(&pos) {
            value *= fs.values[k];
            for j in 0..n {
                point[j] += fs.images[k][j];
            }
        }
        let mut flat = 0;
        for j in 0..n {
            let a = ((point[j] - start[j]) / width[j]).floor().max(0.0) as usize;
            flat += a.min(counts[j] - 1) * strides[j];
        }
        let cell = &mut cells[flat];
        *cell = cell.max(value);
        // Odometer over the product of factor samples.
        for i in (0..m).rev() {
            pos[i] += 1;
            if pos[i] < factors[i].values.len() {
                continue 'outer;
            }
            pos[i] = 0;
        }
        break;
    }
    let volume: f64 = width.iter().product();
    Ok(cells.iter().sum::<f64>() * volume)
}

/// Sup-convolution value of `I`: every tuple of factor samples sends
/// `Π f_i(y_i)^{c_i}` to the cell containing `Σ c_i B_i^T y_i`, and the
/// cellwise maxima are summed with the cell volume. Cells are as wide as the
/// image of one sample cell. The error bar compares with half-resolution
/// factors.
pub fn eval_i(datum: &MultiDatum, f: &[GridFunction], opts: &GridOptions) -> Result<Estimate> {
    check_factors(datum, f)?;
    let value = eval_i_once(datum, f, opts)?;
    let coarse_f = f.iter().map(|g| g.coarsened()).collect::<Result<Vec<_>>>()?;
    let coarse = eval_i_once(datum, &coarse_f, opts)?;
    Ok(Estimate {
        value,
        coarse,
        error: (value - coarse).abs(),
        warnings: support_warnings(f, opts.support_threshold),
    })
}

/// `Π (∫ f_i)^{c_i}`.
pub fn mass_product(datum: &MultiDatum, f: &[GridFunction]) -> f64 {
    f.iter()
        .zip(datum.exponents())
        .map(|(g, c)| g.mass().powf(c))
        .product()
}

/// Relative mismatch of factor masses beyond which `verify_fond` rescales.
pub const MASS_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FondReport {
    pub i_f: Estimate,
    pub j_h: Estimate,
    pub d: f64,
    /// `I(f) − D·J(h)`.
    pub gap: f64,
    /// Combined error bar `err_I + D·err_J`.
    pub error: f64,
    pub violation: bool,
    /// Factors whose `h_i` was rescaled to the mass of `f_i`.
    pub renormalized: Vec<usize>,
    /// Largest CDF mismatch of the transport maps `h_i → f_i` (1D factors).
    pub transport_residual: Option<f64>,
}

/// Checks `I(f) ≥ D·J(h)` for factorwise equal masses.
pub fn verify_fond(
    datum: &MultiDatum,
    f: &[GridFunction],
    h: &[GridFunction],
    d: f64,
    opts: &GridOptions,
) -> Result<FondReport> {
    check_factors(datum, f)?;
    check_factors(datum, h)?;
    let mut renormalized = Vec::new();
    let mut hs = Vec::with_capacity(h.len());
    for (i, (fi, hi)) in f.iter().zip(h).enumerate() {
        if !(fi.mass() > 0.0) || !(hi.mass() > 0.0) {
            return Err(BlError::ZeroMass);
        }
        if (fi.mass() - hi.mass()).abs() > MASS_MATCH_TOL * fi.mass() {
            log::warn!(
                "factor {i}: masses {} and {} differ; rescaling h to match",
                fi.mass(),
                hi.mass()
            );
            renormalized.push(i);
            hs.push(hi.scaled(fi.mass() / hi.mass())?);
        } else {
            hs.push(hi.clone());
        }
    }
    let transport_residual = if f.iter().all(|g| g.dim() == 1) {
        let mut worst: f64 = 0.0;
        for (fi, hi) in f.iter().zip(&hs) {
            let u = monotone_map(fi, hi)?;
            worst = worst.max(intertwining_residual(&u, fi, hi)?);
        }
        Some(worst)
    } else {
        None
    };
    let i_f = eval_i(datum, f, opts)?;
    let j_h = eval_j(datum, &hs, opts)?;
    let gap = i_f.value - d * j_h.value;
    let error = i_f.error + d * j_h.error;
    Ok(FondReport {
        violation: gap < -(error + ROUNDOFF_TOL * i_f.value.abs().max(d * j_h.value.abs())),
        i_f,
        j_h,
        d,
        gap,
        error,
        renormalized,
        transport_residual,
    })
}

/// `J / Π(∫f_i)^{c_i}` (BL side) or `I / Π(∫f_i)^{c_i}` (RBL side), with the
/// error bar scaled alike.
pub fn functional_ratio(
    datum: &MultiDatum,
    f: &[GridFunction],
    side: Side,
    opts: &GridOptions,
) -> Result<Estimate> {
    let denom = mass_product(datum, f);
    if !(denom > 0.0) {
        return Err(BlError::ZeroMass);
    }
    let est = match side {
        Side::Bl => eval_j(datum, f, opts)?,
        Side::Rbl => eval_i(datum, f, opts)?,
    };
    Ok(Estimate {
        value: est.value / denom,
        coarse: est.coarse / denom,
        error: est.error / denom,
        warnings: est.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosureReport {
    pub ratio_first: Estimate,
    pub ratio_second: Estimate,
    pub ratio_convolved: Estimate,
    pub target: f64,
    /// `|ratio_convolved − target|`.
    pub deviation: f64,
    /// `5τ + err`.
    pub allowance: f64,
    pub passed: bool,
}

/// Convolves two extremizing tuples factorwise and checks that the result
/// still attains `target` (the extremal ratio `F` for BL, `E` for RBL).
/// `tau` is the tolerance to which the input tuples attain it.
pub fn convolution_closure_check(
    datum: &MultiDatum,
    first: &[GridFunction],
    second: &[GridFunction],
    side: Side,
    target: f64,
    tau: f64,
    opts: &GridOptions,
) -> Result<ClosureReport> {
    if first.len() != second.len() {
        return Err(BlError::Malformed("tuples have different lengths".into()));
    }
    let convolved = first
        .iter()
        .zip(second)
        .map(|(a, b)| a.convolve(b))
        .collect::<Result<Vec<_>>>()?;
    let ratio_first = functional_ratio(datum, first, side, opts)?;
    let ratio_second = functional_ratio(datum, second, side, opts)?;
    let ratio_convolved = functional_ratio(datum, &convolved, side, opts)?;
    let deviation = (ratio_convolved.value - target).abs();
    let allowance = 5.0 * tau + ratio_convolved.error;
    Ok(ClosureReport {
        passed: deviation <= allowance,
        ratio_first,
        ratio_second,
        ratio_convolved,
        target,
        deviation,
        allowance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(lo: f64, hi: f64, cells: usize) -> GridFunction {
        GridFunction::on_interval(lo, hi, cells, |_| 1.0).unwrap()
    }

    #[test]
    fn mass_and_interpolation() {
        let g = GridFunction::new(vec![0.0], vec![0.5], vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.mass(), 5.0);
        assert_eq!(g.value(&[0.1]), 1.0);
        assert_eq!(g.value(&[0.5]), 1.5);
        assert_eq!(g.value(&[1.9]), 4.0);
        assert_eq!(g.value(&[2.1]), 0.0);
        assert_eq!(g.value(&[-0.1]), 0.0);
        let c = g.coarsened().unwrap();
        assert_eq!(c.samples(), &[1.5, 3.5]);
        assert_eq!(c.mass(), g.mass());
    }

    #[test]
    fn interpolation_2d() {
        let g = GridFunction::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((g.value(&[1.0, 1.0]) - 1.5).abs() < 1e-15);
        assert!((g.value(&[0.5, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn map_of_identical_functions_is_identity() {
        let g = GridFunction::on_interval(-1.0, 1.0, 40, |t| 1.0 + t * t).unwrap();
        let u = monotone_map(&g, &g).unwrap();
        for x in [-0.9, -0.3, 0.0, 0.55] {
            assert!((u.eval(x) - x).abs() < 1e-12);
        }
        assert!(intertwining_residual(&u, &g, &g).unwrap() < 1e-12);
    }

    #[test]
    fn map_between_uniforms_halves() {
        let f = uniform(0.0, 1.0, 10);
        let h = uniform(0.0, 2.0, 10);
        let u = monotone_map(&f, &h).unwrap();
        assert!(u.is_monotone());
        for x in [0.0, 0.3, 1.0, 1.7, 2.0] {
            assert!((u.eval(x) - x / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn map_with_gaps_stays_monotone() {
        let f = GridFunction::new(vec![0.0], vec![1.0], vec![4], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let h = GridFunction::new(vec![0.0], vec![1.0], vec![3], vec![1.0, 0.0, 1.0]).unwrap();
        let u = monotone_map(&f, &h).unwrap();
        assert!(u.is_monotone());
        assert!(intertwining_residual(&u, &f, &h).unwrap() < 1e-12);
    }

    #[test]
    fn convolution_mass_and_origin() {
        let a = uniform(0.0, 1.0, 10);
        let b = uniform(2.0, 3.0, 10);
        let c = a.convolve(&b).unwrap();
        assert!((c.mass() - 1.0).abs() < 1e-12);
        assert!((c.origin()[0] - 2.05).abs() < 1e-12);
        assert_eq!(c.shape(), &[19]);
    }

    fn pl(alpha: f64) -> MultiDatum {
        let id = DMatrix::from_element(1, 1, 1.0);
        MultiDatum::new(1, vec![(id.clone(), alpha), (id, 1.0 - alpha)]).unwrap()
    }

    #[test]
    fn single_factor_i_is_the_integral() {
        let d = MultiDatum::new(1, vec![(DMatrix::from_element(1, 1, 1.0), 1.0)]).unwrap();
        let f = GridFunction::on_interval(-3.0, 3.0, 200, |t| (-t * t).exp()).unwrap();
        let est = eval_i(&d, &[f.clone()], &GridOptions::default()).unwrap();
        assert!((est.value - f.mass()).abs() <= 3.0 * est.error + 1e-12, "{est:?} vs {}", f.mass());
    }

    #[test]
    fn prekopa_leindler_indicators() {
        let d = pl(0.5);
        let f = uniform(0.0, 1.0, 200);
        let est = eval_i(&d, &[f.clone(), f.clone()], &GridOptions::default()).unwrap();
        assert!((est.value - 1.0).abs() <= 3.0 * est.error, "{est:?}");
        let j = eval_j(&d, &[f.clone(), f], &GridOptions::default()).unwrap();
        assert!((j.value - 1.0).abs() <= 3.0 * j.error + 1e-9, "{j:?}");
    }

    #[test]
    fn disjoint_supports_give_zero() {
        let d = pl(0.5);
        let j = eval_j(&d, &[uniform(0.0, 1.0, 50), uniform(2.0, 3.0, 50)], &GridOptions::default()).unwrap();
        assert_eq!(j.value, 0.0);
    }

    #[test]
    fn product_cap_is_reported() {
        let d = pl(0.5);
        let opts = GridOptions {
            product_cap: 100,
            ..Default::default()
        };
        let f = uniform(0.0, 1.0, 20);
        assert!(matches!(
            eval_i(&d, &[f.clone(), f], &opts),
            Err(BlError::GridCap { attempted: 400, cap: 100 })
        ));
    }
}
