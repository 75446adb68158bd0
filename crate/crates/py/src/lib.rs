//! Python bindings: `import blpy`.

use bl_core::convex::{zonoid_bound_check, zonotope_volume, Zonotope};
use bl_core::optimize::{minimize, minimize_block, GaussianOptimum, OptimumStatus, SolverConfig};
use bl_core::structure::{achievement_certificate, decompose, feasibility};
use bl_core::{minor_table, BlError, MinorOptions, MultiDatum, RankOneDatum};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: BlError) -> PyErr {
    match e {
        BlError::IterationCap { .. } | BlError::Lp(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn datum(vectors: Vec<Vec<f64>>, c: Vec<f64>) -> PyResult<RankOneDatum> {
    let n = vectors.first().map(Vec::len).ok_or_else(|| PyValueError::new_err("no vectors"))?;
    RankOneDatum::new(n, vectors, c).map_err(py_err)
}

fn status(s: OptimumStatus) -> &'static str {
    match s {
        OptimumStatus::Converged => "converged",
        OptimumStatus::Diverged => "diverged",
        OptimumStatus::Infeasible => "infeasible",
    }
}

fn optimum_dict<'py>(py: Python<'py>, opt: &GaussianOptimum, achieved: bool) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("D", opt.d)?;
    d.set_item("E", opt.e)?;
    d.set_item("F", opt.f)?;
    d.set_item("status", status(opt.status))?;
    d.set_item("achieved", achieved)?;
    d.set_item("iterations", opt.iterations)?;
    if achieved {
        if !opt.lambda.is_empty() {
            d.set_item("lambda", opt.lambda.clone())?;
        }
        if !opt.blocks.is_empty() {
            let blocks: Vec<Vec<Vec<f64>>> = opt
                .blocks
                .iter()
                .map(|b| (0..b.nrows()).map(|r| b.row(r).iter().cloned().collect()).collect())
                .collect();
            d.set_item("blocks", blocks)?;
        }
    }
    Ok(d)
}

/// Sharp constants of a rank-one datum given by `vectors` (rows) and
/// exponents `c`.
#[pyfunction]
#[pyo3(signature = (vectors, c, max_iter=None))]
fn constant<'py>(
    py: Python<'py>,
    vectors: Vec<Vec<f64>>,
    c: Vec<f64>,
    max_iter: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = datum(vectors, c)?;
    let mut cfg = SolverConfig::default();
    if let Some(k) = max_iter {
        cfg.max_iter = k;
    }
    let table = minor_table(&d, MinorOptions::from_env()).map_err(py_err)?;
    let opt = minimize(&d, &table, &cfg).map_err(py_err)?;
    let achieved = opt.achieved() && achievement_certificate(&d, &table, &opt.lambda).map_err(py_err)?.certified;
    optimum_dict(py, &opt, achieved)
}

/// Sharp constants for general linear maps: `blocks` is a list of
/// `(matrix, c)` with each matrix given as rows of length `n`.
#[pyfunction]
fn constant_blocks<'py>(py: Python<'py>, n: usize, blocks: Vec<(Vec<Vec<f64>>, f64)>) -> PyResult<Bound<'py, PyDict>> {
    let mut out = Vec::with_capacity(blocks.len());
    for (rows, c) in blocks {
        if rows.is_empty() || rows.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err(format!("each block needs nonempty rows of length {n}")));
        }
        out.push((DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]), c));
    }
    let datum = MultiDatum::new(n, out).map_err(py_err)?;
    let opt = minimize_block(&datum, &SolverConfig::default()).map_err(py_err)?;
    optimum_dict(py, &opt, opt.achieved())
}

/// Finest adapted partition and basis-polytope membership.
#[pyfunction]
fn analyze<'py>(py: Python<'py>, vectors: Vec<Vec<f64>>, c: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let d = datum(vectors, c)?;
    let table = minor_table(&d, MinorOptions::from_env()).map_err(py_err)?;
    let part = decompose(&d).map_err(py_err)?;
    let cert = feasibility(&d, &table).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("blocks", part.blocks.clone())?;
    out.set_item("dims", part.dims())?;
    out.set_item("irreducible", part.is_irreducible())?;
    out.set_item("gram_factor", part.gram_factor())?;
    out.set_item("status", cert.status.as_str())?;
    out.set_item("epsilon", cert.epsilon)?;
    out.set_item("separator", cert.separator.clone())?;
    Ok(out)
}

/// Volume of the zonotope `Σ [-g, g]` over the generator rows.
#[pyfunction]
fn zonotope_vol(generators: Vec<Vec<f64>>) -> PyResult<f64> {
    let n = generators.first().map(Vec::len).ok_or_else(|| PyValueError::new_err("no generators"))?;
    let z = Zonotope::new(n, generators).map_err(py_err)?;
    zonotope_volume(&z).map_err(py_err)
}

/// Zonotope volume against its lower bound for a Ball decomposition.
#[pyfunction]
fn zonoid_bound<'py>(
    py: Python<'py>,
    vectors: Vec<Vec<f64>>,
    c: Vec<f64>,
    alpha: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let rep = zonoid_bound_check(&vectors, &c, &alpha).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("volume", rep.volume)?;
    out.set_item("bound", rep.bound)?;
    out.set_item("margin", rep.margin)?;
    out.set_item("satisfied", rep.satisfied)?;
    Ok(out)
}

#[pymodule]
fn blpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(constant, m)?)?;
    m.add_function(wrap_pyfunction!(constant_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(zonotope_vol, m)?)?;
    m.add_function(wrap_pyfunction!(zonoid_bound, m)?)?;
    Ok(())
}
