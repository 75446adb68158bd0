//! Input documents and canonical JSON output.

use std::path::Path;

use bl_core::optimize::GaussianDescriptor;
use bl_core::transport::GridFunction;
use bl_core::{Datum, MultiDatum, RankOneDatum};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize)]
pub struct BlockDocument {
    pub matrix: Vec<Vec<f64>>,
    pub c: f64,
}

/// A datum, optionally carrying zonotope scales or grid functions.
#[derive(Debug, Clone, Deserialize)]
pub struct DatumDocument {
    pub n: usize,
    #[serde(default)]
    pub vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub blocks: Option<Vec<BlockDocument>>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, flatten)]
    pub functions: FunctionsDocument,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct GaussianDocument {
    #[serde(default = "one")]
    pub amplitude: f64,
    pub precision: f64,
    #[serde(default)]
    pub center: f64,
}

fn one() -> f64 {
    1.0
}

/// A grid function: raw samples, or a Gaussian or indicator sampled on an
/// interval.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridDocument {
    Samples {
        origin: Vec<f64>,
        cell: Vec<f64>,
        shape: Vec<usize>,
        samples: Vec<f64>,
    },
    Gaussian {
        interval: [f64; 2],
        cells: usize,
        gaussian: GaussianDocument,
    },
    Indicator {
        interval: [f64; 2],
        cells: usize,
        indicator: [f64; 2],
    },
}

/// `functions` for the BL and RBL sides; `f` and `h` for the transport
/// check (`functions` doubles as `f`).
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FunctionsDocument {
    #[serde(default)]
    pub functions: Option<Vec<GridDocument>>,
    #[serde(default)]
    pub f: Option<Vec<GridDocument>>,
    #[serde(default)]
    pub h: Option<Vec<GridDocument>>,
}

impl FunctionsDocument {
    pub fn is_empty(&self) -> bool {
        self.functions.is_none() && self.f.is_none() && self.h.is_none()
    }

    pub fn first(&self) -> Option<&[GridDocument]> {
        self.functions.as_deref().or(self.f.as_deref())
    }
}

/// Orthogonal `V` with the Young exponents.
#[derive(Debug, Clone, Deserialize)]
pub struct YoungDocument {
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub n: usize,
    pub r: f64,
    pub p: Vec<f64>,
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(path, &text)
}

pub fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })
}

/// serde_json appends " at line L column C"; the error carries those apart.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg.to_string(),
    }
}

impl DatumDocument {
    pub fn to_datum(&self) -> Result<Datum> {
        let n = self.n;
        if n == 0 {
            return Err(CliError::Document("n must be positive".into()));
        }
        match (&self.vectors, &self.blocks) {
            (Some(vectors), None) => {
                let c = self
                    .c
                    .as_ref()
                    .ok_or_else(|| CliError::Document("\"vectors\" needs \"c\"".into()))?;
                if c.len() != vectors.len() {
                    return Err(CliError::Document(format!(
                        "{} vectors but {} exponents",
                        vectors.len(),
                        c.len()
                    )));
                }
                if let Some(i) = vectors.iter().position(|v| v.len() != n) {
                    return Err(CliError::Document(format!(
                        "vector {i} has length {}, expected {n}",
                        vectors[i].len()
                    )));
                }
                self.check_labels(vectors.len())?;
                Ok(Datum::RankOne(RankOneDatum::new(n, vectors.clone(), c.clone())?))
            }
            (None, Some(blocks)) => {
                if self.c.is_some() {
                    return Err(CliError::Document("exponents of blocks go inside each block".into()));
                }
                let mut out = Vec::with_capacity(blocks.len());
                for (i, b) in blocks.iter().enumerate() {
                    if b.matrix.is_empty() {
                        return Err(CliError::Document(format!("block {i} has no rows")));
                    }
                    if let Some(r) = b.matrix.iter().position(|row| row.len() != n) {
                        return Err(CliError::Document(format!(
                            "block {i} row {r} has length {}, expected {n}",
                            b.matrix[r].len()
                        )));
                    }
                    let rows = b.matrix.len();
                    let m = DMatrix::from_fn(rows, n, |r, col| b.matrix[r][col]);
                    out.push((m, b.c));
                }
                self.check_labels(blocks.len())?;
                Ok(Datum::Multi(MultiDatum::new(n, out)?))
            }
            (Some(_), Some(_)) => Err(CliError::Document("give either \"vectors\" or \"blocks\", not both".into())),
            (None, None) => Err(CliError::Document("missing \"vectors\" or \"blocks\"".into())),
        }
    }

    fn check_labels(&self, m: usize) -> Result<()> {
        match &self.labels {
            Some(l) if l.len() != m => Err(CliError::Document(format!("{} labels for {m} factors", l.len()))),
            _ => Ok(()),
        }
    }
}

impl GridDocument {
    pub fn to_grid(&self) -> Result<GridFunction> {
        let g = match self {
            GridDocument::Samples {
                origin,
                cell,
                shape,
                samples,
            } => GridFunction::new(origin.clone(), cell.clone(), shape.clone(), samples.clone())?,
            GridDocument::Gaussian {
                interval,
                cells,
                gaussian,
            } => {
                let g = GaussianDescriptor {
                    amplitude: gaussian.amplitude,
                    precision: gaussian.precision,
                    center: gaussian.center,
                };
                check_interval(interval, *cells)?;
                GridFunction::on_interval(interval[0], interval[1], *cells, |t| g.eval(t))?
            }
            GridDocument::Indicator {
                interval,
                cells,
                indicator,
            } => {
                check_interval(interval, *cells)?;
                let [a, b] = *indicator;
                GridFunction::on_interval(interval[0], interval[1], *cells, |t| {
                    if a <= t && t <= b {
                        1.0
                    } else {
                        0.0
                    }
                })?
            }
        };
        Ok(g)
    }
}

fn check_interval(interval: &[f64; 2], cells: usize) -> Result<()> {
    if !(interval[1] > interval[0]) || cells == 0 {
        return Err(CliError::Document(format!(
            "need lo < hi and at least one cell, got [{}, {}] with {cells}",
            interval[0], interval[1]
        )));
    }
    Ok(())
}

pub fn grids(docs: &[GridDocument]) -> Result<Vec<GridFunction>> {
    docs.iter().map(GridDocument::to_grid).collect()
}

/// A finite float as a JSON number; infinities and NaN as strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|r| nums(&m.row(r).iter().cloned().collect::<Vec<_>>())).collect())
}

/// Sorted keys, shortest round-trip floats, two-space indentation and a
/// trailing newline.
pub fn render(doc: &Value) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("values serialize");
    s.push('\n');
    s
}
