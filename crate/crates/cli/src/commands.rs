use std::path::Path;

use bl_core::convex::{ball_check, zonoid_bound_check, BallDecomposition};
use bl_core::datum::Violation;
use bl_core::gaussian::{dual_quadratic_check, scalar_blocks};
use bl_core::optimize::{
    minimize_block, minimize_multistart, uniqueness_check, young_constant, young_datum, GaussianOptimum,
    OptimumStatus, Side, SolverConfig,
};
use bl_core::structure::{
    achievement_certificate, decompose_with_table, feasibility, stationarity_certificate, AdaptedPartition,
    FeasibilityCertificate, FeasibilityStatus,
};
use bl_core::transport::{functional_ratio, verify_fond, Estimate, GridOptions, ROUNDOFF_TOL};
use bl_core::{minor_table, BlError, Datum, MinorOptions, MinorTable, RankOneDatum, ValidationReport};
use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use crate::doc::{self, grids, matrix, num, nums, DatumDocument, FunctionsDocument, YoungDocument};
use crate::error::{CliError, Exit, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VerifySide {
    #[value(name = "BL")]
    Bl,
    #[value(name = "RBL")]
    Rbl,
    #[value(name = "fond")]
    Fond,
}

/// Shared command-line settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flags {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub restarts: usize,
    pub grid: usize,
    pub seed: u64,
    pub side: VerifySide,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: None,
            restarts: 0,
            grid: GridOptions::default().grid,
            seed: 0,
            side: VerifySide::Bl,
        }
    }
}

impl Flags {
    pub fn solver(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(k) = self.max_iter {
            cfg.max_iter = k;
        }
        cfg.restarts = self.restarts;
        cfg.seed = self.seed;
        cfg
    }

    pub fn grid_options(&self) -> GridOptions {
        GridOptions {
            grid: self.grid,
            ..GridOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub document: Value,
    pub exit: Exit,
}

/// The result document skeleton: every key present, `null` until filled.
pub fn result_document(command: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), Value::from(command));
    for key in ["validation", "partition", "feasibility", "D", "E", "F", "lambda", "diagnostics", "checks"] {
        m.insert(key.into(), Value::Null);
    }
    m
}

/// Document reported alongside a failed command.
pub fn error_document(command: &str, err: &CliError) -> Value {
    let mut out = result_document(command);
    let mut diag = Map::new();
    diag.insert("error".into(), Value::from(err.to_string()));
    if let CliError::Core(BlError::IterationCap {
        iterations,
        residual,
        lambda,
    }) = err
    {
        diag.insert("status".into(), Value::from("iteration_cap"));
        diag.insert("iterations".into(), Value::from(*iterations));
        diag.insert("stationarity_residual".into(), num(*residual));
        diag.insert("last_lambda".into(), nums(lambda));
    }
    out.insert("diagnostics".into(), Value::Object(diag));
    Value::Object(out)
}

fn check(passed: bool, margin: f64) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("passed".into(), Value::from(passed));
    m.insert("margin".into(), num(margin));
    m
}

fn validation_json(report: &ValidationReport) -> Value {
    json!({
        "passed": report.is_empty(),
        "violations": report
            .findings
            .iter()
            .map(|f| json!({"name": f.violation.name(), "detail": f.detail}))
            .collect::<Vec<_>>(),
    })
}

/// Violations that make the datum unusable. A homogeneity failure is
/// reported but not fatal: the constants exist and `D = 0`.
fn fatal(report: &ValidationReport) -> bool {
    report.findings.iter().any(|f| f.violation != Violation::Homogeneity)
}

fn partition_json(p: &AdaptedPartition, labels: Option<&[String]>) -> Value {
    let mut m = Map::new();
    m.insert("blocks".into(), json!(p.blocks));
    m.insert("dims".into(), json!(p.dims()));
    m.insert("irreducible".into(), Value::from(p.is_irreducible()));
    m.insert("gram_factor".into(), num(p.gram_factor()));
    if let Some(l) = labels {
        let named: Vec<Vec<&str>> = p.blocks.iter().map(|b| b.iter().map(|&i| l[i].as_str()).collect()).collect();
        m.insert("labels".into(), json!(named));
    }
    Value::Object(m)
}

fn feasibility_json(cert: &FeasibilityCertificate, table: &MinorTable, c: &[f64]) -> Value {
    let weights = cert.weights.as_ref().map(|w| {
        Value::Array(
            w.iter()
                .filter(|(_, t)| *t > 0.0)
                .map(|(s, t)| json!({"subset": s, "t": num(*t)}))
                .collect(),
        )
    });
    json!({
        "status": cert.status.as_str(),
        "epsilon": num(cert.epsilon),
        "weights": weights,
        "weight_residual": cert.weight_residual(c).map(num),
        "separator": cert.separator.as_deref().map(nums),
        "separator_margin": cert.separator_margin(table, c).map(num),
        "exact_status": cert.exact_status.map(|s| s.as_str()),
        "note": cert.note,
    })
}

/// Validation, and for rank-one data the minor table, partition and
/// feasibility certificate.
struct Analysis {
    datum: Datum,
    rank_one: Option<(RankOneDatum, MinorTable, FeasibilityCertificate)>,
    fatal: bool,
}

fn analyze_into(doc: &DatumDocument, out: &mut Map<String, Value>) -> Result<Analysis> {
    let datum = doc.to_datum()?;
    let report = datum.validate();
    out.insert("validation".into(), validation_json(&report));
    if fatal(&report) {
        return Ok(Analysis {
            datum,
            rank_one: None,
            fatal: true,
        });
    }
    let r1 = match &datum {
        Datum::RankOne(d) => Some(d.clone()),
        Datum::Multi(d) => d.as_rank_one(),
    };
    let rank_one = match r1 {
        Some(d) => {
            let table = minor_table(&d, MinorOptions::from_env())?;
            let part = decompose_with_table(&d, &table)?;
            out.insert("partition".into(), partition_json(&part, doc.labels.as_deref()));
            let cert = feasibility(&d, &table)?;
            out.insert("feasibility".into(), feasibility_json(&cert, &table, d.exponents()));
            Some((d, table, cert))
        }
        None => None,
    };
    Ok(Analysis {
        datum,
        rank_one,
        fatal: false,
    })
}

pub fn analyze(doc: &DatumDocument, _flags: &Flags) -> Result<Outcome> {
    let mut out = result_document("analyze");
    let a = analyze_into(doc, &mut out)?;
    if a.rank_one.is_none() && !a.fatal {
        out.insert(
            "diagnostics".into(),
            json!({"note": "partition and feasibility are computed for rank-one data"}),
        );
    }
    Ok(Outcome {
        document: Value::Object(out),
        exit: if a.fatal { Exit::Validation } else { Exit::Ok },
    })
}

/// The optimum behind a constant document.
pub struct Constants {
    pub opt: GaussianOptimum,
    pub achieved: bool,
}

fn insert_constants(out: &mut Map<String, Value>, opt: &GaussianOptimum, achieved: bool) {
    out.insert("D".into(), num(opt.d));
    out.insert("E".into(), num(opt.e));
    out.insert("F".into(), num(opt.f));
    let lambda = if !achieved {
        Value::Null
    } else if opt.blocks.is_empty() {
        nums(&opt.lambda)
    } else {
        Value::Array(opt.blocks.iter().map(matrix).collect())
    };
    out.insert("lambda".into(), lambda);
}

fn status_str(s: OptimumStatus) -> &'static str {
    match s {
        OptimumStatus::Converged => "converged",
        OptimumStatus::Diverged => "diverged",
        OptimumStatus::Infeasible => "infeasible",
    }
}

fn constants_into(a: &Analysis, flags: &Flags, out: &mut Map<String, Value>) -> Result<Constants> {
    let cfg = flags.solver();
    let mut diag = Map::new();
    let mut checks = Map::new();
    let (opt, achieved) = match &a.rank_one {
        Some((d, table, cert)) => {
            let runs = minimize_multistart(d, table, &cfg)?;
            let best = runs
                .iter()
                .min_by(|x, y| x.log_d.partial_cmp(&y.log_d).expect("finite objective"))
                .expect("at least one run")
                .clone();
            let mut achieved = best.achieved();
            if achieved {
                let ac = achievement_certificate(d, table, &best.lambda)?;
                let mut c = check(ac.certified, bl_core::structure::CERTIFICATE_TOL - ac.residual);
                c.insert("residual".into(), num(ac.residual));
                checks.insert("achievement_certificate".into(), Value::Object(c));
                achieved = ac.certified;
                let p = dual_quadratic_check(&d.to_multi(), &scalar_blocks(&best.lambda))?;
                let mut c = check((p - 1.0).abs() <= 1e-9, 1e-9 - (p - 1.0).abs());
                c.insert("value".into(), num(p));
                checks.insert("duality".into(), Value::Object(c));
            }
            let converged: Vec<&GaussianOptimum> = runs.iter().filter(|r| r.achieved()).collect();
            if converged.len() >= 2 {
                let verdicts = converged[1..]
                    .iter()
                    .map(|o| uniqueness_check(d, converged[0], o))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let spread = verdicts.iter().map(|v| v.spread).fold(0.0, f64::max);
                let mut c = check(verdicts.iter().all(|v| v.scalar_related), bl_core::optimize::UNIQUENESS_TOL - spread);
                c.insert("spread".into(), num(spread));
                c.insert("r".into(), nums(&verdicts.iter().map(|v| v.r).collect::<Vec<_>>()));
                checks.insert("uniqueness".into(), Value::Object(c));
            }
            diag.insert(
                "runs".into(),
                Value::Array(
                    runs.iter()
                        .map(|r| json!({"log_D": num(r.log_d), "status": status_str(r.status), "iterations": r.iterations}))
                        .collect(),
                ),
            );
            if let Some(s) = &best.separator {
                diag.insert("separator".into(), nums(s));
            }
            if cert.status == FeasibilityStatus::Boundary {
                diag.insert("note".into(), json!(cert.note));
            }
            (best, achieved)
        }
        None => {
            let multi = match &a.datum {
                Datum::Multi(m) => m.clone(),
                Datum::RankOne(d) => d.to_multi(),
            };
            let opt = minimize_block(&multi, &cfg)?;
            let achieved = opt.achieved();
            if achieved {
                let p = dual_quadratic_check(&multi, &opt.blocks)?;
                let mut c = check((p - 1.0).abs() <= 1e-9, 1e-9 - (p - 1.0).abs());
                c.insert("value".into(), num(p));
                checks.insert("duality".into(), Value::Object(c));
            }
            (opt, achieved)
        }
    };
    diag.insert("status".into(), Value::from(status_str(opt.status)));
    diag.insert("achieved".into(), Value::from(achieved));
    diag.insert("iterations".into(), Value::from(opt.iterations));
    diag.insert("stationarity_residual".into(), num(opt.stationarity_residual));
    diag.insert("log_D".into(), num(opt.log_d));
    diag.insert("restarts".into(), Value::from(cfg.restarts));
    if opt.d > 0.0 {
        let p = opt.e * opt.f;
        checks.insert("ef_product".into(), Value::Object(check((p - 1.0).abs() <= 1e-12, 1e-12 - (p - 1.0).abs())));
    }
    insert_constants(out, &opt, achieved);
    out.insert("diagnostics".into(), Value::Object(diag));
    out.insert("checks".into(), Value::Object(checks));
    Ok(Constants { opt, achieved })
}

pub fn constant(doc: &DatumDocument, flags: &Flags) -> Result<Outcome> {
    let mut out = result_document("constant");
    let a = analyze_into(doc, &mut out)?;
    if a.fatal {
        return Ok(Outcome {
            document: Value::Object(out),
            exit: Exit::Validation,
        });
    }
    constants_into(&a, flags, &mut out)?;
    Ok(Outcome {
        document: Value::Object(out),
        exit: Exit::Ok,
    })
}

fn estimate_json(e: &Estimate) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("value".into(), num(e.value));
    m.insert("coarse".into(), num(e.coarse));
    m.insert("error".into(), num(e.error));
    m.insert("warnings".into(), json!(e.warnings));
    m
}

/// Runs the grid check selected by `flags.side` on the functions of `doc`,
/// or of `functions` when given.
pub fn verify(doc: &DatumDocument, functions: Option<&FunctionsDocument>, flags: &Flags) -> Result<Outcome> {
    let mut out = result_document("verify");
    let a = analyze_into(doc, &mut out)?;
    if a.fatal {
        return Ok(Outcome {
            document: Value::Object(out),
            exit: Exit::Validation,
        });
    }
    let fdoc = functions.unwrap_or(&doc.functions);
    if fdoc.is_empty() {
        return Err(CliError::Document("no grid functions given".into()));
    }
    let k = constants_into(&a, flags, &mut out)?;
    let multi = match &a.datum {
        Datum::Multi(m) => m.clone(),
        Datum::RankOne(d) => d.to_multi(),
    };
    let opts = flags.grid_options();
    let first = fdoc
        .first()
        .ok_or_else(|| CliError::Document("missing \"functions\"".into()))?;
    let f = grids(first)?;
    let (name, result) = match flags.side {
        VerifySide::Bl | VerifySide::Rbl => {
            let side = if flags.side == VerifySide::Bl { Side::Bl } else { Side::Rbl };
            let ratio = functional_ratio(&multi, &f, side, &opts)?;
            let (target, margin) = match side {
                Side::Bl => (k.opt.f, k.opt.f - ratio.value),
                Side::Rbl => (k.opt.e, ratio.value - k.opt.e),
            };
            let passed = (side == Side::Bl && target.is_infinite()) || within_error(margin, &ratio);
            let mut m = estimate_json(&ratio);
            m.insert("passed".into(), Value::from(passed));
            m.insert("margin".into(), num(margin));
            m.insert("target".into(), num(target));
            (if side == Side::Bl { "bl_inequality" } else { "rbl_inequality" }, m)
        }
        VerifySide::Fond => {
            let h = fdoc
                .h
                .as_deref()
                .ok_or_else(|| CliError::Document("side fond needs \"h\"".into()))?;
            let h = grids(h)?;
            let r = verify_fond(&multi, &f, &h, k.opt.d, &opts)?;
            let mut m = check(!r.violation, r.gap);
            m.insert("error".into(), num(r.error));
            m.insert("I_f".into(), Value::Object(estimate_json(&r.i_f)));
            m.insert("J_h".into(), Value::Object(estimate_json(&r.j_h)));
            m.insert("renormalized".into(), json!(r.renormalized));
            m.insert("transport_residual".into(), json!(r.transport_residual.map(num)));
            ("fond", m)
        }
    };
    let passed = result["passed"] == Value::Bool(true);
    let checks = out
        .entry("checks")
        .or_insert_with(|| Value::Object(Map::new()))
        .as_object_mut()
        .expect("checks is an object");
    checks.insert(name.into(), Value::Object(result));
    Ok(Outcome {
        document: Value::Object(out),
        exit: verdict(passed),
    })
}

/// `margin ≥ −(error + rounding)`.
fn within_error(margin: f64, est: &Estimate) -> bool {
    margin >= -(est.error + ROUNDOFF_TOL * est.value.abs().max(1.0))
}

fn verdict(passed: bool) -> Exit {
    if passed {
        Exit::Ok
    } else {
        Exit::Violation
    }
}

pub fn zonoid(doc: &DatumDocument, _flags: &Flags) -> Result<Outcome> {
    let mut out = result_document("zonoid");
    let (u, c) = match (&doc.vectors, &doc.c) {
        (Some(u), Some(c)) => (u, c),
        _ => return Err(CliError::Document("zonoid needs \"vectors\" and \"c\"".into())),
    };
    let alpha = doc
        .alpha
        .as_ref()
        .ok_or_else(|| CliError::Document("zonoid needs \"alpha\"".into()))?;
    doc.to_datum()?;
    let residual = ball_check(u, c);
    let mut diag = Map::new();
    diag.insert("ball_residual".into(), num(residual));
    if let Err(e) = BallDecomposition::new(u.clone(), c.clone()) {
        diag.insert("error".into(), Value::from(e.to_string()));
        out.insert("diagnostics".into(), Value::Object(diag));
        return Ok(Outcome {
            document: Value::Object(out),
            exit: Exit::Validation,
        });
    }
    let rep = zonoid_bound_check(u, c, alpha)?;
    let mut m = check(rep.satisfied, rep.margin);
    m.insert("volume".into(), num(rep.volume));
    m.insert("bound".into(), num(rep.bound));
    let mut checks = Map::new();
    checks.insert("zonoid_bound".into(), Value::Object(m));
    out.insert("diagnostics".into(), Value::Object(diag));
    out.insert("checks".into(), Value::Object(checks));
    Ok(Outcome {
        document: Value::Object(out),
        exit: verdict(rep.satisfied),
    })
}

pub fn young(doc: &YoungDocument, flags: &Flags) -> Result<Outcome> {
    let mut out = result_document("young");
    let m = doc.v.len();
    if m == 0 || doc.v.iter().any(|r| r.len() != m) {
        return Err(CliError::Document("\"V\" must be a nonempty square matrix".into()));
    }
    let v = DMatrix::from_fn(m, m, |i, j| doc.v[i][j]);
    let datum = young_datum(&v, doc.n, doc.r, &doc.p)?;
    let table = minor_table(&datum, MinorOptions::from_env())?;
    let opt = young_constant(&v, doc.n, doc.r, &doc.p, &flags.solver())?;
    let mut checks = Map::new();
    let mut achieved = opt.achieved();
    if achieved {
        let cert = stationarity_certificate(&table, datum.exponents(), &opt.lambda)?;
        let mut c = check(cert.certified, bl_core::structure::CERTIFICATE_TOL - cert.residual);
        c.insert("residual".into(), num(cert.residual));
        checks.insert("achievement_certificate".into(), Value::Object(c));
        achieved = cert.certified;
    }
    insert_constants(&mut out, &opt, achieved);
    out.insert(
        "diagnostics".into(),
        json!({
            "status": status_str(opt.status),
            "achieved": achieved,
            "iterations": opt.iterations,
            "stationarity_residual": num(opt.stationarity_residual),
            "log_D": num(opt.log_d),
            "exponents": nums(datum.exponents()),
        }),
    );
    out.insert("checks".into(), Value::Object(checks));
    Ok(Outcome {
        document: Value::Object(out),
        exit: Exit::Ok,
    })
}

/// Command names accepted by [`run`].
pub const COMMANDS: [&str; 5] = ["analyze", "constant", "verify", "zonoid", "young"];

/// Reads the input files and runs `command`.
pub fn run(command: &str, input: &Path, functions: Option<&Path>, flags: &Flags) -> Result<Outcome> {
    match command {
        "young" => young(&doc::read(input)?, flags),
        "analyze" | "constant" | "verify" | "zonoid" => {
            let d: DatumDocument = doc::read(input)?;
            match command {
                "analyze" => analyze(&d, flags),
                "constant" => constant(&d, flags),
                "zonoid" => zonoid(&d, flags),
                _ => {
                    let f: Option<FunctionsDocument> = functions.map(doc::read).transpose()?;
                    verify(&d, f.as_ref(), flags)
                }
            }
        }
        other => Err(CliError::Document(format!("unknown command {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(value: f64, error: f64) -> Estimate {
        Estimate {
            value,
            coarse: value,
            error,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn margins_beyond_the_error_bar_are_violations() {
        assert!(within_error(-0.01, &est(1.0, 0.02)));
        assert!(within_error(-2e-16, &est(1.0, 0.0)));
        assert!(!within_error(-0.05, &est(1.0, 0.02)));
        assert_eq!(verdict(false), Exit::Violation);
        assert_eq!(verdict(false).code(), 5);
        assert_eq!(verdict(true).code(), 0);
    }
}
