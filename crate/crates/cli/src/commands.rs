//! The `test`, `ci` and `simstudy` commands as library functions returning
//! JSON reports.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use coxhoa::bootstrap::{bootstrap_pvalue, invert_ci, CiOptions, DEFAULT_B};
use coxhoa::fit::{first_order_pvalues, fit_root, wald_se, FitOptions, HypothesisSpec};
use coxhoa::hoa::{fixed_riskset_rstar, skovgaard_from_data, DEFAULT_R};
use coxhoa::survdata::{load_dataset, rank_reduce, CsvFormat, RankData, SurvivalSample};
use coxhoa::{Error, LogLinear, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::study::{run_study, write_records_csv, Method, StudyConfig};

pub const SCHEMA_VERSION: &str = "1.0";
pub const DEFAULT_SEED: u64 = 1;

/// Exit status for an error: 2 for bad inputs, 3 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

pub fn error_report(e: &Error) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "version": env!("CARGO_PKG_VERSION"),
        "error": { "kind": e.kind(), "message": e.to_string() },
        "exit_code": exit_code(e),
    })
}

fn envelope(command: &str, seed: u64, inputs: Value, result: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "tool": "coxhoa",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "inputs": inputs,
        "result": result,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

#[derive(Debug, Clone)]
pub struct DataArgs {
    pub data: PathBuf,
    /// Covariate name or 0-based index.
    pub psi: String,
    pub psi0: f64,
}

fn load(args: &DataArgs) -> Result<(SurvivalSample<f64>, RankData<f64>, usize, HypothesisSpec<f64>)> {
    let file = File::open(&args.data)?;
    let sample = load_dataset::<f64, _>(file, CsvFormat::default())?;
    let idx = sample
        .covariate_index(&args.psi)
        .ok_or_else(|| Error::Validation(format!("unknown covariate '{}'", args.psi)))?;
    if !args.psi0.is_finite() {
        return Err(Error::Validation("psi0 must be finite".into()));
    }
    let rank = rank_reduce(&sample)?;
    let spec = HypothesisSpec::coordinate(sample.p(), idx, args.psi0)?;
    Ok((sample, rank, idx, spec))
}

fn data_inputs(args: &DataArgs, sample: &SurvivalSample<f64>, idx: usize) -> Value {
    json!({
        "data": args.data.display().to_string(),
        "psi": sample.covariate_names()[idx],
        "psi_index": idx,
        "psi0": args.psi0,
        "n": sample.n(),
        "p": sample.p(),
        "covariates": sample.covariate_names(),
        "strata": sample.n_strata(),
        "censored_fraction": sample.censored_fraction(),
    })
}

#[derive(Debug, Clone)]
pub struct TestArgs {
    pub data: DataArgs,
    pub methods: Vec<Method>,
    pub b: usize,
    pub r: usize,
    pub seed: u64,
}

impl TestArgs {
    pub fn new(data: DataArgs) -> Self {
        Self {
            data,
            methods: vec![Method::FirstOrder],
            b: DEFAULT_B,
            r: DEFAULT_R,
            seed: DEFAULT_SEED,
        }
    }
}

pub fn cmd_test(args: &TestArgs) -> Result<Value> {
    let (sample, rank, idx, spec) = load(&args.data)?;
    if args.methods.contains(&Method::Bootstrap) && args.b == 0 {
        return Err(Error::Validation("B must be positive".into()));
    }
    let fits = fit_root(&rank, &LogLinear, &spec, &FitOptions::default())?;
    let se = wald_se(&fits.hat, &spec).ok();
    let mut methods = serde_json::Map::new();
    for &m in &args.methods {
        let v = match m {
            Method::FirstOrder => to_value(&first_order_pvalues(fits.r)),
            Method::Bootstrap => to_value(&bootstrap_pvalue(&rank, &LogLinear, &spec, args.b, args.seed)?),
            Method::Rstar => {
                let (h, cov) = skovgaard_from_data(&fits.hat, &fits.psi, &rank, &LogLinear, &spec, args.r, args.seed)?;
                let mut v = to_value(&h);
                v["R"] = json!(cov.r);
                v["covariances"] = to_value(&cov);
                v["completion_basis"] = to_value(spec.basis());
                v
            }
            Method::FixedRiskset => to_value(&fixed_riskset_rstar(&fits.hat, &fits.psi, &spec)?),
        };
        methods.insert(m.to_string(), v);
    }
    let mut inputs = data_inputs(&args.data, &sample, idx);
    inputs["methods"] = to_value(&args.methods);
    inputs["B"] = json!(args.b);
    inputs["R"] = json!(args.r);
    let result = json!({
        "theta_hat": fits.hat.theta,
        "fit_status": fits.hat.status,
        "iterations": fits.hat.iterations,
        "loglik": fits.hat.loglik,
        "psi_hat": spec.psi(&fits.hat.theta),
        "se": se,
        "theta_psi": fits.psi.theta,
        "constrained_fit_status": fits.psi.status,
        "loglik_psi": fits.psi.loglik,
        "r": fits.r,
        "methods": methods,
    });
    Ok(envelope("test", args.seed, inputs, result))
}

#[derive(Debug, Clone)]
pub struct CiArgs {
    pub data: DataArgs,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
}

pub fn cmd_ci(args: &CiArgs) -> Result<Value> {
    let (sample, rank, idx, spec) = load(&args.data)?;
    let res = invert_ci(&rank, &LogLinear, &spec, &CiOptions::new(args.alpha, args.b, args.seed))?;
    let mut inputs = data_inputs(&args.data, &sample, idx);
    inputs["alpha"] = json!(args.alpha);
    inputs["B"] = json!(args.b);
    let mut result = to_value(&res);
    result["level"] = json!(1.0 - 2.0 * args.alpha);
    Ok(envelope("ci", args.seed, inputs, result))
}

#[derive(Debug, Clone, Default)]
pub struct SimstudyOverrides {
    pub b: Option<usize>,
    pub r: Option<usize>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<Method>>,
}

/// Runs the study; with `out`, writes `report.json`, `tail_table.csv`,
/// `records.csv` and the resumable `checkpoint.jsonl` there.
pub fn cmd_simstudy(config_path: &Path, overrides: &SimstudyOverrides, out: Option<&Path>) -> Result<Value> {
    let mut config = StudyConfig::load(config_path)?;
    if let Some(b) = overrides.b {
        config.b = b;
    }
    if let Some(r) = overrides.r {
        config.r = r;
    }
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(m) = &overrides.methods {
        config.methods = m.clone();
    }
    config.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let checkpoint = out.map(|d| d.join("checkpoint.jsonl"));
    let outcome = run_study(&config, checkpoint.as_deref())?;
    if let Some(dir) = out {
        outcome.summary.table.write_csv(BufWriter::new(File::create(dir.join("tail_table.csv"))?))?;
        let mut methods = config.methods.clone();
        methods.sort();
        methods.dedup();
        write_records_csv(
            &outcome.records,
            &methods,
            config.coverage_alpha.is_some(),
            BufWriter::new(File::create(dir.join("records.csv"))?),
        )?;
    }
    let report = envelope("simstudy", config.seed, to_value(&config), to_value(&outcome.summary));
    if let Some(dir) = out {
        write_json(&report, &dir.join("report.json"))?;
    }
    Ok(report)
}

pub fn render(report: &Value) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("serializable report");
    s.push('\n');
    s
}

pub fn write_json(report: &Value, path: &Path) -> Result<()> {
    std::fs::write(path, render(report))?;
    Ok(())
}
