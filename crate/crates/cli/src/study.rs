//! Simulation-study harness: repeated datasets from a scenario, each analysed
//! with the configured methods, summarised as tail-frequency tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use coxhoa::bootstrap::{bootstrap_pvalue, invert_ci, CiOptions, DEFAULT_B};
use coxhoa::fit::{first_order_pvalues, fit_constrained, fit_unconstrained, signed_root, wald_se, FitOptions, HypothesisSpec};
use coxhoa::hoa::{fixed_riskset_rstar, np_inf_diagnostics, skovgaard_from_data, HoaMethod, HoaResult, NpInfSummary, DEFAULT_R};
use coxhoa::refcensor::{scenario_generate, simulate_reference_trial, ReferenceCensoringPlan, RngStream, Scenario};
use coxhoa::survdata::{rank_reduce, RankData};
use coxhoa::{Error, LogLinear, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::{ks_uniform, KsResult};

const CHECKPOINT_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FirstOrder,
    Bootstrap,
    Rstar,
    FixedRiskset,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FirstOrder, Method::Bootstrap, Method::Rstar, Method::FixedRiskset];

    pub fn name(self) -> &'static str {
        match self {
            Method::FirstOrder => "first-order",
            Method::Bootstrap => "bootstrap",
            Method::Rstar => "rstar",
            Method::FixedRiskset => "fixed-riskset",
        }
    }

    /// Parses a comma-separated list; `all` selects every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Method::ALL);
                continue;
            }
            let m = Method::ALL
                .into_iter()
                .find(|m| m.name() == part)
                .ok_or_else(|| Error::Validation(format!("unknown method '{part}'")))?;
            out.push(m);
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Validation("no methods selected".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How ψ0 is chosen for each dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HypothesisProtocol {
    Fixed {
        #[serde(default)]
        psi0: f64,
    },
    /// ψ0 = ψ̂ − z·SE(ψ̂), the lower Wald limit.
    WaldLimit {
        #[serde(default = "default_wald_z")]
        z: f64,
    },
}

fn default_wald_z() -> f64 {
    1.645
}

impl Default for HypothesisProtocol {
    fn default() -> Self {
        HypothesisProtocol::Fixed { psi0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataModel {
    /// Failure and censoring times drawn as the scenario describes.
    #[default]
    Scenario,
    /// Scenario covariates and censoring configuration, ranks redrawn from the
    /// reference censoring model at the true parameter.
    ReferenceCensoring,
}

fn default_b() -> usize {
    DEFAULT_B
}
fn default_r() -> usize {
    DEFAULT_R
}
fn default_methods() -> Vec<Method> {
    vec![Method::FirstOrder]
}
fn default_cuts() -> Vec<f64> {
    vec![1.0, 2.5, 5.0, 10.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// `binary-arm`, `gaussian`, `gaussian-<k>`, `clinical-trial`, `clinical-trial-<k>`.
    pub scenario: String,
    pub n: usize,
    /// Nuisance covariate count when `scenario` is a bare family name.
    #[serde(default)]
    pub nuisance: Option<usize>,
    #[serde(default)]
    pub psi_true: f64,
    #[serde(default)]
    pub hypothesis: HypothesisProtocol,
    pub datasets: usize,
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    #[serde(rename = "R", default = "default_r")]
    pub r: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Nominal tail levels in percent.
    #[serde(default = "default_cuts")]
    pub cut_points: Vec<f64>,
    #[serde(default)]
    pub data_model: DataModel,
    /// Per-tail α for bootstrap lower confidence limits; coverage of `psi_true` is reported.
    #[serde(default)]
    pub coverage_alpha: Option<f64>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    /// TOML unless the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn resolve_scenario(&self) -> Result<Scenario> {
        let family_default = match self.scenario.as_str() {
            "gaussian" => Some(Scenario::Gaussian {
                nuisance: self.nuisance.unwrap_or(4),
            }),
            "clinical-trial" => Some(Scenario::ClinicalTrial {
                nuisance: self.nuisance.unwrap_or(4),
            }),
            _ => None,
        };
        let scenario = match family_default {
            Some(s) => s,
            None => self.scenario.parse()?,
        };
        if let Some(k) = self.nuisance {
            if scenario.p() != k + 1 {
                return Err(Error::Validation(format!(
                    "scenario '{}' has {} nuisance covariates but config says {k}",
                    self.scenario,
                    scenario.p() - 1
                )));
            }
        }
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<Scenario> {
        let scenario = self.resolve_scenario()?;
        let bad = |m: String| Err(Error::Validation(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.datasets == 0 {
            return bad("datasets must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if (self.methods.contains(&Method::Bootstrap) || self.coverage_alpha.is_some()) && self.b == 0 {
            return bad("B must be positive".into());
        }
        if self.methods.contains(&Method::Rstar) && self.r < 2 {
            return bad("R must be at least 2".into());
        }
        if !self.psi_true.is_finite() {
            return bad("psi_true must be finite".into());
        }
        if self.cut_points.is_empty() || self.cut_points.iter().any(|c| !(*c > 0.0 && *c < 50.0)) {
            return bad("cut points must lie in (0, 50) percent".into());
        }
        if let Some(a) = self.coverage_alpha {
            if !(a > 0.0 && a < 0.5) {
                return bad(format!("coverage_alpha must be in (0, 0.5), got {a}"));
            }
        }
        match self.hypothesis {
            HypothesisProtocol::Fixed { psi0 } if !psi0.is_finite() => bad("psi0 must be finite".into()),
            HypothesisProtocol::WaldLimit { z } if !z.is_finite() => bad("z must be finite".into()),
            _ => Ok(scenario),
        }
    }

    fn sorted_methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub p_lower: f64,
    pub p_upper: f64,
    #[serde(default)]
    pub r_star: Option<f64>,
    #[serde(default, rename = "NP")]
    pub np: Option<f64>,
    #[serde(default, rename = "INF")]
    pub inf: Option<f64>,
    /// The method failed and first-order p-values were substituted.
    pub fallback: bool,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub trials_completed: Option<usize>,
    #[serde(default)]
    pub trials_failed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub index: usize,
    pub included: bool,
    #[serde(default)]
    pub exclusion: Option<String>,
    pub censored_fraction: f64,
    #[serde(default)]
    pub psi_hat: Option<f64>,
    #[serde(default)]
    pub se: Option<f64>,
    #[serde(default)]
    pub psi0: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub methods: Vec<MethodRecord>,
    #[serde(default)]
    pub ci_lower: Option<f64>,
    #[serde(default)]
    pub covered: Option<bool>,
    #[serde(default)]
    pub ci_error: Option<String>,
}

impl DatasetRecord {
    fn excluded(index: usize, censored_fraction: f64, reason: &str) -> Self {
        Self {
            index,
            included: false,
            exclusion: Some(reason.to_string()),
            censored_fraction,
            psi_hat: None,
            se: None,
            psi0: None,
            r: None,
            methods: Vec::new(),
            ci_lower: None,
            covered: None,
            ci_error: None,
        }
    }

    pub fn method(&self, m: Method) -> Option<&MethodRecord> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Dataset `index`: its analysis data and the truth it was generated under.
pub fn study_dataset(config: &StudyConfig, scenario: Scenario, index: usize) -> Result<RankData<f64>> {
    let stream = RngStream::new(config.seed, index as u64);
    let mut rng = stream.rng();
    let sample = scenario_generate::<f64, _>(scenario, config.n, config.psi_true, &mut rng)?;
    let rank = rank_reduce(&sample)?;
    match config.data_model {
        DataModel::Scenario => Ok(rank),
        DataModel::ReferenceCensoring => {
            let mut theta = vec![0.0; scenario.p()];
            theta[0] = config.psi_true;
            let plan = ReferenceCensoringPlan::from_rank(&rank);
            simulate_reference_trial(&theta, &rank.shared_covariates(), &plan, &LogLinear, stream.substream(1))
        }
    }
}

fn first_order_record(r: f64) -> MethodRecord {
    let p = first_order_pvalues(r);
    MethodRecord {
        method: Method::FirstOrder,
        p_lower: p.lower,
        p_upper: p.upper,
        r_star: None,
        np: None,
        inf: None,
        fallback: false,
        error: None,
        trials_completed: None,
        trials_failed: None,
    }
}

fn hoa_record(method: Method, r: f64, res: Result<HoaResult<f64>>) -> MethodRecord {
    match res {
        Ok(h) => MethodRecord {
            method,
            p_lower: h.p_lower,
            p_upper: h.p_upper,
            r_star: Some(h.r_star),
            np: Some(h.np),
            inf: Some(h.inf),
            fallback: false,
            error: None,
            trials_completed: None,
            trials_failed: None,
        },
        Err(e) => fallback_record(method, r, &e),
    }
}

fn fallback_record(method: Method, r: f64, e: &Error) -> MethodRecord {
    MethodRecord {
        method,
        fallback: true,
        error: Some(e.kind().to_string()),
        ..first_order_record(r)
    }
}

/// Analyses one dataset with every configured method.
pub fn analyse_dataset(config: &StudyConfig, scenario: Scenario, index: usize) -> DatasetRecord {
    let rank = match study_dataset(config, scenario, index) {
        Ok(r) => r,
        Err(e) => return DatasetRecord::excluded(index, f64::NAN, e.kind()),
    };
    let censored = 1.0 - rank.failures() as f64 / rank.n() as f64;
    let opts = FitOptions::default();
    let hat = match fit_unconstrained(&rank, &LogLinear, &opts) {
        Ok(f) if f.converged() => f,
        Ok(f) if f.usable() => return DatasetRecord::excluded(index, censored, "monotone_divergent"),
        Ok(_) => return DatasetRecord::excluded(index, censored, "fit_failed"),
        Err(e) => return DatasetRecord::excluded(index, censored, e.kind()),
    };
    let base = HypothesisSpec::coordinate(rank.p(), 0, 0.0).expect("p >= 1");
    let psi_hat = base.psi(&hat.theta);
    let se = match wald_se(&hat, &base) {
        Ok(s) => s,
        Err(e) => return DatasetRecord::excluded(index, censored, e.kind()),
    };
    let psi0 = match config.hypothesis {
        HypothesisProtocol::Fixed { psi0 } => psi0,
        HypothesisProtocol::WaldLimit { z } => psi_hat - z * se,
    };
    let spec = base.with_psi0(psi0);
    let constrained = fit_constrained(&rank, &LogLinear, &spec, &opts)
        .and_then(|f| if f.usable() { Ok(f) } else { Err(Error::FitFailed("constrained".into())) });
    let psi_fit = match constrained {
        Ok(f) => f,
        Err(e) => return DatasetRecord::excluded(index, censored, e.kind()),
    };
    let r = match signed_root(&hat, &psi_fit, &spec) {
        Ok(r) => r,
        Err(e) => return DatasetRecord::excluded(index, censored, e.kind()),
    };

    let inner_seed = RngStream::new(config.seed, index as u64).substream(0).seed;
    let mut methods = Vec::new();
    for m in config.sorted_methods() {
        let rec = match m {
            Method::FirstOrder => first_order_record(r),
            Method::Bootstrap => match bootstrap_pvalue(&rank, &LogLinear, &spec, config.b, inner_seed) {
                Ok(b) => MethodRecord {
                    method: m,
                    p_lower: b.p_lower,
                    p_upper: b.p_upper,
                    trials_completed: Some(b.completed),
                    trials_failed: Some(b.failed),
                    ..first_order_record(r)
                },
                Err(e) => fallback_record(m, r, &e),
            },
            Method::Rstar => hoa_record(
                m,
                r,
                skovgaard_from_data(&hat, &psi_fit, &rank, &LogLinear, &spec, config.r, inner_seed).map(|x| x.0),
            ),
            Method::FixedRiskset => hoa_record(m, r, fixed_riskset_rstar(&hat, &psi_fit, &spec)),
        };
        methods.push(rec);
    }

    let mut record = DatasetRecord {
        index,
        included: true,
        exclusion: None,
        censored_fraction: censored,
        psi_hat: Some(psi_hat),
        se: Some(se),
        psi0: Some(psi0),
        r: Some(r),
        methods,
        ci_lower: None,
        covered: None,
        ci_error: None,
    };
    if let Some(alpha) = config.coverage_alpha {
        let mut ci = CiOptions::new(alpha, config.b, inner_seed);
        ci.upper = false;
        match invert_ci(&rank, &LogLinear, &base, &ci) {
            Ok(res) => {
                let lower = res.lower.expect("lower limit requested").value;
                record.ci_lower = Some(lower);
                record.covered = Some(config.psi_true >= lower);
            }
            Err(e) => record.ci_error = Some(e.kind().to_string()),
        }
    }
    record
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEntry {
    pub label: String,
    pub percent: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub method: Method,
    pub datasets: usize,
    pub entries: Vec<TailEntry>,
}

impl TailRow {
    pub fn entry(&self, label: &str) -> Option<&TailEntry> {
        self.entries.iter().find(|e| e.label == label)
    }
}

/// Empirical tail frequencies (percent) per method, lower tails ascending then
/// upper tails descending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailTable {
    pub cut_points: Vec<f64>,
    pub rows: Vec<TailRow>,
}

fn fmt_cut(c: f64) -> String {
    format!("{c}")
}

impl TailTable {
    pub fn build(records: &[DatasetRecord], methods: &[Method], cuts: &[f64]) -> Self {
        let mut cuts = cuts.to_vec();
        cuts.sort_by(f64::total_cmp);
        let included: Vec<&DatasetRecord> = records.iter().filter(|r| r.included).collect();
        let n = included.len();
        let rows = methods
            .iter()
            .map(|&m| {
                let tail = |upper: bool, c: f64| {
                    let hits = included
                        .iter()
                        .filter_map(|r| r.method(m))
                        .filter(|rec| (if upper { rec.p_upper } else { rec.p_lower }) < c / 100.0)
                        .count();
                    let f = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
                    let se = if n == 0 { 0.0 } else { (f * (1.0 - f) / n as f64).sqrt() };
                    (100.0 * f, 100.0 * se)
                };
                let mut entries = Vec::new();
                for &c in &cuts {
                    let (percent, se) = tail(false, c);
                    entries.push(TailEntry { label: format!("<{}", fmt_cut(c)), percent, se });
                }
                for &c in cuts.iter().rev() {
                    let (percent, se) = tail(true, c);
                    entries.push(TailEntry { label: format!(">{}", fmt_cut(c)), percent, se });
                }
                TailRow { method: m, datasets: n, entries }
            })
            .collect();
        Self { cut_points: cuts, rows }
    }

    pub fn row(&self, m: Method) -> Option<&TailRow> {
        self.rows.iter().find(|r| r.method == m)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let labels: Vec<String> = self.rows.first().map(|r| r.entries.iter().map(|e| e.label.clone()).collect()).unwrap_or_default();
        let mut header = vec!["method".to_string(), "datasets".to_string()];
        header.extend(labels.iter().cloned());
        header.extend(labels.iter().map(|l| format!("se{l}")));
        out.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.method.to_string(), row.datasets.to_string()];
            rec.extend(row.entries.iter().map(|e| format!("{:.4}", e.percent)));
            rec.extend(row.entries.iter().map(|e| format!("{:.4}", e.se)));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Tidy per-dataset CSV: one row per dataset, method columns prefixed by name.
pub fn write_records_csv<W: Write>(records: &[DatasetRecord], methods: &[Method], coverage: bool, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["index", "included", "exclusion", "censored_fraction", "psi_hat", "se", "psi0", "r"]
        .map(String::from)
        .to_vec();
    for m in methods {
        for f in ["p_lower", "p_upper", "r_star", "NP", "INF", "fallback"] {
            header.push(format!("{m}_{f}"));
        }
    }
    if coverage {
        header.extend(["ci_lower", "covered", "ci_error"].map(String::from));
    }
    out.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.index.to_string(),
            r.included.to_string(),
            r.exclusion.clone().unwrap_or_default(),
            r.censored_fraction.to_string(),
            opt(r.psi_hat),
            opt(r.se),
            opt(r.psi0),
            opt(r.r),
        ];
        for &m in methods {
            match r.method(m) {
                Some(x) => row.extend([
                    x.p_lower.to_string(),
                    x.p_upper.to_string(),
                    opt(x.r_star),
                    opt(x.np),
                    opt(x.inf),
                    x.fallback.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
        }
        if coverage {
            row.push(opt(r.ci_lower));
            row.push(r.covered.map(|c| c.to_string()).unwrap_or_default());
            row.push(r.ci_error.clone().unwrap_or_default());
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub alpha: f64,
    pub evaluated: usize,
    pub covered: usize,
    pub percent: f64,
    pub se: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub scenario: String,
    pub datasets: usize,
    pub included: usize,
    pub excluded: BTreeMap<String, usize>,
    pub mean_censored_fraction: f64,
    /// Per method: datasets where first-order p-values were substituted.
    pub fallbacks: BTreeMap<Method, usize>,
    pub fallback_rate: BTreeMap<Method, f64>,
    pub bootstrap_failed_trials: usize,
    pub table: TailTable,
    /// KS test of the lower-tail p-values against Uniform(0, 1).
    pub uniformity: BTreeMap<Method, KsResult>,
    pub np_inf: Option<NpInfSummary>,
    pub coverage: Option<Coverage>,
}

pub fn summarise(config: &StudyConfig, scenario: Scenario, records: &[DatasetRecord]) -> StudySummary {
    let methods = config.sorted_methods();
    let included: Vec<&DatasetRecord> = records.iter().filter(|r| r.included).collect();
    let mut excluded = BTreeMap::new();
    for r in records.iter().filter(|r| !r.included) {
        *excluded.entry(r.exclusion.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    let mut fallbacks = BTreeMap::new();
    let mut fallback_rate = BTreeMap::new();
    let mut uniformity = BTreeMap::new();
    for &m in &methods {
        let recs: Vec<&MethodRecord> = included.iter().filter_map(|r| r.method(m)).collect();
        let count = recs.iter().filter(|r| r.fallback).count();
        fallbacks.insert(m, count);
        fallback_rate.insert(m, if recs.is_empty() { 0.0 } else { count as f64 / recs.len() as f64 });
        let ps: Vec<f64> = recs.iter().map(|r| r.p_lower).collect();
        if let Some(ks) = ks_uniform(&ps) {
            uniformity.insert(m, ks);
        }
    }
    let bootstrap_failed_trials = included
        .iter()
        .filter_map(|r| r.method(Method::Bootstrap))
        .filter_map(|r| r.trials_failed)
        .sum();
    let hoa: Vec<HoaResult<f64>> = included
        .iter()
        .filter_map(|r| r.method(Method::Rstar))
        .filter(|m| !m.fallback)
        .map(|m| HoaResult {
            method: HoaMethod::Skovgaard,
            r: 0.0,
            u: 0.0,
            c: 0.0,
            np: m.np.unwrap_or(0.0),
            inf: m.inf.unwrap_or(0.0),
            r_star: m.r_star.unwrap_or(0.0),
            p_lower: m.p_lower,
            p_upper: m.p_upper,
        })
        .collect();
    let np_inf = if methods.contains(&Method::Rstar) { np_inf_diagnostics(&hoa).ok() } else { None };
    let coverage = config.coverage_alpha.map(|alpha| {
        let evaluated: Vec<bool> = included.iter().filter_map(|r| r.covered).collect();
        let covered = evaluated.iter().filter(|&&c| c).count();
        let n = evaluated.len().max(1) as f64;
        let f = covered as f64 / n;
        Coverage {
            alpha,
            evaluated: evaluated.len(),
            covered,
            percent: 100.0 * f,
            se: 100.0 * (f * (1.0 - f) / n).sqrt(),
            failures: included.iter().filter(|r| r.ci_error.is_some()).count(),
        }
    });
    let cens: Vec<f64> = records.iter().map(|r| r.censored_fraction).filter(|c| c.is_finite()).collect();
    StudySummary {
        scenario: scenario.to_string(),
        datasets: records.len(),
        included: included.len(),
        excluded,
        mean_censored_fraction: if cens.is_empty() { f64::NAN } else { coxhoa::pairwise_sum(&cens) / cens.len() as f64 },
        fallbacks,
        fallback_rate,
        bootstrap_failed_trials,
        table: TailTable::build(records, &methods, &config.cut_points),
        uniformity,
        np_inf,
        coverage,
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub records: Vec<DatasetRecord>,
    pub summary: StudySummary,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: serde_json::Value,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Validation(format!("checkpoint: {e}"))
}

/// Records already present in a compatible checkpoint.
fn read_checkpoint(path: &Path, config: &serde_json::Value) -> Result<Vec<DatasetRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut lines = BufReader::new(File::open(path)?).lines();
    let Some(first) = lines.next().transpose()? else {
        return Ok(Vec::new());
    };
    let header: CheckpointHeader = serde_json::from_str(&first).map_err(json_err)?;
    if &header.config != config {
        return Err(Error::Validation(format!(
            "checkpoint {} was written for a different config",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        // a torn final line from an interrupted run is dropped
        let Ok(rec) = serde_json::from_str::<DatasetRecord>(&line) else {
            break;
        };
        if rec.index != records.len() {
            break;
        }
        records.push(rec);
    }
    // keep whole chunks only, so the file can be rewritten consistently
    records.truncate(records.len() - records.len() % CHECKPOINT_EVERY);
    Ok(records)
}

fn write_checkpoint(path: &Path, config: &serde_json::Value, records: &[DatasetRecord]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::io::BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut f, &CheckpointHeader { config: config.clone() }).map_err(json_err)?;
        writeln!(f)?;
        for r in records {
            serde_json::to_writer(&mut f, r).map_err(json_err)?;
            writeln!(f)?;
        }
        f.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn append_checkpoint(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(OpenOptions::new().append(true).open(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r).map_err(json_err)?;
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Runs the study, resuming from and extending `checkpoint` when given.
/// Datasets are processed in chunks of 100, each dataset in parallel.
pub fn run_study(config: &StudyConfig, checkpoint: Option<&Path>) -> Result<StudyOutcome> {
    let scenario = config.validate()?;
    let config_json = serde_json::to_value(config).map_err(json_err)?;
    let mut records = match checkpoint {
        Some(p) => {
            let done = read_checkpoint(p, &config_json)?;
            write_checkpoint(p, &config_json, &done)?;
            done
        }
        None => Vec::new(),
    };
    while records.len() < config.datasets {
        let start = records.len();
        let end = (start + CHECKPOINT_EVERY).min(config.datasets);
        let chunk: Vec<DatasetRecord> = (start..end)
            .into_par_iter()
            .map(|i| analyse_dataset(config, scenario, i))
            .collect();
        if let Some(p) = checkpoint {
            append_checkpoint(p, &chunk)?;
        }
        records.extend(chunk);
    }
    records.truncate(config.datasets);
    let summary = summarise(config, scenario, &records);
    Ok(StudyOutcome { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(methods: &str) -> StudyConfig {
        StudyConfig::from_toml(&format!(
            r#"
scenario = "gaussian-2"
n = 20
datasets = 30
B = 99
R = 200
seed = 5
methods = [{methods}]
"#
        ))
        .unwrap()
    }

    #[test]
    fn config_parsing_and_validation() {
        let c = config(r#""first-order", "rstar""#);
        assert_eq!(c.resolve_scenario().unwrap(), Scenario::Gaussian { nuisance: 2 });
        assert_eq!(c.hypothesis, HypothesisProtocol::Fixed { psi0: 0.0 });
        let w = StudyConfig::from_toml(
            "scenario = \"gaussian\"\nnuisance = 9\nn = 40\ndatasets = 1\nhypothesis = { protocol = \"wald-limit\" }\n",
        )
        .unwrap();
        assert_eq!(w.resolve_scenario().unwrap(), Scenario::Gaussian { nuisance: 9 });
        assert_eq!(w.hypothesis, HypothesisProtocol::WaldLimit { z: 1.645 });
        let mut bad = c.clone();
        bad.nuisance = Some(3);
        assert!(bad.validate().is_err());
        assert!(StudyConfig::from_toml("scenario = \"gaussian-2\"\nn = 20\ndatasets = 1\nbogus = 1\n").is_err());
        let mut zero = c.clone();
        zero.datasets = 0;
        assert!(matches!(zero.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn method_lists() {
        assert_eq!(Method::parse_list("rstar,first-order").unwrap(), vec![Method::FirstOrder, Method::Rstar]);
        assert_eq!(Method::parse_list("all").unwrap().len(), 4);
        assert!(Method::parse_list("wald").is_err());
    }

    #[test]
    fn table_shape_and_monotonicity() {
        let c = config(r#""first-order", "fixed-riskset""#);
        let out = run_study(&c, None).unwrap();
        let t = &out.summary.table;
        let labels: Vec<&str> = t.rows[0].entries.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["<1", "<2.5", "<5", "<10", ">10", ">5", ">2.5", ">1"]);
        for row in &t.rows {
            let lower: Vec<f64> = row.entries[..4].iter().map(|e| e.percent).collect();
            assert!(lower.windows(2).all(|w| w[0] <= w[1]));
            let upper: Vec<f64> = row.entries[4..].iter().map(|e| e.percent).collect();
            assert!(upper.windows(2).all(|w| w[0] >= w[1]));
            assert!(row.entries.iter().all(|e| (0.0..=100.0).contains(&e.percent)));
        }
        assert_eq!(out.summary.datasets, 30);
        assert_eq!(out.summary.included + out.summary.excluded.values().sum::<usize>(), 30);
    }

    #[test]
    fn checkpoint_resume_matches_fresh_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.jsonl");
        let mut c = config(r#""first-order""#);
        c.datasets = 250;
        let fresh = run_study(&c, None).unwrap();
        let mut short = c.clone();
        short.datasets = 150;
        // a checkpoint from another config is refused
        run_study(&short, Some(&path)).unwrap();
        assert!(run_study(&c, Some(&path)).is_err());
        std::fs::remove_file(&path).unwrap();
        run_study(&c, Some(&path)).unwrap();
        // truncate to the first chunk plus a torn line, then resume
        let text = std::fs::read_to_string(&path).unwrap();
        let keep: Vec<&str> = text.lines().take(1 + 130).collect();
        std::fs::write(&path, format!("{}\n{{\"index\": 13", keep.join("\n"))).unwrap();
        let resumed = run_study(&c, Some(&path)).unwrap();
        assert_eq!(resumed.records, fresh.records);
    }

    #[test]
    fn reference_model_data_keep_configuration() {
        let mut c = config(r#""first-order""#);
        c.data_model = DataModel::ReferenceCensoring;
        let s = c.validate().unwrap();
        let mut plain = c.clone();
        plain.data_model = DataModel::Scenario;
        for i in 0..5 {
            let a = study_dataset(&c, s, i).unwrap();
            let b = study_dataset(&plain, s, i).unwrap();
            assert_eq!(a.strata()[0].config, b.strata()[0].config);
        }
    }
}
