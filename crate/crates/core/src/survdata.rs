//! Subject-level survival data and its reduction to the rank summary that is
//! sufficient for partial likelihood.

use std::collections::BTreeMap;
use std::io::Read;
use std::sync::Arc;

use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

/// Right-censored survival data with covariates and optional strata.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalSample<S> {
    times: Vec<S>,
    status: Vec<bool>,
    covariates: Matrix<S>,
    covariate_names: Vec<String>,
    strata: Option<Vec<i64>>,
}

impl<S: Scalar> SurvivalSample<S> {
    pub fn new(
        times: Vec<S>,
        status: Vec<bool>,
        covariates: Matrix<S>,
        covariate_names: Vec<String>,
        strata: Option<Vec<i64>>,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::Validation("sample has no subjects".into()));
        }
        if status.len() != n || covariates.rows() != n {
            return Err(Error::Validation(format!(
                "length mismatch: {} times, {} status, {} covariate rows",
                n,
                status.len(),
                covariates.rows()
            )));
        }
        if covariates.cols() == 0 {
            return Err(Error::Validation("at least one covariate is required".into()));
        }
        if covariate_names.len() != covariates.cols() {
            return Err(Error::Validation("covariate name count mismatch".into()));
        }
        if let Some(s) = &strata {
            if s.len() != n {
                return Err(Error::Validation("stratum length mismatch".into()));
            }
        }
        for (i, t) in times.iter().enumerate() {
            if !(t.is_finite() && *t > S::zero()) {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("time must be positive and finite, got {t}"),
                });
            }
        }
        if !covariates.is_finite() {
            return Err(Error::Validation("covariates must be finite".into()));
        }
        Ok(Self {
            times,
            status,
            covariates,
            covariate_names,
            strata,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.cols()
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn covariates(&self) -> &Matrix<S> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn strata(&self) -> Option<&[i64]> {
        self.strata.as_deref()
    }

    pub fn stratum_of(&self, i: usize) -> i64 {
        self.strata.as_ref().map_or(0, |s| s[i])
    }

    pub fn n_strata(&self) -> usize {
        match &self.strata {
            None => 1,
            Some(s) => {
                let mut v = s.clone();
                v.sort_unstable();
                v.dedup();
                v.len()
            }
        }
    }

    pub fn censored_fraction(&self) -> f64 {
        self.status.iter().filter(|s| !**s).count() as f64 / self.n() as f64
    }

    /// Index of a covariate by header name, or by a 0-based column index given as text.
    pub fn covariate_index(&self, key: &str) -> Option<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == key)
            .or_else(|| key.parse::<usize>().ok().filter(|&i| i < self.p()))
    }

    /// Applies `f` to every time; used to check invariance under monotone transforms.
    pub fn map_times(&self, f: impl Fn(S) -> S) -> Result<Self> {
        Self::new(
            self.times.iter().map(|&t| f(t)).collect(),
            self.status.clone(),
            self.covariates.clone(),
            self.covariate_names.clone(),
            self.strata.clone(),
        )
    }
}

/// CSV dialect for [`load_dataset`].
#[derive(Debug, Clone, Copy)]
pub struct CsvFormat {
    pub delimiter: u8,
    pub comment: u8,
}

impl Default for CsvFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            comment: b'#',
        }
    }
}

/// Reads `time,status,<cov1>,…,<covp>[,stratum]` with a required header row.
pub fn load_dataset<S: Scalar, R: Read>(source: R, format: CsvFormat) -> Result<SurvivalSample<S>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .comment(Some(format.comment))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(source);

    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 3 || header[0] != "time" || header[1] != "status" {
        return Err(Error::Parse {
            row: 1,
            message: "header must start with `time,status` and name at least one covariate".into(),
        });
    }
    let has_stratum = header.last().is_some_and(|h| h == "stratum");
    let cov_end = if has_stratum { header.len() - 1 } else { header.len() };
    let names: Vec<String> = header[2..cov_end].to_vec();
    if names.is_empty() {
        return Err(Error::Parse {
            row: 1,
            message: "no covariate columns".into(),
        });
    }

    let mut times = Vec::new();
    let mut status = Vec::new();
    let mut cov = Vec::new();
    let mut strata = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |j: usize| -> Result<&str> {
            match rec.get(j) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::Parse {
                    row,
                    message: format!("missing value in column `{}`", header[j]),
                }),
            }
        };
        let num = |j: usize| -> Result<f64> {
            let s = field(j)?;
            s.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric value `{s}` in column `{}`", header[j]),
            })
        };
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let t = num(0)?;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Parse {
                row,
                message: format!("time must be positive and finite, got {t}"),
            });
        }
        let d = num(1)?;
        let d = if d == 1.0 {
            true
        } else if d == 0.0 {
            false
        } else {
            return Err(Error::Parse {
                row,
                message: format!("status must be 0 or 1, got {d}"),
            });
        };
        times.push(S::lit(t));
        status.push(d);
        for j in 2..cov_end {
            let v = num(j)?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite covariate in column `{}`", header[j]),
                });
            }
            cov.push(S::lit(v));
        }
        if has_stratum {
            let s = field(cov_end)?;
            let k = s.parse::<i64>().map_err(|_| Error::Parse {
                row,
                message: format!("stratum must be an integer, got `{s}`"),
            })?;
            strata.push(k);
        }
    }
    let n = times.len();
    let p = names.len();
    SurvivalSample::new(
        times,
        status,
        Matrix::from_row_major(n, p, cov),
        names,
        has_stratum.then_some(strata),
    )
}

/// Rank summary for one stratum.
///
/// Subjects leave observation in `exit_order`: each failure is followed by the
/// subjects censored before the next failure. The risk set of failure `i` is the
/// suffix `exit_order[risk_start[i]..]`. Subjects censored before the first
/// failure are kept in `early_censored` and belong to no risk set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumRanks {
    pub label: i64,
    pub early_censored: Vec<usize>,
    pub exit_order: Vec<usize>,
    pub failure_pos: Vec<usize>,
    pub risk_start: Vec<usize>,
    /// `c = (c0, c1, …, cm)`: censorings in `[t_(i), t_(i+1))`.
    pub config: Vec<usize>,
}

impl StratumRanks {
    pub fn m(&self) -> usize {
        self.failure_pos.len()
    }

    pub fn size(&self) -> usize {
        self.early_censored.len() + self.exit_order.len()
    }

    pub fn failure_order(&self) -> Vec<usize> {
        self.failure_pos.iter().map(|&k| self.exit_order[k]).collect()
    }

    #[inline]
    pub fn failing_subject(&self, i: usize) -> usize {
        self.exit_order[self.failure_pos[i]]
    }

    #[inline]
    pub fn riskset(&self, i: usize) -> &[usize] {
        &self.exit_order[self.risk_start[i]..]
    }

    /// Subjects of the stratum in a canonical (sorted) order.
    pub fn cohort(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .early_censored
            .iter()
            .chain(&self.exit_order)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    /// Builds a tie-free stratum from a failure sequence and censoring groups.
    pub fn from_sequence(
        label: i64,
        early_censored: Vec<usize>,
        failures: &[usize],
        censored_after: &[Vec<usize>],
    ) -> Self {
        assert_eq!(failures.len(), censored_after.len());
        let mut exit_order = Vec::new();
        let mut failure_pos = Vec::with_capacity(failures.len());
        let mut config = Vec::with_capacity(failures.len() + 1);
        config.push(early_censored.len());
        for (&f, cens) in failures.iter().zip(censored_after) {
            failure_pos.push(exit_order.len());
            exit_order.push(f);
            exit_order.extend_from_slice(cens);
            config.push(cens.len());
        }
        Self {
            label,
            early_censored,
            exit_order,
            risk_start: failure_pos.clone(),
            failure_pos,
            config,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let m = self.m();
        if self.config.len() != m + 1 {
            return Err("config length must be m + 1".into());
        }
        if m + self.config.iter().sum::<usize>() != self.size() {
            return Err("m + sum(c) must equal stratum size".into());
        }
        if self.config[0] != self.early_censored.len() {
            return Err("c0 must count early censorings".into());
        }
        for i in 0..m {
            if self.risk_start[i] > self.failure_pos[i] {
                return Err(format!("failure {i} not in its own risk set"));
            }
            if i > 0 && self.risk_start[i] < self.risk_start[i - 1] {
                return Err("risk sets not nested".into());
            }
            let next = if i + 1 < m {
                self.failure_pos[i + 1]
            } else {
                self.exit_order.len()
            };
            if next - self.failure_pos[i] - 1 != self.config[i + 1] {
                return Err(format!("c_{} does not match exit order", i + 1));
            }
        }
        Ok(())
    }
}

/// Partial-likelihood-sufficient summary: per-stratum rank data plus covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankData<S> {
    strata: Vec<StratumRanks>,
    covariates: Arc<Matrix<S>>,
}

impl<S: Scalar> RankData<S> {
    /// Assembles rank data, checking the structural invariants.
    pub fn from_parts(strata: Vec<StratumRanks>, covariates: Arc<Matrix<S>>) -> Result<Self> {
        let n = covariates.rows();
        let mut seen = vec![false; n];
        for s in &strata {
            s.check().map_err(Error::Validation)?;
            if s.m() == 0 {
                return Err(Error::NoFailures { stratum: s.label });
            }
            for &i in s.early_censored.iter().chain(&s.exit_order) {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Validation(format!("subject {i} duplicated or out of range")));
                }
            }
        }
        Ok(Self { strata, covariates })
    }

    pub fn strata(&self) -> &[StratumRanks] {
        &self.strata
    }

    pub fn covariates(&self) -> &Matrix<S> {
        &self.covariates
    }

    pub fn shared_covariates(&self) -> Arc<Matrix<S>> {
        Arc::clone(&self.covariates)
    }

    pub fn p(&self) -> usize {
        self.covariates.cols()
    }

    pub fn n(&self) -> usize {
        self.strata.iter().map(StratumRanks::size).sum()
    }

    pub fn failures(&self) -> usize {
        self.strata.iter().map(StratumRanks::m).sum()
    }

    /// Re-checks every invariant; `Ok` for any value built through this module.
    pub fn validate(&self) -> Result<()> {
        Self::from_parts(self.strata.clone(), Arc::clone(&self.covariates)).map(|_| ())
    }
}

/// Sorts each stratum by time and records failures, risk sets and the censoring
/// configuration.
///
/// At equal times failures precede censorings, so a subject censored at a
/// failure time is at risk for that failure. Tied failures keep input order
/// and all share the risk set present just before the tie.
pub fn rank_reduce<S: Scalar>(sample: &SurvivalSample<S>) -> Result<RankData<S>> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for i in 0..sample.n() {
        groups.entry(sample.stratum_of(i)).or_default().push(i);
    }
    let times = sample.times();
    let status = sample.status();
    let mut strata = Vec::with_capacity(groups.len());
    for (label, mut idx) in groups {
        idx.sort_by(|&a, &b| {
            times[a]
                .partial_cmp(&times[b])
                .expect("times are finite")
                .then(status[b].cmp(&status[a]))
                .then(a.cmp(&b))
        });
        let mut early = Vec::new();
        let mut exit_order = Vec::with_capacity(idx.len());
        let mut failure_pos = Vec::new();
        let mut risk_start = Vec::new();
        let mut config = vec![0usize];
        let mut tie_start: Option<(S, usize)> = None;
        for &i in &idx {
            if status[i] {
                let pos = exit_order.len();
                let start = match tie_start {
                    Some((t, s)) if t == times[i] && pos == failure_pos.last().map_or(usize::MAX, |&q| q + 1) => s,
                    _ => pos,
                };
                tie_start = Some((times[i], start));
                failure_pos.push(pos);
                risk_start.push(start);
                exit_order.push(i);
                config.push(0);
            } else if failure_pos.is_empty() {
                early.push(i);
                config[0] += 1;
            } else {
                exit_order.push(i);
                *config.last_mut().expect("nonempty") += 1;
            }
        }
        if failure_pos.is_empty() {
            return Err(Error::NoFailures { stratum: label });
        }
        strata.push(StratumRanks {
            label,
            early_censored: early,
            exit_order,
            failure_pos,
            risk_start,
            config,
        });
    }
    RankData::from_parts(strata, Arc::new(sample.covariates().clone()))
}
