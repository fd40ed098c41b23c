//! Simulation scenarios: binary 3:1 arm, Gaussian covariates with nuisance
//! terms, and staggered-enrollment clinical trial.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::linalg::Matrix;
use crate::survdata::SurvivalSample;
use crate::{Error, Result, Scalar};

pub const BINARY_CENSOR_UPPER: f64 = 4.0;
pub const GAUSSIAN_CENSOR_UPPER: f64 = 3.25;
pub const CLINICAL_ENROLLMENT_YEARS: f64 = 2.0;
pub const CLINICAL_FOLLOWUP_YEARS: f64 = 5.0;
const CLINICAL_TARGET_CENSORING: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    BinaryArm,
    Gaussian { nuisance: usize },
    ClinicalTrial { nuisance: usize },
}

impl Scenario {
    /// Number of covariates, interest first.
    pub fn p(&self) -> usize {
        match self {
            Scenario::BinaryArm => 1,
            Scenario::Gaussian { nuisance } | Scenario::ClinicalTrial { nuisance } => nuisance + 1,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::BinaryArm => write!(f, "binary-arm"),
            Scenario::Gaussian { nuisance } => write!(f, "gaussian-{nuisance}"),
            Scenario::ClinicalTrial { nuisance } => write!(f, "clinical-trial-{nuisance}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("unknown scenario '{s}'"));
        match s {
            "binary-arm" => return Ok(Scenario::BinaryArm),
            "clinical-trial" => return Ok(Scenario::ClinicalTrial { nuisance: 4 }),
            _ => {}
        }
        if let Some(k) = s.strip_prefix("gaussian-") {
            return Ok(Scenario::Gaussian {
                nuisance: k.parse().map_err(|_| bad())?,
            });
        }
        if let Some(k) = s.strip_prefix("clinical-trial-") {
            return Ok(Scenario::ClinicalTrial {
                nuisance: k.parse().map_err(|_| bad())?,
            });
        }
        Err(bad())
    }
}

impl serde::Serialize for Scenario {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Expected censoring fraction under the null.
fn clinical_censoring(rate: f64) -> f64 {
    let a = CLINICAL_FOLLOWUP_YEARS;
    let b = CLINICAL_FOLLOWUP_YEARS + CLINICAL_ENROLLMENT_YEARS;
    ((-a * rate).exp() - (-b * rate).exp()) / (CLINICAL_ENROLLMENT_YEARS * rate)
}

/// Constant hazard giving 30% expected administrative censoring; bisection on
/// the (decreasing) censoring fraction.
pub fn clinical_trial_hazard() -> f64 {
    let (mut lo, mut hi) = (1e-6, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clinical_censoring(mid) > CLINICAL_TARGET_CENSORING {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Expected censored fraction at ψ = 0 (all failure rates equal to the baseline).
pub fn expected_censoring(scenario: Scenario) -> f64 {
    match scenario {
        // half the subjects have Uniform[0, 4] censoring against unit exponentials
        Scenario::BinaryArm => 0.5 * (1.0 - (-BINARY_CENSOR_UPPER).exp()) / BINARY_CENSOR_UPPER,
        Scenario::Gaussian { .. } => (1.0 - (-GAUSSIAN_CENSOR_UPPER).exp()) / GAUSSIAN_CENSOR_UPPER,
        Scenario::ClinicalTrial { .. } => clinical_censoring(clinical_trial_hazard()),
    }
}

fn exp_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// One dataset from `scenario` with interest coefficient `psi_true`; nuisance
/// coefficients are zero.
///
/// binary-arm: arms of size ⌈3n/4⌉ (z = 1) and the rest (z = 0); n/2 subjects,
/// all from the larger arm, get Uniform[0, 4] censoring.
pub fn scenario_generate<S: Scalar, R: Rng + ?Sized>(
    scenario: Scenario,
    n: usize,
    psi_true: f64,
    rng: &mut R,
) -> Result<SurvivalSample<S>> {
    if n < 2 {
        return Err(Error::Validation("scenario needs n >= 2".into()));
    }
    let p = scenario.p();
    let mut z = Vec::with_capacity(n * p);
    let mut times = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    match scenario {
        Scenario::BinaryArm => {
            let larger = (3 * n).div_ceil(4);
            let censorable = (n / 2).min(larger);
            for i in 0..n {
                let zi = if i < larger { 1.0 } else { 0.0 };
                let t = exp_draw(rng, (psi_true * zi).exp());
                let c = if i < censorable {
                    rng.random::<f64>() * BINARY_CENSOR_UPPER
                } else {
                    f64::INFINITY
                };
                z.push(zi);
                times.push(t.min(c));
                status.push(t <= c);
            }
        }
        Scenario::Gaussian { .. } | Scenario::ClinicalTrial { .. } => {
            let clinical = matches!(scenario, Scenario::ClinicalTrial { .. });
            let base = if clinical { clinical_trial_hazard() } else { 1.0 };
            for _ in 0..n {
                let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                let t = exp_draw(rng, base * (psi_true * row[0]).exp());
                let c = if clinical {
                    let enrolled = rng.random::<f64>() * CLINICAL_ENROLLMENT_YEARS;
                    CLINICAL_ENROLLMENT_YEARS + CLINICAL_FOLLOWUP_YEARS - enrolled
                } else {
                    rng.random::<f64>() * GAUSSIAN_CENSOR_UPPER
                };
                z.extend_from_slice(&row);
                times.push(t.min(c));
                status.push(t <= c);
            }
        }
    }
    let names = (0..p)
        .map(|j| if j == 0 { "z".to_string() } else { format!("x{j}") })
        .collect();
    // a zero censoring draw is possible in principle; keep times positive
    let times = times
        .into_iter()
        .map(|t| S::lit(t.max(f64::MIN_POSITIVE)))
        .collect();
    SurvivalSample::new(
        times,
        status,
        Matrix::from_row_major(n, p, z.into_iter().map(S::lit).collect()),
        names,
        None,
    )
}
