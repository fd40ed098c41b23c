//! Reference censoring model: uncensored rank generation under a fitted
//! relative risk followed by progressive Type II censoring that reproduces an
//! observed censoring configuration.

mod scenario;

use std::sync::Arc;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::partial_lik::RelativeRiskModel;
use crate::survdata::{RankData, StratumRanks};
use crate::{Error, Result, Scalar};

pub use scenario::{
    clinical_trial_hazard, expected_censoring, scenario_generate, Scenario, BINARY_CENSOR_UPPER,
    CLINICAL_ENROLLMENT_YEARS, CLINICAL_FOLLOWUP_YEARS, GAUSSIAN_CENSOR_UPPER,
};

/// Reproducible random stream identified by `(seed, index)`.
///
/// Streams with the same seed and different indices are ChaCha8 streams under
/// one key. Nested streams (dataset → trial) derive a fresh key by mixing the
/// parent's seed and index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }

    /// Child stream `(derived seed, index)`; distinct parents give unrelated keys.
    pub fn substream(&self, index: u64) -> Self {
        let key = splitmix64(self.seed ^ splitmix64(self.index.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self { seed: key, index }
    }
}

/// Baseline hazard used to draw the latent uncensored times. Ranks do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BaselineHazard {
    #[default]
    Constant,
    /// Cumulative baseline hazard `t^shape`.
    Weibull { shape: f64 },
}

/// Per-stratum cohort and censoring configuration `c = (c0, …, cm)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumPlan {
    pub label: i64,
    pub cohort: Vec<usize>,
    pub config: Vec<usize>,
}

impl StratumPlan {
    pub fn m(&self) -> usize {
        self.config.len() - 1
    }
}

/// Progressive Type II plan copied from analysis data; censored subjects are
/// chosen uniformly from the current risk set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceCensoringPlan {
    pub strata: Vec<StratumPlan>,
}

impl ReferenceCensoringPlan {
    pub fn from_rank<S: Scalar>(rank: &RankData<S>) -> Self {
        Self {
            strata: rank
                .strata()
                .iter()
                .map(|s| StratumPlan {
                    label: s.label,
                    cohort: s.cohort(),
                    config: s.config.clone(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.strata {
            if s.config.is_empty() || s.m() == 0 {
                return Err(Error::NoFailures { stratum: s.label });
            }
            let total = s.m() + s.config.iter().sum::<usize>();
            if total != s.cohort.len() {
                return Err(Error::Validation(format!(
                    "stratum {}: m + sum(c) = {} but cohort has {} subjects",
                    s.label,
                    total,
                    s.cohort.len()
                )));
            }
        }
        Ok(())
    }
}

/// Draws `T_i ~ Exp(RR(z_i, θ))` for `subjects` and returns them in failure order.
pub fn generate_uncensored_ranks<S, M, R>(
    theta: &[S],
    covariates: &Matrix<S>,
    subjects: &[usize],
    model: &M,
    baseline: BaselineHazard,
    rng: &mut R,
) -> Result<Vec<usize>>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
    R: Rng + ?Sized,
{
    let mut keyed: Vec<(S, usize)> = Vec::with_capacity(subjects.len());
    for &i in subjects {
        let eta = model.log_risk(covariates.row(i), theta);
        if !eta.is_finite() {
            return Err(Error::NonFinite {
                theta: theta.iter().map(|t| t.as_f64()).collect(),
            });
        }
        // inverse CDF on (0, 1]: log T = (log E − η) / shape with E unit exponential
        let u = 1.0 - rng.random::<f64>();
        let log_e = S::lit((-u.ln()).ln());
        let log_t = match baseline {
            BaselineHazard::Constant => log_e - eta,
            BaselineHazard::Weibull { shape } => (log_e - eta) / S::lit(shape),
        };
        keyed.push((log_t, i));
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite keys").then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// Censors `config[0]` subjects before the first failure and `config[i]` after
/// the i-th, each time uniformly from the subjects still at risk.
pub fn apply_progressive_type2<R: Rng + ?Sized>(
    ordering: &[usize],
    label: i64,
    config: &[usize],
    rng: &mut R,
) -> Result<StratumRanks> {
    let n = ordering.len();
    if config.is_empty() {
        return Err(Error::Validation("empty censoring configuration".into()));
    }
    let m = config.len() - 1;
    // pool holds rank positions still at risk; slot[pos] is its index in pool
    let mut pool: Vec<usize> = (0..n).collect();
    let mut slot: Vec<usize> = (0..n).collect();
    let mut alive = vec![true; n];
    let mut cursor = 0usize;

    let remove = |pos: usize, pool: &mut Vec<usize>, slot: &mut Vec<usize>, alive: &mut Vec<bool>| {
        let k = slot[pos];
        let last = *pool.last().expect("nonempty pool");
        pool.swap_remove(k);
        if last != pos {
            slot[last] = k;
        }
        alive[pos] = false;
    };

    let censor = |stage: usize,
                      count: usize,
                      pool: &mut Vec<usize>,
                      slot: &mut Vec<usize>,
                      alive: &mut Vec<bool>,
                      rng: &mut R|
     -> Result<Vec<usize>> {
        if count > pool.len() {
            return Err(Error::InfeasiblePlan {
                stage,
                requested: count,
                available: pool.len(),
            });
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let pos = pool[rng.random_range(0..pool.len())];
            remove(pos, pool, slot, alive);
            out.push(ordering[pos]);
        }
        Ok(out)
    };

    let early = censor(0, config[0], &mut pool, &mut slot, &mut alive, rng)?;
    let mut failures = Vec::with_capacity(m);
    let mut censored_after = Vec::with_capacity(m);
    for (stage, &c) in config.iter().enumerate().skip(1) {
        while cursor < n && !alive[cursor] {
            cursor += 1;
        }
        if cursor == n {
            return Err(Error::InfeasiblePlan {
                stage,
                requested: 1,
                available: 0,
            });
        }
        remove(cursor, &mut pool, &mut slot, &mut alive);
        failures.push(ordering[cursor]);
        censored_after.push(censor(stage, c, &mut pool, &mut slot, &mut alive, rng)?);
    }
    if !pool.is_empty() {
        return Err(Error::Validation(format!(
            "plan leaves {} subjects uncensored after the last failure",
            pool.len()
        )));
    }
    Ok(StratumRanks::from_sequence(label, early, &failures, &censored_after))
}

/// One reference-model trial: per stratum, uncensored ranks at `theta` then the
/// stratum's own progressive Type II configuration.
pub fn simulate_reference_trial<S, M>(
    theta: &[S],
    covariates: &Arc<Matrix<S>>,
    plan: &ReferenceCensoringPlan,
    model: &M,
    stream: RngStream,
) -> Result<RankData<S>>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    simulate_reference_trial_with(theta, covariates, plan, model, BaselineHazard::Constant, stream)
}

pub fn simulate_reference_trial_with<S, M>(
    theta: &[S],
    covariates: &Arc<Matrix<S>>,
    plan: &ReferenceCensoringPlan,
    model: &M,
    baseline: BaselineHazard,
    stream: RngStream,
) -> Result<RankData<S>>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    let mut rng = stream.rng();
    let mut strata = Vec::with_capacity(plan.strata.len());
    for sp in &plan.strata {
        let ordering = generate_uncensored_ranks(theta, covariates, &sp.cohort, model, baseline, &mut rng)?;
        strata.push(apply_progressive_type2(&ordering, sp.label, &sp.config, &mut rng)?);
    }
    RankData::from_parts(strata, Arc::clone(covariates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partial_lik::LogLinear;
    use crate::survdata::{rank_reduce, SurvivalSample};
    use std::collections::HashMap;

    fn covs(z: &[f64]) -> Arc<Matrix<f64>> {
        Arc::new(Matrix::from_row_major(z.len(), 1, z.to_vec()))
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = RngStream::new(7, 3).rng().random();
        let b: f64 = RngStream::new(7, 3).rng().random();
        let c: f64 = RngStream::new(7, 4).rng().random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s1 = RngStream::new(7, 3).substream(0);
        let s2 = RngStream::new(7, 4).substream(0);
        assert_ne!(s1.seed, s2.seed);
    }

    #[test]
    fn null_orderings_are_uniform() {
        let z = covs(&[0.5, -1.0, 2.0]);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut rng = RngStream::new(1, 0).rng();
        let draws = 60_000;
        for _ in 0..draws {
            let o = generate_uncensored_ranks(&[0.0], &z, &[0, 1, 2], &LogLinear, BaselineHazard::Constant, &mut rng).unwrap();
            *counts.entry(o).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let e = draws as f64 / 6.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // chi-square with 5 df: mean 5, sd sqrt(10)
        assert!(chi2 < 5.0 + 3.0 * 10f64.sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn competing_exponentials() {
        let z = covs(&[1.0, 0.0]);
        let mut rng = RngStream::new(2, 0).rng();
        let draws = 60_000;
        let first_exposed = (0..draws)
            .filter(|_| {
                generate_uncensored_ranks(&[2f64.ln()], &z, &[0, 1], &LogLinear, BaselineHazard::Constant, &mut rng)
                    .unwrap()[0]
                    == 0
            })
            .count();
        let f = first_exposed as f64 / draws as f64;
        let se = (2.0 / 9.0 / draws as f64).sqrt();
        assert!((f - 2.0 / 3.0).abs() < 3.0 * se, "{f}");
    }

    #[test]
    fn identity_plan_keeps_ordering() {
        let mut rng = RngStream::new(3, 0).rng();
        let s = apply_progressive_type2(&[2, 0, 1], 0, &[0, 0, 0, 0], &mut rng).unwrap();
        assert_eq!(s.failure_order(), vec![2, 0, 1]);
        assert!(s.early_censored.is_empty());
    }

    #[test]
    fn configuration_reproduced_every_trial() {
        let z = covs(&[0.0, 1.0, 0.0, 1.0]);
        let plan = ReferenceCensoringPlan {
            strata: vec![StratumPlan {
                label: 0,
                cohort: vec![0, 1, 2, 3],
                config: vec![1, 1, 0],
            }],
        };
        for t in 0..200 {
            let r = simulate_reference_trial(&[0.7], &z, &plan, &LogLinear, RngStream::new(4, t)).unwrap();
            assert_eq!(r.strata()[0].config, vec![1, 1, 0]);
            assert_eq!(r.strata()[0].m(), 2);
            r.validate().unwrap();
        }
    }

    #[test]
    fn infeasible_plan_errors() {
        let mut rng = RngStream::new(5, 0).rng();
        let err = apply_progressive_type2(&[0, 1, 2], 0, &[0, 3], &mut rng).unwrap_err();
        assert!(matches!(
            err,
            Error::InfeasiblePlan {
                stage: 1,
                requested: 3,
                available: 2
            }
        ));
    }

    #[test]
    fn strata_use_their_own_plans() {
        let s = SurvivalSample::new(
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 4.0],
            vec![true, false, true, false, true, true, false],
            Matrix::from_row_major(7, 1, vec![0.0, 1.0, 0.5, 0.2, -1.0, 1.0, 0.0]),
            vec!["z".into()],
            Some(vec![1, 1, 1, 2, 2, 2, 2]),
        )
        .unwrap();
        let rank = rank_reduce(&s).unwrap();
        let plan = ReferenceCensoringPlan::from_rank(&rank);
        plan.validate().unwrap();
        for t in 0..50 {
            let r = simulate_reference_trial(&[0.3], &rank.shared_covariates(), &plan, &LogLinear, RngStream::new(6, t)).unwrap();
            for (a, b) in r.strata().iter().zip(rank.strata()) {
                assert_eq!(a.config, b.config);
                assert_eq!(a.cohort(), b.cohort());
            }
        }
    }

    #[test]
    fn weibull_baseline_gives_same_ranks() {
        let z = covs(&[0.3, -0.2, 1.0, 0.0]);
        for t in 0..100 {
            let mut r1 = RngStream::new(9, t).rng();
            let mut r2 = RngStream::new(9, t).rng();
            let a = generate_uncensored_ranks(&[0.8], &z, &[0, 1, 2, 3], &LogLinear, BaselineHazard::Constant, &mut r1).unwrap();
            let b = generate_uncensored_ranks(&[0.8], &z, &[0, 1, 2, 3], &LogLinear, BaselineHazard::Weibull { shape: 2.5 }, &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }
}
