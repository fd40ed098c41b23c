//! Parametric bootstrap of the signed likelihood root under the reference
//! censoring model, and confidence limits by inverting the bootstrap test.

use rayon::prelude::*;
use serde::Serialize;

use crate::fit::{fit_constrained, fit_root, wald_se, FitOptions, HypothesisSpec, TailPvalues};
use crate::partial_lik::RelativeRiskModel;
use crate::refcensor::{simulate_reference_trial, ReferenceCensoringPlan, RngStream};
use crate::survdata::RankData;
use crate::{Error, Result, Scalar};

pub const DEFAULT_B: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult<S> {
    #[serde(rename = "B")]
    pub b: usize,
    pub completed: usize,
    pub failed: usize,
    pub r_obs: S,
    pub count_le: usize,
    pub count_ge: usize,
    pub p_lower: S,
    pub p_upper: S,
    pub p_two_sided: S,
    pub seed: u64,
    /// Generating parameter `θ̂_ψ`.
    pub theta_gen: Vec<S>,
}

impl<S: Scalar> BootstrapResult<S> {
    pub fn pvalues(&self) -> TailPvalues<S> {
        TailPvalues::from_tails(self.p_lower, self.p_upper)
    }
}

/// `r_b` for trials `0..b`, `None` where a fit failed. Trials run in parallel;
/// the output is in trial order whatever the thread count.
pub fn bootstrap_roots<S, M>(
    rank: &RankData<S>,
    model: &M,
    spec: &HypothesisSpec<S>,
    theta_gen: &[S],
    b: usize,
    seed: u64,
    options: &FitOptions<S>,
) -> Vec<Option<S>>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    let plan = ReferenceCensoringPlan::from_rank(rank);
    let covs = rank.shared_covariates();
    (0..b as u64)
        .into_par_iter()
        .map(|t| {
            let trial = simulate_reference_trial(theta_gen, &covs, &plan, model, RngStream::new(seed, t)).ok()?;
            fit_root(&trial, model, spec, options).ok().map(|f| f.r)
        })
        .collect()
}

/// Tail p-values of `r_obs` against the trial roots, with add-one smoothing;
/// ties count toward both tails.
pub fn tally<S: Scalar>(r_obs: S, roots: &[Option<S>], seed: u64, theta_gen: Vec<S>) -> Result<BootstrapResult<S>> {
    let b = roots.len();
    let done: Vec<S> = roots.iter().flatten().copied().collect();
    let completed = done.len();
    if b == 0 || 2 * completed < b {
        return Err(Error::TooManyFailedTrials { completed, requested: b });
    }
    let count_le = done.iter().filter(|&&r| r <= r_obs).count();
    let count_ge = done.iter().filter(|&&r| r >= r_obs).count();
    let denom = S::from_usize_lossy(completed + 1);
    let p_lower = S::from_usize_lossy(count_le + 1) / denom;
    let p_upper = S::from_usize_lossy(count_ge + 1) / denom;
    let tails = TailPvalues::from_tails(p_lower, p_upper);
    Ok(BootstrapResult {
        b,
        completed,
        failed: b - completed,
        r_obs,
        count_le,
        count_ge,
        p_lower,
        p_upper,
        p_two_sided: tails.two_sided,
        seed,
        theta_gen,
    })
}

/// Bootstrap p-values for `spec` with `b` reference-model trials generated at
/// the constrained estimate; trial `t` uses stream `(seed, t)`.
pub fn bootstrap_pvalue<S, M>(
    rank: &RankData<S>,
    model: &M,
    spec: &HypothesisSpec<S>,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult<S>>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    bootstrap_pvalue_with(rank, model, spec, b, seed, &FitOptions::default())
}

pub fn bootstrap_pvalue_with<S, M>(
    rank: &RankData<S>,
    model: &M,
    spec: &HypothesisSpec<S>,
    b: usize,
    seed: u64,
    options: &FitOptions<S>,
) -> Result<BootstrapResult<S>>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    if b == 0 {
        return Err(Error::Validation("B must be at least 1".into()));
    }
    let fits = fit_root(rank, model, spec, options)?;
    let roots = bootstrap_roots(rank, model, spec, &fits.psi.theta, b, seed, options);
    tally(fits.r, &roots, seed, fits.psi.theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    Bisection,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub side: CiSide,
    pub psi0: f64,
    /// The tail p-value being matched to α (upper tail for the lower limit).
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiEndpoint {
    pub side: CiSide,
    pub value: f64,
    pub method: SearchMethod,
    pub steps: usize,
    /// Final bracket; the endpoint is its midpoint (or interpolated on the grid).
    pub bracket: (f64, f64),
    /// p at the endpoint with the search's own random numbers.
    pub p_recheck: f64,
    /// p at the endpoint with an independent seed.
    pub p_independent: f64,
    pub binomial_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiResult {
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub psi_hat: f64,
    pub se: f64,
    pub lower: Option<CiEndpoint>,
    pub upper: Option<CiEndpoint>,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone)]
pub struct CiOptions {
    /// Per-tail level.
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    pub lower: bool,
    pub upper: bool,
    pub bracket_se: f64,
    pub tol_se: f64,
    pub max_steps: usize,
    pub grid_points: usize,
}

impl CiOptions {
    pub fn new(alpha: f64, b: usize, seed: u64) -> Self {
        Self {
            alpha,
            b,
            seed,
            lower: true,
            upper: true,
            bracket_se: 5.0,
            tol_se: 1e-3,
            max_steps: 40,
            grid_points: 101,
        }
    }
}

struct Search<'a, S: Scalar, M: ?Sized> {
    rank: &'a RankData<S>,
    model: &'a M,
    spec: &'a HypothesisSpec<S>,
    fit_options: FitOptions<S>,
    b: usize,
    side: CiSide,
    trace: Vec<TracePoint>,
}

impl<S: Scalar, M: RelativeRiskModel<S> + ?Sized> Search<'_, S, M> {
    fn p_at(&mut self, psi0: f64, seed: u64, record: bool) -> Result<f64> {
        let spec = self.spec.with_psi0(S::lit(psi0));
        let res = bootstrap_pvalue_with(self.rank, self.model, &spec, self.b, seed, &self.fit_options)?;
        let p = match self.side {
            CiSide::Lower => res.p_upper,
            CiSide::Upper => res.p_lower,
        }
        .as_f64();
        if record {
            self.trace.push(TracePoint { side: self.side, psi0, p });
        }
        Ok(p)
    }
}

/// Two-sided search for the ψ0 values where the one-sided bootstrap p equals
/// α, using the same trial streams at every ψ0.
pub fn invert_ci<S, M>(
    rank: &RankData<S>,
    model: &M,
    spec: &HypothesisSpec<S>,
    options: &CiOptions,
) -> Result<CiResult>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    if !(options.alpha > 0.0 && options.alpha < 0.5) {
        return Err(Error::Validation(format!("alpha must be in (0, 0.5), got {}", options.alpha)));
    }
    if options.b == 0 {
        return Err(Error::Validation("B must be at least 1".into()));
    }
    let fit_options = FitOptions::default();
    let hat = crate::fit::fit_unconstrained(rank, model, &fit_options)?;
    if !hat.converged() {
        return Err(Error::FitFailed("no finite unconstrained estimate".into()));
    }
    let psi_hat = spec.psi(&hat.theta).as_f64();
    let se = wald_se(&hat, spec)?.as_f64();
    // sanity: the constraint at ψ̂ must be fittable
    fit_constrained(rank, model, &spec.with_psi0(S::lit(psi_hat)), &fit_options)?;

    let mut result = CiResult {
        alpha: options.alpha,
        b: options.b,
        seed: options.seed,
        psi_hat,
        se,
        lower: None,
        upper: None,
        trace: Vec::new(),
    };
    for (side, wanted) in [(CiSide::Lower, options.lower), (CiSide::Upper, options.upper)] {
        if !wanted {
            continue;
        }
        let mut search = Search {
            rank,
            model,
            spec,
            fit_options: fit_options.clone(),
            b: options.b,
            side,
            trace: Vec::new(),
        };
        let end = search_endpoint(&mut search, psi_hat, se, options)?;
        result.trace.append(&mut search.trace);
        match side {
            CiSide::Lower => result.lower = Some(end),
            CiSide::Upper => result.upper = Some(end),
        }
    }
    Ok(result)
}

fn search_endpoint<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    search: &mut Search<'_, S, M>,
    psi_hat: f64,
    se: f64,
    options: &CiOptions,
) -> Result<CiEndpoint> {
    let alpha = options.alpha;
    let seed = options.seed;
    // `far` is where the hypothesis is rejected, `near` = ψ̂ where it is not
    let far = match search.side {
        CiSide::Lower => psi_hat - options.bracket_se * se,
        CiSide::Upper => psi_hat + options.bracket_se * se,
    };
    let p_far = search.p_at(far, seed, true)?;
    let p_near = search.p_at(psi_hat, seed, true)?;
    if !(p_far < alpha && p_near >= alpha) {
        let (lo, hi, p_lo, p_hi) = match search.side {
            CiSide::Lower => (far, psi_hat, p_far, p_near),
            CiSide::Upper => (psi_hat, far, p_near, p_far),
        };
        return Err(Error::NoSignChange { lo, hi, p_lo, p_hi });
    }

    let (mut reject, mut accept) = (far, psi_hat);
    let mut visited = vec![(far, p_far), (psi_hat, p_near)];
    let mut steps = 0;
    let mut monotone = true;
    while steps < options.max_steps && (accept - reject).abs() >= options.tol_se * se {
        let mid = 0.5 * (reject + accept);
        let p = search.p_at(mid, seed, true)?;
        visited.push((mid, p));
        steps += 1;
        if p < alpha {
            reject = mid;
        } else {
            accept = mid;
        }
        if !is_monotone(&mut visited, psi_hat) {
            monotone = false;
            break;
        }
    }

    let (value, method, bracket) = if monotone {
        let (a, b) = (reject.min(accept), reject.max(accept));
        (0.5 * (a + b), SearchMethod::Bisection, (a, b))
    } else {
        grid_scan(search, far, psi_hat, options)?
    };
    let p_recheck = search.p_at(value, seed, false)?;
    let p_independent = search.p_at(value, RngStream::new(seed, 1).substream(0).seed, false)?;
    Ok(CiEndpoint {
        side: search.side,
        value,
        method,
        steps,
        bracket,
        p_recheck,
        p_independent,
        binomial_se: (alpha * (1.0 - alpha) / options.b as f64).sqrt(),
    })
}

/// p must not decrease as ψ0 moves toward ψ̂.
fn is_monotone(visited: &mut [(f64, f64)], psi_hat: f64) -> bool {
    visited.sort_by(|x, y| (x.0 - psi_hat).abs().total_cmp(&(y.0 - psi_hat).abs()));
    visited.windows(2).all(|w| w[0].1 >= w[1].1)
}

/// Grid scan from ψ̂ outward; returns the outermost crossing of α.
fn grid_scan<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    search: &mut Search<'_, S, M>,
    far: f64,
    psi_hat: f64,
    options: &CiOptions,
) -> Result<(f64, SearchMethod, (f64, f64))> {
    let k = options.grid_points.max(2);
    let mut grid = Vec::with_capacity(k);
    for i in 0..k {
        let psi0 = psi_hat + (far - psi_hat) * i as f64 / (k - 1) as f64;
        grid.push((psi0, search.p_at(psi0, options.seed, true)?));
    }
    // last accepted point before the final run of rejections, scanning outward
    let alpha = options.alpha;
    let last_accept = grid.iter().rposition(|&(_, p)| p >= alpha).unwrap_or(0);
    let (a, pa) = grid[last_accept];
    let (b, pb) = grid[(last_accept + 1).min(k - 1)];
    let value = if pa == pb { 0.5 * (a + b) } else { a + (b - a) * (pa - alpha) / (pa - pb) };
    Ok((value, SearchMethod::Grid, (a.min(b), a.max(b))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::partial_lik::LogLinear;
    use crate::refcensor::{scenario_generate, Scenario};
    use crate::survdata::rank_reduce;

    fn dataset(seed: u64, scenario: Scenario, n: usize) -> RankData<f64> {
        let mut rng = RngStream::new(seed, 0).rng();
        rank_reduce(&scenario_generate(scenario, n, 0.0, &mut rng).unwrap()).unwrap()
    }

    #[test]
    fn tally_smoothing_and_ties() {
        let roots = vec![Some(1.0), Some(2.0), None, Some(0.5)];
        let res = tally(-3.0, &roots, 0, vec![]).unwrap();
        assert_eq!((res.completed, res.failed), (3, 1));
        assert_eq!(res.p_lower, 0.25);
        assert_eq!(res.p_upper, 1.0);
        let tie = tally(1.0, &roots, 0, vec![]).unwrap();
        assert_eq!((tie.count_le, tie.count_ge), (2, 2));
        assert!(tie.count_le + tie.count_ge >= tie.completed);
        assert!(matches!(
            tally(0.0, &[None, None, Some(1.0)], 0, vec![]),
            Err(Error::TooManyFailedTrials { completed: 1, requested: 3 })
        ));
    }

    #[test]
    fn deterministic_and_in_range() {
        let rank = dataset(3, Scenario::Gaussian { nuisance: 1 }, 20);
        let spec = HypothesisSpec::coordinate(2, 0, 0.2).unwrap();
        let a = bootstrap_pvalue(&rank, &LogLinear, &spec, 200, 9).unwrap();
        let b = bootstrap_pvalue(&rank, &LogLinear, &spec, 200, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.completed + a.failed, 200);
        for p in [a.p_lower, a.p_upper, a.p_two_sided] {
            assert!(p > 0.0 && p <= 1.0);
        }
        assert!(a.p_lower + a.p_upper >= 1.0);
    }

    #[test]
    fn centre_of_null_gives_large_p() {
        let rank = dataset(5, Scenario::BinaryArm, 20);
        let fit = crate::fit::fit_unconstrained(&rank, &LogLinear, &FitOptions::default()).unwrap();
        let spec = HypothesisSpec::coordinate(1, 0, fit.theta[0]).unwrap();
        let res = bootstrap_pvalue(&rank, &LogLinear, &spec, 400, 1).unwrap();
        assert!(res.r_obs.abs() < 1e-6);
        assert!(res.p_two_sided > 0.8, "{res:?}");
    }

    #[test]
    fn extreme_root_gets_smallest_p() {
        // strong effect in the data, hypothesis far on the other side
        let z = Matrix::from_row_major(8, 1, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let strata = vec![crate::survdata::StratumRanks::from_sequence(
            0,
            vec![],
            &[0, 4, 1, 2, 5, 3, 6, 7],
            &vec![vec![]; 8],
        )];
        let rank = RankData::from_parts(strata, std::sync::Arc::new(z)).unwrap();
        let spec = HypothesisSpec::coordinate(1, 0, -4.0).unwrap();
        let res = bootstrap_pvalue(&rank, &LogLinear, &spec, 99, 2).unwrap();
        assert_eq!(res.count_ge, 0);
        assert_eq!(res.p_upper, 1.0 / (res.completed as f64 + 1.0));
    }

    #[test]
    fn interval_contains_estimate_and_endpoints_recheck() {
        let rank = dataset(8, Scenario::Gaussian { nuisance: 1 }, 30);
        let spec = HypothesisSpec::coordinate(2, 0, 0.0).unwrap();
        let ci = invert_ci(&rank, &LogLinear, &spec, &CiOptions::new(0.05, 300, 4)).unwrap();
        let (lo, hi) = (ci.lower.as_ref().unwrap(), ci.upper.as_ref().unwrap());
        assert!(lo.value < ci.psi_hat && ci.psi_hat < hi.value);
        for e in [lo, hi] {
            assert!((e.bracket.1 - e.bracket.0) < 1e-3 * ci.se || e.steps == 40 || e.method == SearchMethod::Grid);
            assert!((e.p_recheck - 0.05).abs() <= 2.0 * e.binomial_se + 1.0 / 301.0, "{e:?}");
            assert!((e.p_independent - 0.05).abs() <= 4.0 * e.binomial_se, "{e:?}");
        }
        let wide = invert_ci(&rank, &LogLinear, &spec, &CiOptions::new(0.025, 300, 4)).unwrap();
        assert!(wide.lower.unwrap().value <= lo.value && wide.upper.unwrap().value >= hi.value);
    }

    #[test]
    fn monotone_check() {
        let mut v = vec![(0.0, 0.9), (-1.0, 0.01), (-0.5, 0.2)];
        assert!(is_monotone(&mut v, 0.0));
        let mut w = vec![(0.0, 0.9), (-1.0, 0.3), (-0.5, 0.2)];
        assert!(!is_monotone(&mut w, 0.0));
    }
}
