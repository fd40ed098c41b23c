//! Second-order adjusted roots `r* = r + NP + INF`: the Skovgaard version with
//! likelihood covariances simulated under the reference censoring model, and
//! the fixed-risk-set (multinomial) version that needs only the two fits.

use rayon::prelude::*;
use serde::Serialize;

use crate::fit::{signed_root, wald_se, FitResult, HypothesisSpec};
use crate::linalg::Matrix;
use crate::partial_lik::{evaluate, Order, RelativeRiskModel};
use crate::refcensor::{simulate_reference_trial, ReferenceCensoringPlan, RngStream};
use crate::survdata::RankData;
use crate::{normal_cdf, normal_sf, pairwise_sum, Error, Result, Scalar};

/// Below this |r| the adjustments are at their removable singularity and set to zero.
pub const CONTINUITY_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_R: usize = 2_000;

/// Covariance trials draw from their own stream family, disjoint from bootstrap trials.
const COVARIANCE_STREAM_SALT: u64 = 0x636F_7661_7269_616E;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceSe<S> {
    pub s1: Matrix<S>,
    pub s2: Vec<S>,
    pub i_hat: Matrix<S>,
}

/// Simulated covariances at the unconstrained estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceEstimates<S> {
    /// `cov{U_k(θ̂), U_l(θ̂_ψ)}`.
    pub s1: Matrix<S>,
    /// `cov{U(θ̂), ℓ(θ̂_ψ) − ℓ(θ̂)}`.
    pub s2: Vec<S>,
    /// `var{U(θ̂)}`.
    pub i_hat: Matrix<S>,
    #[serde(rename = "R")]
    pub r: usize,
    pub mc_se: CovarianceSe<S>,
}

struct Moments<S> {
    cov: S,
    se: S,
}

/// Sample covariance of two centred series and the Monte Carlo SE of that
/// estimate (spread of the centred cross products).
fn cross_moment<S: Scalar>(x: &[S], y: &[S], buf: &mut Vec<S>) -> Moments<S> {
    let n = S::from_usize_lossy(x.len());
    buf.clear();
    buf.extend(x.iter().zip(y).map(|(&a, &b)| a * b));
    let mean = pairwise_sum(buf) / n;
    let cov = pairwise_sum(buf) / (n - S::one());
    buf.iter_mut().for_each(|v| *v = (*v - mean) * (*v - mean));
    let var = pairwise_sum(buf) / (n - S::one());
    Moments { cov, se: (var / n).sqrt() }
}

fn centred<S: Scalar>(v: Vec<S>) -> Vec<S> {
    let mean = pairwise_sum(&v) / S::from_usize_lossy(v.len());
    v.into_iter().map(|x| x - mean).collect()
}

/// Runs `r_trials` reference-censoring trials at `theta_hat` with the plan of
/// `rank` and estimates the covariances from those same trials. No fitting is
/// done on the trials.
pub fn estimate_covariances<S, M>(
    rank: &RankData<S>,
    model: &M,
    theta_hat: &[S],
    theta_psi: &[S],
    r_trials: usize,
    seed: u64,
) -> Result<CovarianceEstimates<S>>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    let p = rank.p();
    if r_trials < 2 {
        return Err(Error::Validation("R must be at least 2".into()));
    }
    if theta_hat.len() != p || theta_psi.len() != p {
        return Err(Error::Validation("parameter dimension mismatch".into()));
    }
    if theta_hat.iter().chain(theta_psi).any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            theta: theta_hat.iter().map(|t| t.as_f64()).collect(),
        });
    }
    let plan = ReferenceCensoringPlan::from_rank(rank);
    let covs = rank.shared_covariates();
    let coincident = theta_hat == theta_psi;
    let trials: Vec<(Vec<S>, Vec<S>, S)> = (0..r_trials as u64)
        .into_par_iter()
        .map(|t| {
            let stream = RngStream::new(seed ^ COVARIANCE_STREAM_SALT, t);
            let data = simulate_reference_trial(theta_hat, &covs, &plan, model, stream)?;
            let at_hat = evaluate(&data, model, theta_hat, Order::Score)?;
            if coincident {
                return Ok((at_hat.score.clone(), at_hat.score, S::zero()));
            }
            let at_psi = evaluate(&data, model, theta_psi, Order::Score)?;
            Ok((at_hat.score, at_psi.score, at_psi.loglik - at_hat.loglik))
        })
        .collect::<Result<_>>()?;

    let column = |f: &dyn Fn(&(Vec<S>, Vec<S>, S)) -> S| centred(trials.iter().map(f).collect::<Vec<S>>());
    let u1: Vec<Vec<S>> = (0..p).map(|k| column(&|t| t.0[k])).collect();
    let u2: Vec<Vec<S>> = (0..p).map(|k| column(&|t| t.1[k])).collect();
    let delta = column(&|t| t.2);

    let mut buf = Vec::with_capacity(r_trials);
    let mut s1 = Matrix::zeros(p, p);
    let mut s1_se = Matrix::zeros(p, p);
    let mut i_hat = Matrix::zeros(p, p);
    let mut i_se = Matrix::zeros(p, p);
    let mut s2 = vec![S::zero(); p];
    let mut s2_se = vec![S::zero(); p];
    for k in 0..p {
        for l in 0..p {
            let m = cross_moment(&u1[k], &u2[l], &mut buf);
            s1[(k, l)] = m.cov;
            s1_se[(k, l)] = m.se;
            if l >= k {
                let m = cross_moment(&u1[k], &u1[l], &mut buf);
                i_hat[(k, l)] = m.cov;
                i_hat[(l, k)] = m.cov;
                i_se[(k, l)] = m.se;
                i_se[(l, k)] = m.se;
            }
        }
        let m = cross_moment(&u1[k], &delta, &mut buf);
        s2[k] = m.cov;
        s2_se[k] = m.se;
    }
    if !(s1.is_finite() && i_hat.is_finite() && s2.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite {
            theta: theta_hat.iter().map(|t| t.as_f64()).collect(),
        });
    }
    if i_hat.cholesky().is_none() {
        return Err(Error::SingularExpectedInformation { trials: r_trials });
    }
    Ok(CovarianceEstimates {
        s1,
        s2,
        i_hat,
        r: r_trials,
        mc_se: CovarianceSe {
            s1: s1_se,
            s2: s2_se,
            i_hat: i_se,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoaMethod {
    Skovgaard,
    FixedRiskset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoaResult<S> {
    pub method: HoaMethod,
    pub r: S,
    /// ů_ψ for Skovgaard, the Wald statistic w for the fixed-risk-set version.
    pub u: S,
    /// C_ψ for Skovgaard, ρ^{1/2} for the fixed-risk-set version.
    #[serde(rename = "C")]
    pub c: S,
    #[serde(rename = "NP")]
    pub np: S,
    #[serde(rename = "INF")]
    pub inf: S,
    pub r_star: S,
    pub p_lower: S,
    pub p_upper: S,
}

impl<S: Scalar> HoaResult<S> {
    fn assemble(method: HoaMethod, r: S, u: S, c: S) -> Result<Self> {
        if r.abs() < S::lit(CONTINUITY_THRESHOLD) {
            return Ok(Self::continuity(method, r));
        }
        let u_over_r = u / r;
        if !(u_over_r > S::zero() && c > S::zero()) || !u_over_r.is_finite() || !c.is_finite() {
            return Err(Error::UndefinedAdjustment {
                u_over_r: u_over_r.as_f64(),
                c: c.as_f64(),
            });
        }
        let np = c.ln() / r;
        let inf = u_over_r.ln() / r;
        let r_star = r + np + inf;
        Ok(Self {
            method,
            r,
            u,
            c,
            np,
            inf,
            r_star,
            p_lower: normal_cdf(r_star),
            p_upper: normal_sf(r_star),
        })
    }

    fn continuity(method: HoaMethod, r: S) -> Self {
        let half = S::lit(0.5);
        Self {
            method,
            r,
            u: r,
            c: S::one(),
            np: S::zero(),
            inf: S::zero(),
            r_star: S::zero(),
            p_lower: half,
            p_upper: half,
        }
    }
}

fn det_or_one<S: Scalar>(m: &Matrix<S>) -> S {
    if m.rows() == 0 {
        S::one()
    } else {
        m.det()
    }
}

fn nuisance_block<S: Scalar>(m: &Matrix<S>) -> Matrix<S> {
    let idx: Vec<usize> = (1..m.rows()).collect();
    m.submatrix(&idx, &idx)
}

fn singular<S: Scalar>(theta: &[S]) -> Error {
    Error::SingularInformation {
        theta: theta.iter().map(|t| t.as_f64()).collect(),
    }
}

/// Skovgaard's approximation to Barndorff-Nielsen's r*, with sample-space
/// derivatives replaced by the simulated covariances in `cov`.
pub fn skovgaard_rstar<S: Scalar>(
    fit_hat: &FitResult<S>,
    fit_psi: &FitResult<S>,
    cov: &CovarianceEstimates<S>,
    spec: &HypothesisSpec<S>,
) -> Result<HoaResult<S>> {
    let r = signed_root(fit_hat, fit_psi, spec)?;
    if r.abs() < S::lit(CONTINUITY_THRESHOLD) {
        return Ok(HoaResult::continuity(HoaMethod::Skovgaard, r));
    }
    let p = spec.p();
    let j_hat = &fit_hat.observed_info;
    let i_chol = cov
        .i_hat
        .cholesky()
        .ok_or(Error::SingularExpectedInformation { trials: cov.r })?;
    // î⁻¹ ĵ, column by column
    let mut ij = Matrix::zeros(p, p);
    for col in 0..p {
        let x = i_chol.solve(&(0..p).map(|row| j_hat[(row, col)]).collect::<Vec<_>>());
        for row in 0..p {
            ij[(row, col)] = x[row];
        }
    }
    // mixed derivative ∂²ℓ(θ̂_ψ)/∂θ∂θ̂: rows parameter, columns sample space
    let mixed = cov.s1.transpose().matmul(&ij);
    // ∂{ℓ(θ̂) − ℓ(θ̂_ψ)}/∂θ̂
    let diff = ij.tr_mul_vec(&cov.s2.iter().map(|&v| -v).collect::<Vec<_>>());

    let jac = spec.jacobian();
    let mixed_phi = mixed.congruence(jac);
    let diff_phi = jac.tr_mul_vec(&diff);

    let nu: Vec<usize> = (1..p).collect();
    let a = mixed_phi.submatrix(&nu, &nu);
    let h: Vec<S> = nu.iter().map(|&k| mixed_phi[(k, 0)]).collect();
    let correction = if p > 1 {
        let x = a.lu().ok_or_else(|| singular(&fit_psi.theta))?.solve(&h);
        nu.iter().zip(&x).fold(S::zero(), |acc, (&k, &xi)| acc + diff_phi[k] * xi)
    } else {
        S::zero()
    };
    let profile_derivative = diff_phi[0] - correction;

    let se = wald_se(fit_hat, spec)?;
    let u = profile_derivative * se;
    let det_hat = det_or_one(&nuisance_block(&spec.to_psi_nu(j_hat)));
    let det_psi = det_or_one(&nuisance_block(&spec.to_psi_nu(&fit_psi.observed_info)));
    let c = det_or_one(&a) / (det_hat * det_psi).sqrt();
    HoaResult::assemble(HoaMethod::Skovgaard, r, u, c)
}

/// r* treating each risk set as a fixed multinomial trial: Wald statistic and
/// nuisance-information determinant ratio from the two fits alone.
pub fn fixed_riskset_rstar<S: Scalar>(
    fit_hat: &FitResult<S>,
    fit_psi: &FitResult<S>,
    spec: &HypothesisSpec<S>,
) -> Result<HoaResult<S>> {
    let r = signed_root(fit_hat, fit_psi, spec)?;
    if r.abs() < S::lit(CONTINUITY_THRESHOLD) {
        return Ok(HoaResult::continuity(HoaMethod::FixedRiskset, r));
    }
    let se = wald_se(fit_hat, spec)?;
    let w = (spec.psi(&fit_hat.theta) - spec.psi0()) / se;
    let det_hat = det_or_one(&nuisance_block(&spec.to_psi_nu(&fit_hat.observed_info)));
    let det_psi = det_or_one(&nuisance_block(&spec.to_psi_nu(&fit_psi.observed_info)));
    let rho_sqrt = (det_hat / det_psi).sqrt();
    HoaResult::assemble(HoaMethod::FixedRiskset, r, w, rho_sqrt)
}

/// Fits, simulated covariances and the Skovgaard r* in one call.
pub fn skovgaard_from_data<S, M>(
    fit_hat: &FitResult<S>,
    fit_psi: &FitResult<S>,
    rank: &RankData<S>,
    model: &M,
    spec: &HypothesisSpec<S>,
    r_trials: usize,
    seed: u64,
) -> Result<(HoaResult<S>, CovarianceEstimates<S>)>
where
    S: Scalar,
    M: RelativeRiskModel<S> + ?Sized,
{
    if !fit_hat.converged() {
        return Err(Error::FitFailed("r* needs a finite unconstrained estimate".into()));
    }
    let cov = estimate_covariances(rank, model, &fit_hat.theta, &fit_psi.theta, r_trials, seed)?;
    let res = skovgaard_rstar(fit_hat, fit_psi, &cov, spec)?;
    Ok((res, cov))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NpInfSummary {
    pub count: usize,
    pub mean_np: f64,
    pub mean_inf: f64,
    pub mean_abs_np: f64,
    pub mean_abs_inf: f64,
    /// Least-squares slope of NP on INF.
    pub slope: f64,
    pub intercept: f64,
}

pub fn np_inf_diagnostics<S: Scalar>(results: &[HoaResult<S>]) -> Result<NpInfSummary> {
    let n = results.len();
    if n < 2 {
        return Err(Error::Degenerate("need at least two results".into()));
    }
    let np: Vec<f64> = results.iter().map(|r| r.np.as_f64()).collect();
    let inf: Vec<f64> = results.iter().map(|r| r.inf.as_f64()).collect();
    let mean = |v: &[f64]| pairwise_sum(v) / n as f64;
    let (mn, mi) = (mean(&np), mean(&inf));
    let sxx = pairwise_sum(&inf.iter().map(|x| (x - mi) * (x - mi)).collect::<Vec<_>>());
    let sxy = pairwise_sum(&inf.iter().zip(&np).map(|(x, y)| (x - mi) * (y - mn)).collect::<Vec<_>>());
    if !(sxx > 1e-300) {
        return Err(Error::Degenerate("INF has zero variance".into()));
    }
    let slope = sxy / sxx;
    Ok(NpInfSummary {
        count: n,
        mean_np: mn,
        mean_inf: mi,
        mean_abs_np: mean(&np.iter().map(|v| v.abs()).collect::<Vec<_>>()),
        mean_abs_inf: mean(&inf.iter().map(|v| v.abs()).collect::<Vec<_>>()),
        slope,
        intercept: mn - slope * mi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_root, FitOptions, FitStatus};
    use crate::partial_lik::LogLinear;
    use crate::refcensor::{scenario_generate, Scenario};
    use crate::survdata::rank_reduce;

    fn dataset(seed: u64, scenario: Scenario, n: usize, psi: f64) -> RankData<f64> {
        let mut rng = RngStream::new(seed, 0).rng();
        rank_reduce(&scenario_generate(scenario, n, psi, &mut rng).unwrap()).unwrap()
    }

    fn fit(info: Vec<f64>, theta: Vec<f64>, loglik: f64) -> FitResult<f64> {
        let p = theta.len();
        FitResult {
            score: vec![0.0; p],
            theta,
            loglik,
            score_norm: 0.0,
            observed_info: Matrix::from_row_major(p, p, info),
            status: FitStatus::Converged,
            iterations: 1,
        }
    }

    #[test]
    fn coincident_points_give_exact_identity() {
        let rank = dataset(1, Scenario::Gaussian { nuisance: 2 }, 20, 0.0);
        let theta = [0.2, -0.1, 0.3];
        let c = estimate_covariances(&rank, &LogLinear, &theta, &theta, 300, 5).unwrap();
        assert_eq!(c.s1, c.i_hat);
        assert!(c.s2.iter().all(|&v| v == 0.0));
        assert_eq!(c.r, 300);
    }

    #[test]
    fn covariances_deterministic() {
        let rank = dataset(2, Scenario::Gaussian { nuisance: 1 }, 20, 0.0);
        let a = estimate_covariances(&rank, &LogLinear, &[0.1, 0.0], &[0.0, 0.05], 500, 3).unwrap();
        let b = estimate_covariances(&rank, &LogLinear, &[0.1, 0.0], &[0.0, 0.05], 500, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mc_se_scales_as_root_r() {
        let rank = dataset(3, Scenario::Gaussian { nuisance: 1 }, 20, 0.0);
        let small = estimate_covariances(&rank, &LogLinear, &[0.2, 0.0], &[0.0, 0.0], 4_000, 1).unwrap();
        let big = estimate_covariances(&rank, &LogLinear, &[0.2, 0.0], &[0.0, 0.0], 8_000, 1).unwrap();
        for (s, b) in small.mc_se.i_hat.as_slice().iter().zip(big.mc_se.i_hat.as_slice()) {
            let ratio = s / b;
            assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
        }
    }

    #[test]
    fn continuity_limit() {
        let spec = HypothesisSpec::coordinate(1, 0, 0.5).unwrap();
        let hat = fit(vec![2.0], vec![0.5], -3.0);
        let psi = fit(vec![2.0], vec![0.5], -3.0);
        let cov = CovarianceEstimates {
            s1: Matrix::from_row_major(1, 1, vec![2.0]),
            s2: vec![0.0],
            i_hat: Matrix::from_row_major(1, 1, vec![2.0]),
            r: 10,
            mc_se: CovarianceSe {
                s1: Matrix::zeros(1, 1),
                s2: vec![0.0],
                i_hat: Matrix::zeros(1, 1),
            },
        };
        let res = skovgaard_rstar(&hat, &psi, &cov, &spec).unwrap();
        assert_eq!((res.r_star, res.np, res.inf), (0.0, 0.0, 0.0));
    }

    #[test]
    fn quadratic_likelihood_has_no_adjustment() {
        // ℓ(θ) = −(θ − 1)²·j/2 exactly: S1 = î = ĵ, S2 = −î(θ̂ − θ̃)
        let j = 4.0;
        let spec = HypothesisSpec::coordinate(1, 0, 0.0).unwrap();
        let hat = fit(vec![j], vec![1.0], 0.0);
        let psi = fit(vec![j], vec![0.0], -j / 2.0);
        let cov = CovarianceEstimates {
            s1: Matrix::from_row_major(1, 1, vec![j]),
            s2: vec![-j],
            i_hat: Matrix::from_row_major(1, 1, vec![j]),
            r: 10,
            mc_se: CovarianceSe {
                s1: Matrix::zeros(1, 1),
                s2: vec![0.0],
                i_hat: Matrix::zeros(1, 1),
            },
        };
        let res = skovgaard_rstar(&hat, &psi, &cov, &spec).unwrap();
        assert!((res.r - 2.0).abs() < 1e-12);
        assert!((res.u - 2.0).abs() < 1e-12);
        assert_eq!(res.c, 1.0);
        assert_eq!(res.np, 0.0);
        assert!(res.inf.abs() < 1e-12);
        let fixed = fixed_riskset_rstar(&hat, &psi, &spec).unwrap();
        assert!((fixed.r_star - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_parameter_has_no_np() {
        let rank = dataset(4, Scenario::BinaryArm, 20, 0.0);
        let spec = HypothesisSpec::coordinate(1, 0, 0.8).unwrap();
        let f = fit_root(&rank, &LogLinear, &spec, &FitOptions::default()).unwrap();
        let (res, _) = skovgaard_from_data(&f.hat, &f.psi, &rank, &LogLinear, &spec, 1000, 2).unwrap();
        assert_eq!(res.np, 0.0);
        assert_eq!(res.c, 1.0);
        assert!((res.r_star - (res.r + res.inf)).abs() < 1e-12);
        assert!(res.u / res.r > 0.0);
    }

    #[test]
    fn fixed_riskset_equal_determinants() {
        let spec = HypothesisSpec::coordinate(2, 0, 0.0).unwrap();
        let info = vec![3.0, 0.5, 0.5, 2.0];
        let hat = fit(info.clone(), vec![1.0, 0.2], 0.0);
        let psi = fit(info, vec![0.0, 0.1], -1.2);
        let res = fixed_riskset_rstar(&hat, &psi, &spec).unwrap();
        assert_eq!(res.np, 0.0);
        assert_eq!(res.c, 1.0);
    }

    #[test]
    fn skovgaard_on_gaussian_data() {
        let rank = dataset(6, Scenario::Gaussian { nuisance: 4 }, 20, 0.0);
        let spec = HypothesisSpec::coordinate(5, 0, 0.0).unwrap();
        let f = fit_root(&rank, &LogLinear, &spec, &FitOptions::default()).unwrap();
        let (res, _) = skovgaard_from_data(&f.hat, &f.psi, &rank, &LogLinear, &spec, 2000, 7).unwrap();
        assert!((res.r_star - res.r - res.np - res.inf).abs() < 1e-12);
        assert!(res.r_star.abs() < res.r.abs(), "{res:?}");
        assert!((res.p_lower + res.p_upper - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_slope() {
        let mk = |np: f64, inf: f64| HoaResult {
            method: HoaMethod::Skovgaard,
            r: 1.0,
            u: 1.0,
            c: 1.0,
            np,
            inf,
            r_star: 1.0,
            p_lower: 0.5,
            p_upper: 0.5,
        };
        let rs: Vec<_> = (0..5).map(|i| mk(1.0 + 3.0 * i as f64, i as f64)).collect();
        let s = np_inf_diagnostics(&rs).unwrap();
        assert!((s.slope - 3.0).abs() < 1e-12 && (s.intercept - 1.0).abs() < 1e-12);
        assert!(np_inf_diagnostics(&vec![mk(1.0, 1.0); 4]).is_err());
    }
}
