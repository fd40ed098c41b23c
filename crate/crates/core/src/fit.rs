//! Unconstrained and hypothesis-constrained maximization of the partial
//! likelihood, the signed likelihood root, and first-order P-values.

use serde::Serialize;

use crate::linalg::{dot, norm_inf, Matrix};
use crate::partial_lik::{evaluate, LikelihoodEval, Order, RelativeRiskModel};
use crate::survdata::RankData;
use crate::{normal_cdf, normal_sf, Error, Result, Scalar};

/// Hypothesis `ψ(θ) = a·θ = ψ0` together with a fixed nuisance parametrization.
///
/// `(ψ, ν) = Tθ` with `T = [a; B]`, where the rows of `B` are the deterministic
/// orthonormal completion of `a`. `jacobian()` is `T⁻¹ = ∂θ/∂(ψ, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSpec<S> {
    functional: Vec<S>,
    psi0: S,
    basis: Matrix<S>,
    jacobian: Matrix<S>,
}

impl<S: Scalar> HypothesisSpec<S> {
    /// `ψ = θ_index`.
    pub fn coordinate(p: usize, index: usize, psi0: S) -> Result<Self> {
        if index >= p {
            return Err(Error::Validation(format!("coordinate {index} out of range for p = {p}")));
        }
        let mut a = vec![S::zero(); p];
        a[index] = S::one();
        Self::linear(a, psi0)
    }

    /// `ψ = a·θ` with the orthonormal completion obtained by Gram–Schmidt over
    /// the standard basis in index order.
    pub fn linear(functional: Vec<S>, psi0: S) -> Result<Self> {
        let p = functional.len();
        let norm2 = dot(&functional, &functional);
        if p == 0 || !(norm2 > S::zero()) || !norm2.is_finite() {
            return Err(Error::Validation("hypothesis functional must be nonzero and finite".into()));
        }
        let unit: Vec<S> = functional.iter().map(|&x| x / norm2.sqrt()).collect();
        let mut accepted: Vec<Vec<S>> = vec![unit];
        for k in 0..p {
            if accepted.len() == p {
                break;
            }
            let mut v = vec![S::zero(); p];
            v[k] = S::one();
            for _ in 0..2 {
                for q in &accepted {
                    let c = dot(&v, q);
                    v.iter_mut().zip(q).for_each(|(x, &y)| *x = *x - c * y);
                }
            }
            let nv = dot(&v, &v).sqrt();
            if nv > S::lit(1e-6) {
                accepted.push(v.into_iter().map(|x| x / nv).collect());
            }
        }
        let basis = Matrix::from_rows(&accepted[1..]);
        let mut jacobian = Matrix::zeros(p, p);
        for i in 0..p {
            jacobian[(i, 0)] = functional[i] / norm2;
            for j in 1..p {
                jacobian[(i, j)] = basis[(j - 1, i)];
            }
        }
        Ok(Self {
            functional,
            psi0,
            basis,
            jacobian,
        })
    }

    /// Caller-supplied completion; its rows together with `a` must be invertible.
    pub fn with_completion(functional: Vec<S>, psi0: S, basis: Matrix<S>) -> Result<Self> {
        let p = functional.len();
        if basis.rows() + 1 != p || basis.cols() != p {
            return Err(Error::Validation("completion basis must be (p-1)×p".into()));
        }
        let mut t = Matrix::zeros(p, p);
        t.row_mut(0).copy_from_slice(&functional);
        for i in 1..p {
            t.row_mut(i).copy_from_slice(basis.row(i - 1));
        }
        let jacobian = t
            .inverse()
            .filter(|m| m.is_finite())
            .ok_or_else(|| Error::Validation("functional and completion are not invertible".into()))?;
        Ok(Self {
            functional,
            psi0,
            basis,
            jacobian,
        })
    }

    pub fn with_psi0(&self, psi0: S) -> Self {
        Self {
            psi0,
            ..self.clone()
        }
    }

    pub fn p(&self) -> usize {
        self.functional.len()
    }

    pub fn functional(&self) -> &[S] {
        &self.functional
    }

    pub fn psi0(&self) -> S {
        self.psi0
    }

    pub fn basis(&self) -> &Matrix<S> {
        &self.basis
    }

    /// `∂θ/∂(ψ, ν)`; column 0 is the ψ direction.
    pub fn jacobian(&self) -> &Matrix<S> {
        &self.jacobian
    }

    pub fn psi(&self, theta: &[S]) -> S {
        dot(&self.functional, theta)
    }

    /// Expresses a θ-space information matrix in `(ψ, ν)` coordinates.
    pub fn to_psi_nu(&self, info: &Matrix<S>) -> Matrix<S> {
        info.congruence(&self.jacobian)
    }

    fn offset(&self) -> Vec<S> {
        (0..self.p()).map(|i| self.jacobian[(i, 0)] * self.psi0).collect()
    }

    fn nuisance_jacobian(&self) -> Matrix<S> {
        let p = self.p();
        let cols: Vec<usize> = (1..p).collect();
        let rows: Vec<usize> = (0..p).collect();
        self.jacobian.submatrix(&rows, &cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    /// Likelihood still increasing toward an infinite estimate; `loglik` is the plateau value.
    MonotoneDivergent,
    Failed,
}

#[derive(Debug, Clone)]
pub struct FitOptions<S> {
    pub grad_tol: S,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub divergence_bound: S,
    pub plateau_tol: S,
    /// A Newton step at least this long with a converged gradient marks a flat, divergent direction.
    pub flat_step: S,
}

impl<S: Scalar> Default for FitOptions<S> {
    fn default() -> Self {
        Self {
            grad_tol: S::default_grad_tol(),
            max_iter: 50,
            max_halvings: 30,
            divergence_bound: S::lit(50.0),
            plateau_tol: S::lit(1e-10),
            flat_step: S::lit(0.25),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<S> {
    pub theta: Vec<S>,
    pub loglik: S,
    /// Full θ-space score at `theta`.
    pub score: Vec<S>,
    /// Sup-norm of the score in the free directions.
    pub score_norm: S,
    pub observed_info: Matrix<S>,
    pub status: FitStatus,
    pub iterations: usize,
}

impl<S: Scalar> FitResult<S> {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    /// Usable for a likelihood-ratio statistic: converged or a plateaued divergence.
    pub fn usable(&self) -> bool {
        self.status != FitStatus::Failed
    }
}

pub fn fit_unconstrained<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    options: &FitOptions<S>,
) -> Result<FitResult<S>> {
    let p = rank.p();
    if p == 0 {
        return Err(Error::Validation("no covariates".into()));
    }
    newton(rank, model, vec![S::zero(); p], &Matrix::identity(p), options)
}

/// Maximizes over ν with ψ fixed at `spec.psi0()`.
pub fn fit_constrained<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    spec: &HypothesisSpec<S>,
    options: &FitOptions<S>,
) -> Result<FitResult<S>> {
    if spec.p() != rank.p() {
        return Err(Error::Validation(format!(
            "hypothesis has dimension {} but data have {} covariates",
            spec.p(),
            rank.p()
        )));
    }
    newton(rank, model, spec.offset(), &spec.nuisance_jacobian(), options)
}

fn affine<S: Scalar>(offset: &[S], jac: &Matrix<S>, nu: &[S]) -> Vec<S> {
    let mut theta = offset.to_vec();
    if !nu.is_empty() {
        for (t, d) in theta.iter_mut().zip(jac.mul_vec(nu)) {
            *t = *t + d;
        }
    }
    theta
}

/// Cholesky solve with escalating ridge; `None` if every attempt fails.
fn regularized_solve<S: Scalar>(h: &Matrix<S>, g: &[S]) -> Option<Vec<S>> {
    if let Some(c) = h.cholesky() {
        return Some(c.solve(g));
    }
    let scale = (0..h.rows()).fold(S::zero(), |m, i| m.max(h[(i, i)].abs())).max(S::epsilon());
    let mut ridge = S::lit(1e-10);
    for _ in 0..9 {
        let mut hr = h.clone();
        for i in 0..h.rows() {
            hr[(i, i)] = hr[(i, i)] + ridge * scale;
        }
        if let Some(c) = hr.cholesky() {
            return Some(c.solve(g));
        }
        ridge = ridge * S::lit(10.0);
    }
    None
}

fn newton<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    offset: Vec<S>,
    jac: &Matrix<S>,
    opts: &FitOptions<S>,
) -> Result<FitResult<S>> {
    let q = jac.cols();
    let mut nu = vec![S::zero(); q];
    let mut theta = affine(&offset, jac, &nu);
    let mut ev = evaluate(rank, model, &theta, Order::Information)?;

    let finish = |theta: Vec<S>, ev: LikelihoodEval<S>, gnorm: S, status, iterations| FitResult {
        theta,
        loglik: ev.loglik,
        score: ev.score,
        score_norm: gnorm,
        observed_info: ev.information,
        status,
        iterations,
    };

    if q == 0 {
        return Ok(finish(theta, ev, S::zero(), FitStatus::Converged, 0));
    }

    let mut iterations = 0;
    loop {
        let g = jac.tr_mul_vec(&ev.score);
        let h = ev.information.congruence(jac);
        let gnorm = norm_inf(&g);
        let theta_norm = norm_inf(&theta);
        let Some(step) = regularized_solve(&h, &g) else {
            if gnorm < opts.grad_tol && theta_norm > S::one() {
                return Ok(finish(theta, ev, gnorm, FitStatus::MonotoneDivergent, iterations));
            }
            return Err(Error::SingularInformation {
                theta: theta.iter().map(|t| t.as_f64()).collect(),
            });
        };
        let step_norm = norm_inf(&step);
        if gnorm < opts.grad_tol {
            let status = if step_norm < opts.flat_step {
                FitStatus::Converged
            } else {
                FitStatus::MonotoneDivergent
            };
            return Ok(finish(theta, ev, gnorm, status, iterations));
        }
        if iterations == opts.max_iter {
            let status = if theta_norm > opts.divergence_bound {
                FitStatus::MonotoneDivergent
            } else {
                FitStatus::Failed
            };
            return Ok(finish(theta, ev, gnorm, status, iterations));
        }

        let mut t = S::one();
        let mut accepted = None;
        // quadratic regime: the predicted gain is below loglik rounding, so
        // comparisons of ℓ are meaningless; take the full Newton step
        let noise = S::lit(64.0) * S::epsilon() * (S::one() + ev.loglik.abs());
        if S::lit(0.5) * dot(&g, &step) < noise {
            let cand_nu: Vec<S> = nu.iter().zip(&step).map(|(&a, &d)| a + d).collect();
            let cand = affine(&offset, jac, &cand_nu);
            if let Ok(l) = evaluate(rank, model, &cand, Order::Value) {
                accepted = Some((cand_nu, cand, l.loglik));
            }
        }
        for _ in 0..=opts.max_halvings {
            if accepted.is_some() {
                break;
            }
            let cand_nu: Vec<S> = nu.iter().zip(&step).map(|(&a, &d)| a + t * d).collect();
            let cand = affine(&offset, jac, &cand_nu);
            if let Ok(l) = evaluate(rank, model, &cand, Order::Value) {
                if l.loglik >= ev.loglik {
                    accepted = Some((cand_nu, cand, l.loglik));
                    break;
                }
            }
            t = t * S::lit(0.5);
        }
        iterations += 1;
        let Some((new_nu, new_theta, new_ll)) = accepted else {
            // no ascent possible along the Newton direction: numerically stationary or stuck
            let status = if gnorm < opts.grad_tol * S::lit(100.0) {
                FitStatus::Converged
            } else {
                FitStatus::Failed
            };
            return Ok(finish(theta, ev, gnorm, status, iterations));
        };
        let gain = new_ll - ev.loglik;
        nu = new_nu;
        theta = new_theta;
        ev = evaluate(rank, model, &theta, Order::Information)?;
        if norm_inf(&theta) > opts.divergence_bound && gain < opts.plateau_tol {
            let gnorm = norm_inf(&jac.tr_mul_vec(&ev.score));
            return Ok(finish(theta, ev, gnorm, FitStatus::MonotoneDivergent, iterations));
        }
    }
}

/// Loglik differences below this (in absolute value) are treated as rounding noise.
const LR_NOISE: f64 = 1e-10;

/// `r = sgn(ψ̂ − ψ0) [2{ℓ(θ̂) − ℓ(θ̂_ψ)}]^{1/2}`.
pub fn signed_root<S: Scalar>(
    fit_hat: &FitResult<S>,
    fit_psi: &FitResult<S>,
    spec: &HypothesisSpec<S>,
) -> Result<S> {
    let mut drop = fit_hat.loglik - fit_psi.loglik;
    if drop < S::zero() {
        if drop > -S::lit(LR_NOISE) {
            drop = S::zero();
        } else {
            return Err(Error::InconsistentFits { excess: -drop.as_f64() });
        }
    }
    let diff = spec.psi(&fit_hat.theta) - spec.psi0();
    let sign = if diff > S::zero() {
        S::one()
    } else if diff < S::zero() {
        -S::one()
    } else {
        S::zero()
    };
    Ok(sign * (S::lit(2.0) * drop).sqrt())
}

/// Unconstrained and constrained fits with their signed root.
#[derive(Debug, Clone)]
pub struct RootFits<S> {
    pub hat: FitResult<S>,
    pub psi: FitResult<S>,
    pub r: S,
}

/// Fits both models and forms `r`; a failed fit on either side is an error.
pub fn fit_root<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    spec: &HypothesisSpec<S>,
    options: &FitOptions<S>,
) -> Result<RootFits<S>> {
    let hat = fit_unconstrained(rank, model, options)?;
    if !hat.usable() {
        return Err(Error::FitFailed(format!("unconstrained fit after {} iterations", hat.iterations)));
    }
    let psi = fit_constrained(rank, model, spec, options)?;
    if !psi.usable() {
        return Err(Error::FitFailed(format!("constrained fit after {} iterations", psi.iterations)));
    }
    let r = signed_root(&hat, &psi, spec)?;
    Ok(RootFits { hat, psi, r })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPvalues<S> {
    pub lower: S,
    pub upper: S,
    pub two_sided: S,
}

impl<S: Scalar> TailPvalues<S> {
    pub fn from_tails(lower: S, upper: S) -> Self {
        Self {
            lower,
            upper,
            two_sided: (S::lit(2.0) * lower.min(upper)).min(S::one()),
        }
    }
}

/// `(Φ(r), 1 − Φ(r), two-sided)`.
pub fn first_order_pvalues<S: Scalar>(r: S) -> TailPvalues<S> {
    TailPvalues::from_tails(normal_cdf(r), normal_sf(r))
}

/// Wald standard error `(aᵀ ĵ⁻¹ a)^{1/2}` of `ψ̂`.
pub fn wald_se<S: Scalar>(fit_hat: &FitResult<S>, spec: &HypothesisSpec<S>) -> Result<S> {
    let a = spec.functional();
    let c = fit_hat.observed_info.cholesky().ok_or_else(|| Error::SingularInformation {
        theta: fit_hat.theta.iter().map(|t| t.as_f64()).collect(),
    })?;
    Ok(dot(a, &c.solve(a)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partial_lik::{log_partial_likelihood, LogLinear};
    use crate::survdata::{rank_reduce, SurvivalSample};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(times: &[f64], status: &[bool], z: &[f64], p: usize, strata: Option<Vec<i64>>) -> RankData<f64> {
        let n = times.len();
        rank_reduce(
            &SurvivalSample::new(
                times.to_vec(),
                status.to_vec(),
                Matrix::from_row_major(n, p, z.to_vec()),
                (0..p).map(|k| format!("z{k}")).collect(),
                strata,
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize) -> RankData<f64> {
        let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
        let mut status: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.8).collect();
        status[0] = true;
        let z: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        data(&times, &status, &z, p, None)
    }

    #[test]
    fn mirrored_strata_give_zero() {
        let r = data(
            &[1.0, 2.0, 2.0, 1.0],
            &[true; 4],
            &[1.0, 0.0, 1.0, 0.0],
            1,
            Some(vec![1, 1, 2, 2]),
        );
        let f = fit_unconstrained(&r, &LogLinear, &FitOptions::default()).unwrap();
        assert!(f.converged());
        assert!(f.theta[0].abs() < 1e-12);
    }

    #[test]
    fn separation_is_flagged() {
        // exposed subject fails last
        let r = data(&[3.0, 1.0, 2.0], &[true; 3], &[1.0, 0.0, 0.0], 1, None);
        let f = fit_unconstrained(&r, &LogLinear, &FitOptions::default()).unwrap();
        assert_eq!(f.status, FitStatus::MonotoneDivergent);
        assert!(f.theta[0] < -5.0);
        assert!(f.loglik.is_finite() && (f.loglik - -(2f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn grid_oracle_p1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let r = random_data(&mut rng, 6, 1);
            let f = fit_unconstrained(&r, &LogLinear, &FitOptions::default()).unwrap();
            if !f.converged() {
                continue;
            }
            // grid search on [-10, 10] refined twice
            let mut center = 0.0;
            let mut half = 10.0;
            for _ in 0..4 {
                let (mut best, mut best_l) = (center, f64::NEG_INFINITY);
                for k in 0..=2000 {
                    let t = center - half + 2.0 * half * k as f64 / 2000.0;
                    let l = log_partial_likelihood(&r, &LogLinear, &[t]).unwrap();
                    if l > best_l {
                        best_l = l;
                        best = t;
                    }
                }
                center = best;
                half /= 100.0;
            }
            assert!((f.theta[0] - center).abs() < 1e-4, "{} vs {}", f.theta[0], center);
            assert!(f.score_norm < 1e-8);
            assert!(f.observed_info[(0, 0)] > 0.0);
        }
    }

    #[test]
    fn constrained_p1_is_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_data(&mut rng, 6, 1);
        let spec = HypothesisSpec::coordinate(1, 0, 0.3).unwrap();
        let f = fit_constrained(&r, &LogLinear, &spec, &FitOptions::default()).unwrap();
        assert_eq!(f.theta, vec![0.3]);
        assert_eq!(f.loglik, log_partial_likelihood(&r, &LogLinear, &[0.3]).unwrap());
    }

    #[test]
    fn constraint_at_mle_reproduces_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_data(&mut rng, 15, 3);
        let opts = FitOptions::default();
        let fh = fit_unconstrained(&r, &LogLinear, &opts).unwrap();
        assert!(fh.converged());
        let spec = HypothesisSpec::linear(vec![1.0, -0.5, 2.0], 0.0).unwrap();
        let spec = spec.with_psi0(spec.psi(&fh.theta));
        let fc = fit_constrained(&r, &LogLinear, &spec, &opts).unwrap();
        for (a, b) in fh.theta.iter().zip(&fc.theta) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(signed_root(&fh, &fc, &spec).unwrap().abs() < 1e-6);
    }

    #[test]
    fn profile_grid_oracle_p2() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = random_data(&mut rng, 8, 2);
        let spec = HypothesisSpec::coordinate(2, 0, 0.4).unwrap();
        let f = fit_constrained(&r, &LogLinear, &spec, &FitOptions::default()).unwrap();
        assert!(f.converged());
        let mut center = 0.0;
        let mut half = 10.0;
        for _ in 0..3 {
            let (mut best, mut best_l) = (center, f64::NEG_INFINITY);
            for k in 0..=2000 {
                let v = center - half + 2.0 * half * k as f64 / 2000.0;
                let l = log_partial_likelihood(&r, &LogLinear, &[0.4, v]).unwrap();
                if l > best_l {
                    best_l = l;
                    best = v;
                }
            }
            center = best;
            half /= 100.0;
        }
        assert_eq!(f.theta[0], 0.4);
        assert!((f.theta[1] - center).abs() < 1e-3);
    }

    #[test]
    fn signed_root_arithmetic() {
        let spec = HypothesisSpec::coordinate(1, 0, 0.0).unwrap();
        let mk = |theta: f64, loglik: f64| FitResult {
            theta: vec![theta],
            loglik,
            score: vec![0.0],
            score_norm: 0.0,
            observed_info: Matrix::identity(1),
            status: FitStatus::Converged,
            iterations: 0,
        };
        assert_eq!(signed_root(&mk(1.0, -3.0), &mk(0.0, -5.0), &spec).unwrap(), 2.0);
        assert_eq!(signed_root(&mk(-1.0, -3.0), &mk(0.0, -5.0), &spec).unwrap(), -2.0);
        assert_eq!(signed_root(&mk(0.0, -3.0), &mk(0.0, -3.0), &spec).unwrap(), 0.0);
        assert_eq!(signed_root(&mk(1.0, -3.0), &mk(0.0, -3.0 + 1e-12), &spec).unwrap(), 0.0);
        assert!(matches!(
            signed_root(&mk(1.0, -3.0), &mk(0.0, -2.9), &spec),
            Err(Error::InconsistentFits { .. })
        ));
    }

    #[test]
    fn first_order_tails() {
        let p = first_order_pvalues(0.0f64);
        assert_eq!((p.lower, p.upper, p.two_sided), (0.5, 0.5, 1.0));
        assert!((first_order_pvalues(1.645f64).upper - 0.05).abs() < 1e-4);
        assert!((first_order_pvalues(-1.96f64).lower - 0.025).abs() < 1e-4);
    }

    #[test]
    fn r_sign_matches_wald_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let opts = FitOptions::default();
        for _ in 0..10 {
            let r = random_data(&mut rng, 20, 2);
            let fh = fit_unconstrained(&r, &LogLinear, &opts).unwrap();
            if !fh.converged() {
                continue;
            }
            let base = HypothesisSpec::coordinate(2, 1, 0.0).unwrap();
            let se = wald_se(&fh, &base).unwrap();
            let psi_hat = fh.theta[1];
            let mut prev = f64::INFINITY;
            for k in 0..=30 {
                let psi0 = psi_hat - 3.0 * se + 6.0 * se * k as f64 / 30.0;
                let spec = base.with_psi0(psi0);
                let fc = fit_constrained(&r, &LogLinear, &spec, &opts).unwrap();
                assert!(fh.loglik >= fc.loglik - 1e-10);
                let rr = signed_root(&fh, &fc, &spec).unwrap();
                if (psi_hat - psi0).abs() > 1e-6 {
                    assert_eq!(rr > 0.0, psi_hat > psi0);
                }
                assert!(rr <= prev + 1e-9);
                prev = rr;
            }
        }
    }

    #[test]
    fn completion_is_orthonormal_and_invertible() {
        let spec = HypothesisSpec::<f64>::linear(vec![1.0, 2.0, -1.0], 0.5).unwrap();
        let b = spec.basis();
        for i in 0..2 {
            assert!(dot(b.row(i), spec.functional()).abs() < 1e-12);
            assert!((dot(b.row(i), b.row(i)) - 1.0).abs() < 1e-12);
        }
        let theta = spec.jacobian().mul_vec(&[0.5, 0.3, -0.2]);
        assert!((spec.psi(&theta) - 0.5).abs() < 1e-12);
        let coord = HypothesisSpec::<f64>::coordinate(3, 1, 0.0).unwrap();
        assert_eq!(coord.basis().row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(coord.basis().row(1), &[0.0, 0.0, 1.0]);
        assert!(HypothesisSpec::linear(vec![0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn f32_fit() {
        let r = rank_reduce(
            &SurvivalSample::<f32>::new(
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                vec![true; 6],
                Matrix::from_row_major(6, 1, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
                vec!["z".into()],
                None,
            )
            .unwrap(),
        )
        .unwrap();
        let f = fit_unconstrained(&r, &LogLinear, &FitOptions::default()).unwrap();
        assert!(f.converged(), "{:?}", f.status);
        let f64fit = fit_unconstrained(
            &rank_reduce(
                &SurvivalSample::<f64>::new(
                    vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                    vec![true; 6],
                    Matrix::from_row_major(6, 1, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
                    vec!["z".into()],
                    None,
                )
                .unwrap(),
            )
            .unwrap(),
            &LogLinear,
            &FitOptions::default(),
        )
        .unwrap();
        assert!((f.theta[0] as f64 - f64fit.theta[0]).abs() < 1e-4);
    }
}
