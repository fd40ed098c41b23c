//! Log partial likelihood, score and observed information for relative-risk
//! models evaluated on [`RankData`].
//!
//! Risk-set sums are accumulated backwards over each stratum's exit order, so a
//! full evaluation costs O(n·p²) rather than O(n²·p²). The accumulator keeps a
//! running maximum of the log relative risks and rescales when it grows, which
//! keeps every risk-set sum in floating-point range.

use crate::linalg::{dot, Matrix};
use crate::survdata::RankData;
use crate::{Error, Result, Scalar};

/// Relative risk `RR(z, θ) = exp(η(z, θ))` with derivatives of `η` in `θ`.
pub trait RelativeRiskModel<S: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Loglinear models have `∇η = z` and `∇²η = 0`; the evaluator uses a fast path.
    fn is_loglinear(&self) -> bool {
        false
    }

    fn log_risk(&self, z: &[S], theta: &[S]) -> S;

    fn log_risk_gradient(&self, z: &[S], theta: &[S], grad: &mut [S]);

    /// Writes the p×p Hessian of `η` row-major into `hess`.
    fn log_risk_hessian(&self, z: &[S], theta: &[S], hess: &mut [S]);
}

/// `RR(z, θ) = exp(z·θ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogLinear;

impl<S: Scalar> RelativeRiskModel<S> for LogLinear {
    fn name(&self) -> &'static str {
        "loglinear"
    }

    fn is_loglinear(&self) -> bool {
        true
    }

    #[inline]
    fn log_risk(&self, z: &[S], theta: &[S]) -> S {
        dot(z, theta)
    }

    fn log_risk_gradient(&self, z: &[S], _theta: &[S], grad: &mut [S]) {
        grad.copy_from_slice(z);
    }

    fn log_risk_hessian(&self, _z: &[S], _theta: &[S], hess: &mut [S]) {
        hess.iter_mut().for_each(|h| *h = S::zero());
    }
}

/// How many derivatives to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Score,
    Information,
}

#[derive(Debug, Clone)]
pub struct LikelihoodEval<S> {
    pub loglik: S,
    /// Empty unless requested.
    pub score: Vec<S>,
    /// 0×0 unless requested.
    pub information: Matrix<S>,
}

pub fn log_partial_likelihood<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    theta: &[S],
) -> Result<S> {
    evaluate(rank, model, theta, Order::Value).map(|e| e.loglik)
}

pub fn score<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    theta: &[S],
) -> Result<Vec<S>> {
    evaluate(rank, model, theta, Order::Score).map(|e| e.score)
}

/// `j(θ) = −∂²ℓ/∂θ∂θᵀ`, symmetric by construction.
pub fn observed_information<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    theta: &[S],
) -> Result<Matrix<S>> {
    evaluate(rank, model, theta, Order::Information).map(|e| e.information)
}

struct Accumulator<S> {
    max: S,
    s0: S,
    s1: Vec<S>,
    s2: Vec<S>,
}

impl<S: Scalar> Accumulator<S> {
    fn new(p: usize, order: Order) -> Self {
        Self {
            max: S::neg_infinity(),
            s0: S::zero(),
            s1: if order >= Order::Score { vec![S::zero(); p] } else { Vec::new() },
            s2: if order >= Order::Information { vec![S::zero(); p * p] } else { Vec::new() },
        }
    }

    /// Adds one subject with log risk `eta`, `η` gradient `g` and `η` Hessian `h` (may be empty).
    #[inline]
    fn add(&mut self, eta: S, g: &[S], h: &[S]) {
        if eta > self.max {
            let scale = if self.max == S::neg_infinity() {
                S::zero()
            } else {
                (self.max - eta).exp()
            };
            self.s0 = self.s0 * scale;
            self.s1.iter_mut().for_each(|x| *x = *x * scale);
            self.s2.iter_mut().for_each(|x| *x = *x * scale);
            self.max = eta;
        }
        let w = (eta - self.max).exp();
        self.s0 = self.s0 + w;
        if self.s1.is_empty() {
            return;
        }
        for (s, &gk) in self.s1.iter_mut().zip(g) {
            *s = *s + w * gk;
        }
        if self.s2.is_empty() {
            return;
        }
        let p = g.len();
        for a in 0..p {
            let wa = w * g[a];
            let row = &mut self.s2[a * p..(a + 1) * p];
            for b in a..p {
                row[b] = row[b] + wa * g[b];
            }
            if !h.is_empty() {
                for b in a..p {
                    row[b] = row[b] + w * h[a * p + b];
                }
            }
        }
    }

    #[inline]
    fn log_sum(&self) -> S {
        self.max + self.s0.ln()
    }
}

/// Evaluates `ℓ` and, per `order`, `U` and `j` in one backward pass per stratum.
pub fn evaluate<S: Scalar, M: RelativeRiskModel<S> + ?Sized>(
    rank: &RankData<S>,
    model: &M,
    theta: &[S],
    order: Order,
) -> Result<LikelihoodEval<S>> {
    let z = rank.covariates();
    let p = z.cols();
    assert_eq!(theta.len(), p, "theta has wrong dimension");
    let non_finite = || Error::NonFinite {
        theta: theta.iter().map(|t| t.as_f64()).collect(),
    };
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(non_finite());
    }
    let n = z.rows();
    let loglinear = model.is_loglinear();

    // per-subject η, and for general models ∇η and ∇²η
    let mut eta = vec![S::zero(); n];
    let mut grads = Vec::new();
    let mut hess = Vec::new();
    if !loglinear && order >= Order::Score {
        grads = vec![S::zero(); n * p];
    }
    if !loglinear && order >= Order::Information {
        hess = vec![S::zero(); n * p * p];
    }
    for st in rank.strata() {
        for &j in &st.exit_order {
            let zj = z.row(j);
            let e = model.log_risk(zj, theta);
            if !e.is_finite() {
                return Err(non_finite());
            }
            eta[j] = e;
            if !grads.is_empty() {
                model.log_risk_gradient(zj, theta, &mut grads[j * p..(j + 1) * p]);
            }
            if !hess.is_empty() {
                model.log_risk_hessian(zj, theta, &mut hess[j * p * p..(j + 1) * p * p]);
            }
        }
    }
    let grad_of = |j: usize| -> &[S] {
        if loglinear {
            z.row(j)
        } else {
            &grads[j * p..(j + 1) * p]
        }
    };
    let hess_of = |j: usize| -> &[S] {
        if hess.is_empty() {
            &[]
        } else {
            &hess[j * p * p..(j + 1) * p * p]
        }
    };

    let mut loglik = S::zero();
    let mut u = if order >= Order::Score { vec![S::zero(); p] } else { Vec::new() };
    let mut info = if order >= Order::Information { Matrix::zeros(p, p) } else { Matrix::zeros(0, 0) };
    let mut mean = vec![S::zero(); p];

    for st in rank.strata() {
        let mut acc = Accumulator::new(p, order);
        let mut ptr = st.exit_order.len();
        for i in (0..st.m()).rev() {
            while ptr > st.risk_start[i] {
                ptr -= 1;
                let j = st.exit_order[ptr];
                acc.add(eta[j], if order >= Order::Score { grad_of(j) } else { &[] }, hess_of(j));
            }
            let f = st.failing_subject(i);
            loglik = loglik + eta[f] - acc.log_sum();
            if order < Order::Score {
                continue;
            }
            let gf = grad_of(f);
            for k in 0..p {
                mean[k] = acc.s1[k] / acc.s0;
                u[k] = u[k] + gf[k] - mean[k];
            }
            if order < Order::Information {
                continue;
            }
            let hf = hess_of(f);
            for a in 0..p {
                for b in a..p {
                    let mut v = acc.s2[a * p + b] / acc.s0 - mean[a] * mean[b];
                    if !hf.is_empty() {
                        v = v - hf[a * p + b];
                    }
                    info[(a, b)] = info[(a, b)] + v;
                }
            }
        }
    }
    if order >= Order::Information {
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
    }
    if !loglik.is_finite() || u.iter().any(|x| !x.is_finite()) || !info.is_finite() {
        return Err(non_finite());
    }
    Ok(LikelihoodEval {
        loglik,
        score: u,
        information: info,
    })
}
