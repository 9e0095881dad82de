//! Exponential envelope certificates.
//!
//! For a decay rate `lambda > 0` define
//!
//! ```text
//! p(t) = sum_k e^{lambda (t - h_k(t))} b_k(t) + lambda a(t) e^{lambda (t - g(t))} - lambda
//! ```
//!
//! If `inf p > 0`, `e^{lambda sigma} ||a|| < 1` and `M1 < 1`, every solution
//! satisfies `|x(t)| <= C e^{-lambda (t - t0)} + gain * ||f||_[t0, t]`, where
//! `C` collects the initial data and `gain = M0 / (lambda (1 - ||a||))`.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::criteria::{GeneralEquation, GeneralTerm};
use crate::expr::{EvalError, Expr};
use crate::model::{estimate_norm, sampled_inf, InitialData, NeutralEquation, ScalarFn, Window};

/// Number of uniformly spaced rates probed before bisection.
pub const SCAN_POINTS: usize = 200;

/// Samples per initial segment when estimating history norms.
const SEGMENT_SAMPLES: f64 = 2000.0;

/// The first hypothesis that fails at a given rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clause {
    NonPositiveRate,
    /// `inf p <= 0`.
    DecayMargin {
        alpha: f64,
    },
    /// `e^{lambda sigma} ||a|| >= 1`.
    NeutralGrowth {
        value: f64,
    },
    /// `M1 >= 1`.
    ContractionConstant {
        m1: f64,
    },
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::NonPositiveRate => write!(f, "lambda must be positive"),
            Clause::DecayMargin { alpha } => write!(f, "inf p = {} is not positive", alpha),
            Clause::NeutralGrowth { value } => {
                write!(f, "e^(lambda sigma) ||a|| = {} is not below 1", value)
            }
            Clause::ContractionConstant { m1 } => write!(f, "M1 = {} is not below 1", m1),
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("infeasible rate: {0}")]
    Infeasible(Clause),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// `p(t)` at rate `lambda`.
pub fn p_value(eq: &NeutralEquation, lambda: f64, t: f64) -> Result<f64, EvalError> {
    let mut p = lambda * eq.a.eval(t)? * (lambda * eq.g_lag.eval(t)?).exp() - lambda;
    for term in &eq.terms {
        p += (lambda * term.lag.eval(t)?).exp() * term.b.eval(t)?;
    }
    Ok(p)
}

/// Sampled infimum of `p` over the window; the certificate's `alpha` when positive.
pub fn p_inf(eq: &NeutralEquation, lambda: f64, window: &Window) -> Result<f64, EvalError> {
    sampled_inf(|t| p_value(eq, lambda, t), window)
}

/// The two factors of `M1` and the quantities they are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionConstant {
    pub lambda: f64,
    pub alpha: f64,
    pub norm_a: f64,
    /// `e^{lambda sigma} ||a||`.
    pub neutral_growth: f64,
    /// `(lambda + sum e^{lambda tau_k} ||b_k|| + lambda e^{lambda sigma} ||a||) / (1 - e^{lambda sigma} ||a||)`.
    pub prefactor: f64,
    /// `||a/p|| (1 + lambda sigma) e^{lambda sigma} + sum ||b_k/p|| e^{lambda tau_k} tau_k`.
    pub delay_factor: f64,
    pub m1: f64,
}

/// Coefficient and lag samples on the norm window, reused across rates.
struct Tabulated {
    a: Vec<f64>,
    g_lag: Vec<f64>,
    b: Vec<Vec<f64>>,
    lags: Vec<Vec<f64>>,
    norm_a: f64,
    norm_b: Vec<f64>,
}

impl Tabulated {
    fn new(eq: &NeutralEquation, window: &Window) -> Result<Self, EvalError> {
        let times: Vec<f64> = window.samples().collect();
        let column = |f: &dyn Fn(f64) -> Result<f64, EvalError>| {
            times.iter().map(|&t| f(t)).collect::<Result<Vec<f64>, _>>()
        };
        Ok(Self {
            a: column(&|t| eq.a.eval(t))?,
            g_lag: column(&|t| eq.g_lag.eval(t))?,
            b: eq
                .terms
                .iter()
                .map(|term| column(&|t| term.b.eval(t)))
                .collect::<Result<_, _>>()?,
            lags: eq
                .terms
                .iter()
                .map(|term| column(&|t| term.lag.eval(t)))
                .collect::<Result<_, _>>()?,
            norm_a: estimate_norm(&eq.a, window)?.value,
            norm_b: eq
                .terms
                .iter()
                .map(|term| estimate_norm(&term.b, window).map(|n| n.value))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Same arithmetic as [`p_value`].
    fn p(&self, lambda: f64, j: usize) -> f64 {
        let mut p = lambda * self.a[j] * (lambda * self.g_lag[j]).exp() - lambda;
        for (b, lag) in self.b.iter().zip(&self.lags) {
            p += (lambda * lag[j]).exp() * b[j];
        }
        p
    }

    fn constants(&self, eq: &NeutralEquation, lambda: f64) -> Result<ContractionConstant, Clause> {
        if lambda <= 0.0 {
            return Err(Clause::NonPositiveRate);
        }
        let p: Vec<f64> = (0..self.a.len()).map(|j| self.p(lambda, j)).collect();
        let alpha = p.iter().copied().fold(f64::INFINITY, f64::min);
        if alpha <= 0.0 {
            return Err(Clause::DecayMargin { alpha });
        }
        let norm_a = self.norm_a;
        let sigma = eq.g_lag.lag_sup;
        let neutral_growth = (lambda * sigma).exp() * norm_a;
        if neutral_growth >= 1.0 {
            return Err(Clause::NeutralGrowth {
                value: neutral_growth,
            });
        }
        let over_p = |values: &[f64]| {
            values
                .iter()
                .zip(&p)
                .map(|(v, p)| (v / p).abs())
                .fold(0.0, f64::max)
        };

        let mut numerator = lambda + lambda * neutral_growth;
        let mut delay_factor = over_p(&self.a) * (1.0 + lambda * sigma) * (lambda * sigma).exp();
        for (k, term) in eq.terms.iter().enumerate() {
            let tau = term.lag.lag_sup;
            let growth = (lambda * tau).exp();
            numerator += growth * self.norm_b[k];
            delay_factor += over_p(&self.b[k]) * growth * tau;
        }
        let prefactor = numerator / (1.0 - neutral_growth);
        Ok(ContractionConstant {
            lambda,
            alpha,
            norm_a,
            neutral_growth,
            prefactor,
            delay_factor,
            m1: prefactor * delay_factor,
        })
    }

    fn feasibility(&self, eq: &NeutralEquation, lambda: f64) -> Feasibility {
        match self.constants(eq, lambda) {
            Ok(constants) => Feasibility {
                lambda,
                constants: Some(constants),
                failing: (constants.m1 >= 1.0)
                    .then_some(Clause::ContractionConstant { m1: constants.m1 }),
            },
            Err(clause) => Feasibility {
                lambda,
                constants: None,
                failing: Some(clause),
            },
        }
    }
}

/// `M1` at rate `lambda`; fails with the first violated precondition.
pub fn compute_m1(
    eq: &NeutralEquation,
    lambda: f64,
    window: &Window,
) -> Result<ContractionConstant, EnvelopeError> {
    Tabulated::new(eq, window)?
        .constants(eq, lambda)
        .map_err(EnvelopeError::Infeasible)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub lambda: f64,
    pub constants: Option<ContractionConstant>,
    pub failing: Option<Clause>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.failing.is_none()
    }
}

/// Checks every hypothesis of the envelope estimate at `lambda`.
pub fn feasible(
    eq: &NeutralEquation,
    lambda: f64,
    window: &Window,
) -> Result<Feasibility, EvalError> {
    Ok(Tabulated::new(eq, window)?.feasibility(eq, lambda))
}

/// Largest rate certified feasible by a uniform scan of `(0, lambda_hi]`
/// followed by bisection between the largest feasible and the next
/// infeasible scan point. `M1` need not be monotone in `lambda`, so only
/// checked rates are ever returned.
pub fn optimize_lambda(
    eq: &NeutralEquation,
    lambda_hi: f64,
    tol: f64,
    window: &Window,
) -> Result<Option<f64>, EvalError> {
    let table = Tabulated::new(eq, window)?;
    let rate = |i: usize| lambda_hi * i as f64 / SCAN_POINTS as f64;
    let scan: Vec<bool> = (1..=SCAN_POINTS)
        .into_par_iter()
        .map(|i| table.feasibility(eq, rate(i)).is_feasible())
        .collect();
    let Some(best) = scan.iter().rposition(|&ok| ok) else {
        return Ok(None);
    };
    let best = best + 1;
    if best == SCAN_POINTS {
        return Ok(Some(lambda_hi));
    }
    let mut lo = rate(best);
    let mut hi = rate(best + 1);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if table.feasibility(eq, mid).is_feasible() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// The equation for `z(t) = e^{lambda (t - t0)} x(t)`:
/// `a0 = a e^{lambda (t - g)}`, `c = lambda`, `d0 = lambda a e^{lambda (t - g)}`
/// delayed by `g`, and `d_k = e^{lambda (t - h_k)} b_k`.
pub fn transform_to_general(eq: &NeutralEquation, lambda: f64) -> GeneralEquation {
    let neutral_weight = Expr::Num(lambda).mul(eq.g_lag.body.clone()).exp();
    let a0 = eq.a.body.clone().mul(neutral_weight);
    let mut terms = vec![GeneralTerm {
        d: ScalarFn::new(Expr::Num(lambda).mul(a0.clone())),
        lag: eq.g_lag.clone(),
    }];
    terms.extend(eq.terms.iter().map(|term| {
        GeneralTerm {
            d: ScalarFn::new(
                Expr::Num(lambda)
                    .mul(term.lag.body.clone())
                    .exp()
                    .mul(term.b.body.clone()),
            ),
            lag: term.lag.clone(),
        }
    }));
    GeneralEquation {
        a0: ScalarFn::new(a0),
        g_lag: eq.g_lag.clone(),
        c: ScalarFn::constant(lambda),
        terms,
    }
}

/// Certified bound `|x(t)| <= c e^{-lambda (t - t0)} + forcing_gain ||f||_[t0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCertificate {
    pub t0: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub m1: f64,
    pub m0: f64,
    pub c: f64,
    pub forcing_gain: f64,
    /// `||f||` bound the certificate was issued for.
    pub f_bound: f64,
    /// Bracketed summands multiplying `M0`: `|x0|`, the neutral history
    /// term, and one term per delayed coefficient.
    pub x0_term: f64,
    pub neutral_term: f64,
    pub delay_terms: Vec<f64>,
    pub psi_norm: f64,
    pub phi_norms: Vec<f64>,
}

impl EnvelopeCertificate {
    /// Homogeneous part `c e^{-lambda (t - t0)}`.
    pub fn decay(&self, t: f64) -> f64 {
        self.c * (-self.lambda * (t - self.t0)).exp()
    }

    /// Full bound at `t` given `sup |f|` on `[t0, t]`.
    pub fn bound(&self, t: f64, f_sup: f64) -> f64 {
        self.decay(t) + self.forcing_gain * f_sup
    }

    /// Bound using the `f_bound` the certificate was issued with.
    pub fn total(&self, t: f64) -> f64 {
        self.bound(t, self.f_bound)
    }
}

fn segment_norm(f: &ScalarFn, lo: f64, hi: f64) -> Result<f64, EvalError> {
    let step = ((hi - lo) / SEGMENT_SAMPLES).max(f64::MIN_POSITIVE);
    Ok(estimate_norm(f, &Window::new(lo, hi, step))?.value)
}

/// Issues the envelope certificate at `lambda`. History norms are taken on
/// `[t0 - sigma, t0]` for `psi` and `[t0 - tau_k, t0]` for `phi`.
pub fn certificate(
    eq: &NeutralEquation,
    lambda: f64,
    init: &InitialData,
    f_bound: f64,
    window: &Window,
) -> Result<EnvelopeCertificate, EnvelopeError> {
    let constants = compute_m1(eq, lambda, window)?;
    if constants.m1 >= 1.0 {
        return Err(EnvelopeError::Infeasible(Clause::ContractionConstant {
            m1: constants.m1,
        }));
    }
    let m0 = 1.0 / (1.0 - constants.m1);
    let t0 = eq.t0;
    let scale = lambda * (1.0 - constants.norm_a);
    let sigma = eq.g_lag.lag_sup;
    let psi_norm = segment_norm(&init.psi, t0 - sigma, t0)?;
    let neutral_term = ((lambda * sigma).exp() - 1.0) / scale * constants.norm_a * psi_norm;
    let mut phi_norms = Vec::with_capacity(eq.m());
    let mut delay_terms = Vec::with_capacity(eq.m());
    for term in &eq.terms {
        let tau = term.lag.lag_sup;
        let phi_norm = segment_norm(&init.phi, t0 - tau, t0)?;
        let b_norm = estimate_norm(&term.b, window)?.value;
        delay_terms.push(((lambda * tau).exp() - 1.0) / scale * b_norm * phi_norm);
        phi_norms.push(phi_norm);
    }
    let x0_term = init.x0.abs();
    let bracket = x0_term + neutral_term + delay_terms.iter().sum::<f64>();
    Ok(EnvelopeCertificate {
        t0,
        lambda,
        alpha: constants.alpha,
        m1: constants.m1,
        m0,
        c: m0 * bracket,
        forcing_gain: m0 / scale,
        f_bound,
        x0_term,
        neutral_term,
        delay_terms,
        psi_norm,
        phi_norms,
    })
}
