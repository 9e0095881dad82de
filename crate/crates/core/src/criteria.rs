//! Explicit sufficient conditions for uniform exponential stability.
//!
//! Every test returns a [`CriterionVerdict`] carrying the quantity that was
//! compared (`lhs`), the bound it had to stay strictly below (`threshold`)
//! and every intermediate norm, so a verdict can be audited by hand.
//! Compound tests report the first failing clause, or the main clause when
//! all clauses hold, which keeps `holds == (lhs < threshold)`.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::fmt;

use thiserror::Error;

use crate::expr::{EvalError, Expr, Func};
use crate::model::{
    estimate_inf, estimate_norm, estimate_sup, positive_part_shifted, sampled_inf, sampled_norm,
    validate, LagFn, NeutralEquation, ScalarFn, Violation, Window,
};

/// Default margin for "bounded away from zero" checks.
pub const DEFAULT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub window: Window,
    /// A sampled infimum counts as positive only above this margin.
    pub margin: f64,
}

impl Settings {
    pub fn new(window: Window) -> Self {
        Self {
            window,
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn for_equation(eq: &NeutralEquation) -> Self {
        Self::new(eq.default_window())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CriterionId {
    /// `inf b > 0`, `||b|| tau <= 1/e`, `||a|| + ||b|| ||a/b|| < 1`.
    SmallDelay,
    /// Coefficient truncated at `1/(tau e)`.
    TruncatedCoefficient,
    /// Penalises the part of the delay above `1/(||b|| e)`.
    DelayExcess,
    /// Depends on the neutral delay through `sigma`.
    NeutralDelay,
    /// Several delays, each entering with its own `tau_k`.
    MultiDelay,
    /// Constant positive coefficients, `||a|| < 1/2`.
    ConstantCoefficients,
    /// Single delay, `(||a/b|| + tau) ||b|| < 1 - ||a||`.
    SingleDelay,
}

impl CriterionId {
    pub const ALL: [CriterionId; 7] = [
        CriterionId::SmallDelay,
        CriterionId::TruncatedCoefficient,
        CriterionId::DelayExcess,
        CriterionId::NeutralDelay,
        CriterionId::MultiDelay,
        CriterionId::ConstantCoefficients,
        CriterionId::SingleDelay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionId::SmallDelay => "small-delay",
            CriterionId::TruncatedCoefficient => "truncated-coefficient",
            CriterionId::DelayExcess => "delay-excess",
            CriterionId::NeutralDelay => "neutral-delay",
            CriterionId::MultiDelay => "multi-delay",
            CriterionId::ConstantCoefficients => "constant-coefficients",
            CriterionId::SingleDelay => "single-delay",
        }
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionVerdict {
    pub id: CriterionId,
    pub applicable: bool,
    pub holds: bool,
    pub lhs: f64,
    pub threshold: f64,
    pub intermediates: BTreeMap<&'static str, f64>,
    /// Why the test is inapplicable, or which clause decided the verdict.
    pub note: String,
}

impl CriterionVerdict {
    fn inapplicable(id: CriterionId, note: impl Into<String>) -> Self {
        Self {
            id,
            applicable: false,
            holds: false,
            lhs: f64::NAN,
            threshold: f64::NAN,
            intermediates: BTreeMap::new(),
            note: note.into(),
        }
    }

    fn strict(
        id: CriterionId,
        lhs: f64,
        threshold: f64,
        intermediates: BTreeMap<&'static str, f64>,
        note: impl Into<String>,
    ) -> Self {
        Self {
            id,
            applicable: true,
            holds: lhs < threshold,
            lhs,
            threshold,
            intermediates,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub verdicts: Vec<CriterionVerdict>,
    pub overall: bool,
}

impl StabilityReport {
    pub fn get(&self, id: CriterionId) -> Option<&CriterionVerdict> {
        self.verdicts.iter().find(|v| v.id == id)
    }
}

#[derive(Debug, Error)]
pub enum CriteriaError {
    #[error("equation fails validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

fn norm(f: &ScalarFn, w: &Window) -> Result<f64, EvalError> {
    estimate_norm(f, w).map(|e| e.value)
}

fn quotient_norm(num: &ScalarFn, den: &ScalarFn, w: &Window) -> Result<f64, EvalError> {
    sampled_norm(|t| Ok(num.eval(t)? / den.eval(t)?), w)
}

/// The single delayed term, for tests stated for `m = 1`.
fn single_term(eq: &NeutralEquation) -> Option<(&ScalarFn, &LagFn)> {
    match eq.terms.as_slice() {
        [term] => Some((&term.b, &term.lag)),
        _ => None,
    }
}

fn single_only(id: CriterionId, eq: &NeutralEquation) -> CriterionVerdict {
    CriterionVerdict::inapplicable(
        id,
        format!("stated for one delayed term, equation has {}", eq.m()),
    )
}

pub fn small_delay(eq: &NeutralEquation, s: &Settings) -> Result<CriterionVerdict, EvalError> {
    let id = CriterionId::SmallDelay;
    let Some((b, lag)) = single_term(eq) else {
        return Ok(single_only(id, eq));
    };
    let w = &s.window;
    let b_inf = estimate_inf(b, w)?.value;
    let tau = lag.lag_sup;
    let mut im = BTreeMap::new();
    im.insert("inf_b", b_inf);
    im.insert("tau", tau);
    if b_inf <= s.margin {
        return Ok(CriterionVerdict::strict(
            id,
            -b_inf,
            -s.margin,
            im,
            "inf b > 0 fails",
        ));
    }
    let a_norm = norm(&eq.a, w)?;
    let b_norm = norm(b, w)?;
    let a_over_b = quotient_norm(&eq.a, b, w)?;
    let delay_product = b_norm * tau;
    let main = a_norm + b_norm * a_over_b;
    im.insert("norm_a", a_norm);
    im.insert("norm_b", b_norm);
    im.insert("norm_a_over_b", a_over_b);
    im.insert("norm_b_tau", delay_product);
    im.insert("neutral_sum", main);
    if delay_product > 1.0 / E {
        // non-strict clause: fails only when strictly above 1/e, so lhs > threshold
        return Ok(CriterionVerdict::strict(
            id,
            delay_product,
            1.0 / E,
            im,
            "||b|| tau <= 1/e fails",
        ));
    }
    Ok(CriterionVerdict::strict(
        id,
        main,
        1.0,
        im,
        "||a|| + ||b|| ||a/b|| < 1",
    ))
}

pub fn truncated_coefficient(
    eq: &NeutralEquation,
    s: &Settings,
) -> Result<CriterionVerdict, EvalError> {
    let id = CriterionId::TruncatedCoefficient;
    let Some((b, lag)) = single_term(eq) else {
        return Ok(single_only(id, eq));
    };
    let w = &s.window;
    let b_inf = estimate_inf(b, w)?.value;
    if b_inf <= s.margin {
        return Ok(CriterionVerdict::inapplicable(id, "requires inf b > 0"));
    }
    let tau = lag.lag_sup;
    let cap = 1.0 / (tau * E);
    let b1 = ScalarFn::new(Expr::call(Func::Min, vec![b.body.clone(), Expr::Num(cap)]));
    let excess = ScalarFn::new(b.body.clone().sub(b1.body.clone()));
    let a_norm = norm(&eq.a, w)?;
    let b_norm = norm(b, w)?;
    let a_over_b1 = quotient_norm(&eq.a, &b1, w)?;
    let excess_ratio = quotient_norm(&excess, &b1, w)?;
    let first = a_over_b1 * b_norm / (1.0 - a_norm);
    let lhs = first + excess_ratio;
    let mut im = BTreeMap::new();
    im.insert("tau", tau);
    im.insert("b1_cap", cap);
    im.insert("norm_a", a_norm);
    im.insert("norm_b", b_norm);
    im.insert("norm_a_over_b1", a_over_b1);
    im.insert("neutral_term", first);
    im.insert("truncation_term", excess_ratio);
    Ok(CriterionVerdict::strict(
        id,
        lhs,
        1.0,
        im,
        "sum of both terms < 1",
    ))
}

pub fn delay_excess(eq: &NeutralEquation, s: &Settings) -> Result<CriterionVerdict, EvalError> {
    let id = CriterionId::DelayExcess;
    let Some((b, lag)) = single_term(eq) else {
        return Ok(single_only(id, eq));
    };
    let w = &s.window;
    let b_inf = estimate_inf(b, w)?.value;
    if b_inf <= s.margin {
        return Ok(CriterionVerdict::inapplicable(id, "requires inf b > 0"));
    }
    let a_norm = norm(&eq.a, w)?;
    let b_norm = norm(b, w)?;
    let a_over_b = quotient_norm(&eq.a, b, w)?;
    let shift = 1.0 / (b_norm * E);
    let excess = estimate_sup(&positive_part_shifted(lag, shift), w)?.value;
    let lhs = b_norm * (a_over_b + excess);
    let mut im = BTreeMap::new();
    im.insert("norm_a", a_norm);
    im.insert("norm_b", b_norm);
    im.insert("norm_a_over_b", a_over_b);
    im.insert("lag_shift", shift);
    im.insert("norm_lag_excess", excess);
    Ok(CriterionVerdict::strict(
        id,
        lhs,
        1.0 - a_norm,
        im,
        "< 1 - ||a||",
    ))
}

/// Bounds `a0 <= a <= A0`, `b0 <= b <= B0` and delays used by the
/// neutral-delay test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeutralDelayData {
    pub a_lo: f64,
    pub a_hi: f64,
    pub b_lo: f64,
    pub b_hi: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl NeutralDelayData {
    pub fn lhs(&self) -> f64 {
        let NeutralDelayData {
            a_lo,
            a_hi,
            b_lo,
            b_hi,
            sigma,
            tau,
        } = *self;
        tau * b_hi + sigma * a_hi * b_hi * b_hi * (1.0 - a_lo) / ((1.0 - a_hi).powi(2) * b_lo)
    }

    pub fn threshold(&self) -> f64 {
        1.0 - self.a_hi
    }

    /// Largest neutral delay for which the test holds; `+inf` when the
    /// test does not depend on it, non-positive when it can never hold.
    pub fn sigma_threshold(&self) -> f64 {
        let NeutralDelayData {
            a_lo,
            a_hi,
            b_lo,
            b_hi,
            tau,
            ..
        } = *self;
        let coefficient = a_hi * b_hi * b_hi * (1.0 - a_lo);
        let room = (1.0 - a_hi) - tau * b_hi;
        if coefficient == 0.0 {
            return if room > 0.0 { f64::INFINITY } else { room };
        }
        room * (1.0 - a_hi).powi(2) * b_lo / coefficient
    }
}

fn neutral_delay_data(
    eq: &NeutralEquation,
    s: &Settings,
) -> Result<Result<NeutralDelayData, &'static str>, EvalError> {
    let Some((b, lag)) = single_term(eq) else {
        return Ok(Err("stated for one delayed term"));
    };
    let w = &s.window;
    let a_lo = estimate_inf(&eq.a, w)?.value;
    let a_hi = estimate_sup(&eq.a, w)?.value;
    let b_lo = estimate_inf(b, w)?.value;
    let b_hi = estimate_sup(b, w)?.value;
    if a_lo < 0.0 {
        return Ok(Err("requires a >= 0"));
    }
    if a_hi >= 1.0 {
        return Ok(Err("requires sup a < 1"));
    }
    if b_lo <= s.margin {
        return Ok(Err("requires inf b > 0"));
    }
    Ok(Ok(NeutralDelayData {
        a_lo,
        a_hi,
        b_lo,
        b_hi,
        sigma: eq.g_lag.lag_sup,
        tau: lag.lag_sup,
    }))
}

pub fn neutral_delay(eq: &NeutralEquation, s: &Settings) -> Result<CriterionVerdict, EvalError> {
    let id = CriterionId::NeutralDelay;
    let data = match neutral_delay_data(eq, s)? {
        Ok(data) => data,
        Err(why) => return Ok(CriterionVerdict::inapplicable(id, why)),
    };
    let mut im = BTreeMap::new();
    im.insert("a_lo", data.a_lo);
    im.insert("a_hi", data.a_hi);
    im.insert("b_lo", data.b_lo);
    im.insert("b_hi", data.b_hi);
    im.insert("sigma", data.sigma);
    im.insert("tau", data.tau);
    im.insert("sigma_threshold", data.sigma_threshold());
    Ok(CriterionVerdict::strict(
        id,
        data.lhs(),
        data.threshold(),
        im,
        "< 1 - A0",
    ))
}

/// Neutral delay below which [`neutral_delay`] holds, or `None` when the
/// test is inapplicable.
pub fn neutral_delay_threshold(
    eq: &NeutralEquation,
    s: &Settings,
) -> Result<Option<f64>, EvalError> {
    Ok(neutral_delay_data(eq, s)?.ok().map(|d| d.sigma_threshold()))
}

/// Left side of the multi-delay test,
/// `(sum ||b_k|| / (1 - ||a||)) (||a/b|| + sum tau_k ||b_k/b||)` with `b = sum b_k`.
pub fn multi_delay_lhs(eq: &NeutralEquation, s: &Settings) -> Result<f64, EvalError> {
    let w = &s.window;
    let b_sum = ScalarFn::new(
        eq.terms
            .iter()
            .map(|term| term.b.body.clone())
            .reduce(Expr::add)
            .unwrap_or(Expr::Num(0.0)),
    );
    let a_norm = norm(&eq.a, w)?;
    let mut b_norms = 0.0;
    let mut delay_sum = 0.0;
    for term in &eq.terms {
        b_norms += norm(&term.b, w)?;
        delay_sum += term.lag.lag_sup * quotient_norm(&term.b, &b_sum, w)?;
    }
    let a_over_b = quotient_norm(&eq.a, &b_sum, w)?;
    Ok(b_norms / (1.0 - a_norm) * (a_over_b + delay_sum))
}

pub fn multi_delay(eq: &NeutralEquation, s: &Settings) -> Result<CriterionVerdict, EvalError> {
    let id = CriterionId::MultiDelay;
    let w = &s.window;
    if eq.terms.is_empty() {
        return Ok(CriterionVerdict::inapplicable(id, "no delayed terms"));
    }
    let b_inf = sampled_inf(|t| eq.b_sum(t), w)?;
    if b_inf <= s.margin {
        return Ok(CriterionVerdict::inapplicable(
            id,
            "requires inf sum b_k > 0",
        ));
    }
    let a_norm = norm(&eq.a, w)?;
    let mut im = BTreeMap::new();
    im.insert("inf_b", b_inf);
    im.insert("norm_a", a_norm);
    if a_norm >= 1.0 {
        return Ok(CriterionVerdict::strict(
            id,
            a_norm,
            1.0,
            im,
            "||a|| < 1 fails",
        ));
    }
    let lhs = multi_delay_lhs(eq, s)?;
    Ok(CriterionVerdict::strict(id, lhs, 1.0, im, "< 1"))
}

pub fn constant_coefficients(
    eq: &NeutralEquation,
    s: &Settings,
) -> Result<CriterionVerdict, EvalError> {
    let id = CriterionId::ConstantCoefficients;
    if eq.terms.is_empty() {
        return Ok(CriterionVerdict::inapplicable(id, "no delayed terms"));
    }
    let mut weighted = 0.0;
    for term in &eq.terms {
        match term.b.constant_value() {
            Some(b) if b > 0.0 => weighted += b * term.lag.lag_sup,
            _ => {
                return Ok(CriterionVerdict::inapplicable(
                    id,
                    "requires constant positive b_k",
                ))
            }
        }
    }
    let a_norm = norm(&eq.a, &s.window)?;
    let mut im = BTreeMap::new();
    im.insert("norm_a", a_norm);
    im.insert("sum_b_tau", weighted);
    if a_norm >= 0.5 {
        return Ok(CriterionVerdict::strict(
            id,
            a_norm,
            0.5,
            im,
            "||a|| < 1/2 fails",
        ));
    }
    Ok(CriterionVerdict::strict(
        id,
        weighted,
        1.0 - 2.0 * a_norm,
        im,
        "sum b_k tau_k < 1 - 2||a||",
    ))
}

pub fn single_delay(eq: &NeutralEquation, s: &Settings) -> Result<CriterionVerdict, EvalError> {
    let id = CriterionId::SingleDelay;
    let Some((b, lag)) = single_term(eq) else {
        return Ok(single_only(id, eq));
    };
    let w = &s.window;
    let b_inf = estimate_inf(b, w)?.value;
    if b_inf <= s.margin {
        return Ok(CriterionVerdict::inapplicable(id, "requires inf b > 0"));
    }
    let a_norm = norm(&eq.a, w)?;
    let b_norm = norm(b, w)?;
    let a_over_b = quotient_norm(&eq.a, b, w)?;
    let tau = lag.lag_sup;
    let mut im = BTreeMap::new();
    im.insert("norm_a", a_norm);
    im.insert("norm_b", b_norm);
    im.insert("norm_a_over_b", a_over_b);
    im.insert("tau", tau);
    Ok(CriterionVerdict::strict(
        id,
        (a_over_b + tau) * b_norm,
        1.0 - a_norm,
        im,
        "< 1 - ||a||",
    ))
}

pub fn evaluate(
    id: CriterionId,
    eq: &NeutralEquation,
    s: &Settings,
) -> Result<CriterionVerdict, EvalError> {
    match id {
        CriterionId::SmallDelay => small_delay(eq, s),
        CriterionId::TruncatedCoefficient => truncated_coefficient(eq, s),
        CriterionId::DelayExcess => delay_excess(eq, s),
        CriterionId::NeutralDelay => neutral_delay(eq, s),
        CriterionId::MultiDelay => multi_delay(eq, s),
        CriterionId::ConstantCoefficients => constant_coefficients(eq, s),
        CriterionId::SingleDelay => single_delay(eq, s),
    }
}

/// Validates the equation and evaluates every test. A false `overall` is
/// inconclusive, not a proof of instability.
pub fn run_all(eq: &NeutralEquation, s: &Settings) -> Result<StabilityReport, CriteriaError> {
    let violations = validate(eq, &s.window);
    if !violations.is_empty() {
        return Err(CriteriaError::Invalid(violations));
    }
    let verdicts = CriterionId::ALL
        .iter()
        .map(|&id| evaluate(id, eq, s))
        .collect::<Result<Vec<_>, _>>()?;
    let overall = verdicts.iter().any(|v| v.applicable && v.holds);
    Ok(StabilityReport { verdicts, overall })
}

/// Equation `y' - a0(t) y'(g(t)) = c(t) y(t) - sum_{k>=0} d_k(t) y(h_k(t))`
/// with a non-delayed term, whose fundamental function admits a uniform bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralEquation {
    pub a0: ScalarFn,
    pub g_lag: LagFn,
    pub c: ScalarFn,
    pub terms: Vec<GeneralTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralTerm {
    pub d: ScalarFn,
    pub lag: LagFn,
}

impl GeneralEquation {
    pub fn d_sum(&self, t: f64) -> Result<f64, EvalError> {
        self.terms.iter().map(|term| term.d.eval(t)).sum()
    }

    /// `d(t) - c(t)`.
    pub fn gap(&self, t: f64) -> Result<f64, EvalError> {
        Ok(self.d_sum(t)? - self.c.eval(t)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformBound {
    pub k0: f64,
    /// `1 / (1 - k0)` when `k0 < 1`.
    pub k: Option<f64>,
    pub alpha0: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum UniformBoundError {
    #[error("||a0|| = {0} is not below 1")]
    NeutralCoefficient(f64),
    #[error("d - c is not bounded away from zero: {value} at t = {t}")]
    Positivity { t: f64, value: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Uniform bound `|Y(t, s)| <= K = 1/(1 - K0)` on the fundamental function
/// of a [`GeneralEquation`], with
/// `K0 = (||c|| + sum ||d_k||)/(1 - ||a0||) * (||a0/(d-c)|| + sum tau_k ||d_k/(d-c)||)`.
pub fn uniform_fundamental_bound(
    geq: &GeneralEquation,
    s: &Settings,
) -> Result<UniformBound, UniformBoundError> {
    let w = &s.window;
    let a0_norm = norm(&geq.a0, w)?;
    if a0_norm >= 1.0 {
        return Err(UniformBoundError::NeutralCoefficient(a0_norm));
    }
    let mut witness = (w.lo, f64::INFINITY);
    for t in w.samples() {
        let gap = geq.gap(t)?;
        if gap < witness.1 {
            witness = (t, gap);
        }
    }
    if witness.1 <= s.margin {
        return Err(UniformBoundError::Positivity {
            t: witness.0,
            value: witness.1,
        });
    }
    let gap_ratio = |num: &ScalarFn| sampled_norm(|t| Ok(num.eval(t)? / geq.gap(t)?), w);
    let mut coefficient_sum = norm(&geq.c, w)?;
    let mut delay_sum = gap_ratio(&geq.a0)?;
    for term in &geq.terms {
        coefficient_sum += norm(&term.d, w)?;
        delay_sum += term.lag.lag_sup * gap_ratio(&term.d)?;
    }
    let k0 = coefficient_sum / (1.0 - a0_norm) * delay_sum;
    Ok(UniformBound {
        k0,
        k: (k0 < 1.0).then(|| 1.0 / (1.0 - k0)),
        alpha0: witness.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::model::DelayTerm;

    const TAU: f64 = 1.0 / E + 0.1;

    fn oscillating_lag_equation(sigma: f64) -> NeutralEquation {
        NeutralEquation::new(
            0.0,
            ScalarFn::constant(0.15),
            LagFn::constant(sigma),
            vec![DelayTerm {
                b: ScalarFn::constant(1.0),
                lag: LagFn::new(parse("1/e + 0.1*sin(t)").unwrap(), 1.0 / E - 0.1, TAU),
            }],
        )
    }

    fn constant_equation(a: f64, sigma: f64, terms: &[(f64, f64)]) -> NeutralEquation {
        NeutralEquation::new(
            0.0,
            ScalarFn::constant(a),
            LagFn::constant(sigma),
            terms
                .iter()
                .map(|&(b, tau)| DelayTerm {
                    b: ScalarFn::constant(b),
                    lag: LagFn::constant(tau),
                })
                .collect(),
        )
    }

    fn settings(eq: &NeutralEquation) -> Settings {
        Settings::for_equation(eq)
    }

    fn check<F>(test: F, eq: &NeutralEquation) -> CriterionVerdict
    where
        F: Fn(&NeutralEquation, &Settings) -> Result<CriterionVerdict, EvalError>,
    {
        let v = test(eq, &settings(eq)).unwrap();
        assert_eq!(v.holds, v.lhs < v.threshold, "{:?}", v);
        assert!(!v.holds || v.applicable);
        v
    }

    #[test]
    fn small_delay_examples() {
        let v = check(small_delay, &oscillating_lag_equation(0.5));
        assert!(!v.holds);
        assert!((v.lhs - 0.467879).abs() < 1e-5);
        assert!((v.threshold - 1.0 / E).abs() < 1e-15);

        let v = check(small_delay, &constant_equation(0.0, 1.0, &[(1.0, 0.3)]));
        assert!(v.holds);
        assert_eq!(v.lhs, 0.0);

        let v = check(small_delay, &constant_equation(0.5, 1.0, &[(1.0, 0.3)]));
        assert!(!v.holds);
        assert_eq!(v.lhs, 1.0);

        let v = check(small_delay, &constant_equation(0.0, 1.0, &[(-1.0, 0.3)]));
        assert!(v.applicable && !v.holds);
        assert!(v.note.contains("inf b"));
    }

    #[test]
    fn truncated_coefficient_examples() {
        let cap = 1.0 / (0.3 * E);
        let v = check(
            truncated_coefficient,
            &constant_equation(0.0, 1.0, &[(cap, 0.3)]),
        );
        assert!(v.holds);
        assert_eq!(v.lhs, 0.0);

        // hand value: 0.15/0.786270 / 0.85 + (1 - 0.786270)/0.786270 = 0.496268
        let v = check(truncated_coefficient, &oscillating_lag_equation(0.5));
        assert!((v.intermediates["b1_cap"] - 0.786270).abs() < 1e-6);
        assert!((v.lhs - 0.496268).abs() < 1e-6);

        let v = check(
            truncated_coefficient,
            &constant_equation(0.9, 1.0, &[(1.0, TAU)]),
        );
        assert!(!v.holds);
        assert!(v.lhs >= 0.9 / 0.786270 / 0.1);
    }

    #[test]
    fn delay_excess_examples() {
        let v = check(
            delay_excess,
            &constant_equation(0.0, 1.0, &[(1.0, 1.0 / E)]),
        );
        assert!(v.holds);
        assert_eq!(v.lhs, 0.0);

        let v = check(delay_excess, &oscillating_lag_equation(0.5));
        assert!((v.intermediates["norm_lag_excess"] - 0.1).abs() < 1e-3);
        assert!((v.lhs - 0.25).abs() < 1e-3);
        assert!((v.threshold - 0.85).abs() < 1e-15);

        let v = check(
            delay_excess,
            &constant_equation(0.0, 1.0, &[(1.0, 1.0 / E + 0.9)]),
        );
        assert!(v.holds);
        assert!((v.lhs - 0.9).abs() < 1e-12);
    }

    #[test]
    fn neutral_delay_examples() {
        // 0.467879 + 0.5 * 0.15 * 0.85 / 0.7225 = 0.556114
        let v = check(neutral_delay, &oscillating_lag_equation(0.5));
        assert!(v.holds);
        assert!((v.lhs - 0.556114).abs() < 1e-5);

        assert!(!check(neutral_delay, &oscillating_lag_equation(3.0)).holds);

        let v = check(neutral_delay, &constant_equation(0.0, 7.0, &[(1.0, 0.5)]));
        assert!(v.holds);
        assert_eq!(v.lhs, 0.5);

        let v = check(neutral_delay, &constant_equation(-0.1, 1.0, &[(1.0, 0.5)]));
        assert!(!v.applicable);
    }

    #[test]
    fn neutral_delay_threshold_examples() {
        let eq = oscillating_lag_equation(0.5);
        let s = settings(&eq);
        let star = neutral_delay_threshold(&eq, &s).unwrap().unwrap();
        assert!((star - 2.16535).abs() < 1e-4);

        let eq = constant_equation(0.15, 1.0, &[(1.0, 0.35)]);
        let star = neutral_delay_threshold(&eq, &settings(&eq))
            .unwrap()
            .unwrap();
        assert!((star - 0.5 * 0.7225 / 0.1275).abs() < 1e-12);

        let eq = constant_equation(0.15, 1.0, &[(1.0, 0.9)]);
        assert!(
            neutral_delay_threshold(&eq, &settings(&eq))
                .unwrap()
                .unwrap()
                <= 0.0
        );

        let eq = constant_equation(0.0, 1.0, &[(1.0, 0.5)]);
        assert_eq!(
            neutral_delay_threshold(&eq, &settings(&eq)).unwrap(),
            Some(f64::INFINITY)
        );
    }

    #[test]
    fn multi_delay_examples() {
        let v = check(multi_delay, &oscillating_lag_equation(0.5));
        assert!(v.holds);
        assert!((v.lhs - 0.726917).abs() < 1e-5);

        let v = check(multi_delay, &constant_equation(0.0, 1.0, &[(1.0, 1.0)]));
        assert!(!v.holds);
        assert_eq!(v.lhs, 1.0);

        let v = check(
            multi_delay,
            &constant_equation(0.0, 1.0, &[(1.0, 0.1), (1.0, 0.2)]),
        );
        assert!(v.holds);
        assert!((v.lhs - 0.3).abs() < 1e-12);

        let v = check(
            multi_delay,
            &constant_equation(0.0, 1.0, &[(1.0, 0.1), (-1.0, 0.2)]),
        );
        assert!(!v.applicable);
    }

    #[test]
    fn constant_coefficient_examples() {
        let v = check(constant_coefficients, &oscillating_lag_equation(0.5));
        assert!(v.holds);
        assert!((v.lhs - 0.467879).abs() < 1e-5);
        assert!((v.threshold - 0.7).abs() < 1e-12);

        let v = check(
            constant_coefficients,
            &constant_equation(0.5, 1.0, &[(1.0, 0.1)]),
        );
        assert!(!v.holds);

        assert!(
            check(
                constant_coefficients,
                &constant_equation(0.0, 1.0, &[(1.0, 0.99)])
            )
            .holds
        );

        let mut eq = oscillating_lag_equation(0.5);
        eq.terms[0].b = ScalarFn::new(parse("1 + 0.1*sin(t)").unwrap());
        assert!(!check(constant_coefficients, &eq).applicable);
    }

    #[test]
    fn single_delay_examples() {
        let v = check(single_delay, &oscillating_lag_equation(0.5));
        assert!(v.holds);
        assert!((v.lhs - 0.617879).abs() < 1e-5);

        let v = check(single_delay, &constant_equation(0.0, 1.0, &[(2.0, 0.4)]));
        assert!(v.holds);
        assert!((v.lhs - 0.8).abs() < 1e-12);

        let v = check(single_delay, &constant_equation(0.4, 1.0, &[(1.0, 0.3)]));
        assert!(!v.holds);
        assert!((v.lhs - 0.7).abs() < 1e-12);
        assert!((v.threshold - 0.6).abs() < 1e-12);

        assert!(
            !check(
                single_delay,
                &constant_equation(0.0, 1.0, &[(1.0, 0.1), (1.0, 0.1)])
            )
            .applicable
        );
    }

    #[test]
    fn run_all_examples() {
        let eq = oscillating_lag_equation(0.5);
        let report = run_all(&eq, &settings(&eq)).unwrap();
        assert!(report.overall);
        for id in [
            CriterionId::NeutralDelay,
            CriterionId::MultiDelay,
            CriterionId::ConstantCoefficients,
            CriterionId::SingleDelay,
        ] {
            assert!(report.get(id).unwrap().holds, "{}", id);
        }
        assert!(!report.get(CriterionId::SmallDelay).unwrap().holds);

        let eq = oscillating_lag_equation(3.0);
        let report = run_all(&eq, &settings(&eq)).unwrap();
        assert!(report.overall);
        assert!(!report.get(CriterionId::NeutralDelay).unwrap().holds);
        assert!(report.get(CriterionId::SingleDelay).unwrap().holds);

        let mut eq = oscillating_lag_equation(0.5);
        eq.a = ScalarFn::constant(0.9);
        let report = run_all(&eq, &settings(&eq)).unwrap();
        assert!(!report.overall);

        eq.a = ScalarFn::constant(1.0);
        assert!(matches!(
            run_all(&eq, &settings(&eq)),
            Err(CriteriaError::Invalid(_))
        ));
    }

    #[test]
    fn uniform_bound_examples() {
        let geq = GeneralEquation {
            a0: ScalarFn::constant(0.0),
            g_lag: LagFn::constant(1.0),
            c: ScalarFn::constant(0.0),
            terms: vec![GeneralTerm {
                d: ScalarFn::constant(1.0),
                lag: LagFn::constant(0.0),
            }],
        };
        let s = Settings::new(Window::new(0.0, 10.0, 0.01));
        let bound = uniform_fundamental_bound(&geq, &s).unwrap();
        assert_eq!(bound.k0, 0.0);
        assert_eq!(bound.k, Some(1.0));

        let mut dipping = geq.clone();
        dipping.terms[0].d = ScalarFn::new(parse("sin(t)^2").unwrap());
        match uniform_fundamental_bound(&dipping, &Settings::new(Window::new(0.0, 10.0, 0.01))) {
            Err(UniformBoundError::Positivity { t, value }) => {
                assert_eq!(t, 0.0);
                assert_eq!(value, 0.0);
            }
            other => panic!("{:?}", other),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lhs_of(id: CriterionId, eq: &NeutralEquation) -> f64 {
            let v = evaluate(id, eq, &Settings::new(Window::new(0.0, 10.0, 0.1))).unwrap();
            v.lhs
        }

        proptest! {
            #[test]
            fn tau_monotone(
                a in 0.0f64..0.45,
                b in 0.1f64..3.0,
                tau in 0.0f64..2.0,
                extra in 0.0f64..1.0,
            ) {
                let s = Settings::new(Window::new(0.0, 10.0, 0.1));
                let base = constant_equation(a, 1.0, &[(b, tau)]);
                let longer = constant_equation(a, 1.0, &[(b, tau + extra)]);
                for id in [CriterionId::MultiDelay, CriterionId::ConstantCoefficients, CriterionId::SingleDelay] {
                    let v0 = evaluate(id, &base, &s).unwrap();
                    let v1 = evaluate(id, &longer, &s).unwrap();
                    prop_assert!(v1.lhs >= v0.lhs);
                    prop_assert!(!(v1.holds && !v0.holds));
                }
            }

            #[test]
            fn time_rescaling_invariant(
                a in 0.0f64..0.45,
                b1 in 0.1f64..3.0,
                b2 in 0.1f64..3.0,
                tau1 in 0.0f64..1.0,
                tau2 in 0.0f64..1.0,
                sigma in 0.1f64..2.0,
                c in 0.2f64..5.0,
            ) {
                let eq = constant_equation(a, sigma, &[(b1, tau1), (b2, tau2)]);
                let scaled = constant_equation(a, sigma / c, &[(c * b1, tau1 / c), (c * b2, tau2 / c)]);
                for id in [CriterionId::MultiDelay, CriterionId::ConstantCoefficients] {
                    let l0 = lhs_of(id, &eq);
                    let l1 = lhs_of(id, &scaled);
                    prop_assert!((l0 - l1).abs() <= 1e-12 * l0.abs().max(1.0), "{} {} {}", id, l0, l1);
                }
                let eq = constant_equation(a, sigma, &[(b1, tau1)]);
                let scaled = constant_equation(a, sigma / c, &[(c * b1, tau1 / c)]);
                let l0 = lhs_of(CriterionId::SingleDelay, &eq);
                let l1 = lhs_of(CriterionId::SingleDelay, &scaled);
                prop_assert!((l0 - l1).abs() <= 1e-12 * l0.abs().max(1.0));
            }

            #[test]
            fn threshold_is_the_flip_point(
                a in 0.01f64..0.6,
                b in 0.2f64..2.0,
                tau in 0.0f64..0.3,
            ) {
                let eq = constant_equation(a, 1.0, &[(b, tau)]);
                let s = Settings::new(Window::new(0.0, 10.0, 0.1));
                let star = neutral_delay_threshold(&eq, &s).unwrap().unwrap();
                prop_assume!(star > 0.0);
                let below = constant_equation(a, star * (1.0 - 1e-6), &[(b, tau)]);
                let above = constant_equation(a, star * (1.0 + 1e-6), &[(b, tau)]);
                prop_assert!(neutral_delay(&below, &s).unwrap().holds);
                prop_assert!(!neutral_delay(&above, &s).unwrap().holds);
            }
        }
    }
}
