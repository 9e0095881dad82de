//! Problem data for the scalar neutral equation
//!
//! ```text
//! x'(t) - a(t) x'(g(t)) + sum_k b_k(t) x(h_k(t)) = f(t),   t >= t0
//! x(t) = phi(t), t <= t0;   x'(t) = psi(t), t < t0
//! ```
//!
//! together with sampled estimates of the essential suprema and infima that
//! every stability test and envelope constant consumes. Delays are stored
//! as lags `t - g(t)` and `t - h_k(t)`.

use std::fmt;

use crate::expr::{EvalError, Expr, Func};

/// Relative tolerance used when checking sampled values against declared
/// bounds.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// A real function of time with optional declared bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFn {
    pub body: Expr,
    pub declared_sup: Option<f64>,
    pub declared_inf: Option<f64>,
}

impl ScalarFn {
    pub fn new(body: Expr) -> Self {
        Self {
            body,
            declared_sup: None,
            declared_inf: None,
        }
    }

    /// A constant function; both bounds are declared.
    pub fn constant(value: f64) -> Self {
        Self {
            body: Expr::Num(value),
            declared_sup: Some(value),
            declared_inf: Some(value),
        }
    }

    pub fn with_bounds(mut self, inf: Option<f64>, sup: Option<f64>) -> Self {
        self.declared_inf = inf;
        self.declared_sup = sup;
        self
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        self.body.eval(t)
    }

    pub fn is_constant(&self) -> bool {
        self.body.is_constant()
    }

    /// Constant value, if the body does not depend on `t`.
    pub fn constant_value(&self) -> Option<f64> {
        if self.is_constant() {
            self.body.eval(0.0).ok()
        } else {
            None
        }
    }
}

impl From<Expr> for ScalarFn {
    fn from(body: Expr) -> Self {
        ScalarFn::new(body)
    }
}

/// A lag `t - g(t)` (or `t - h_k(t)`) with its bounds `lag_inf <= lag <= lag_sup`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagFn {
    pub body: Expr,
    pub lag_sup: f64,
    pub lag_inf: f64,
}

impl LagFn {
    pub fn new(body: Expr, lag_inf: f64, lag_sup: f64) -> Self {
        Self {
            body,
            lag_sup,
            lag_inf,
        }
    }

    pub fn constant(lag: f64) -> Self {
        Self::new(Expr::Num(lag), lag, lag)
    }

    /// Bounds taken from sampling the body on `window`.
    pub fn sampled(body: Expr, window: &Window) -> Result<Self, EvalError> {
        let (lo, hi) = sample_extrema(|t| body.eval(t), window)?;
        Ok(Self::new(body, lo, hi))
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        self.body.eval(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayTerm {
    pub b: ScalarFn,
    pub lag: LagFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeutralEquation {
    pub t0: f64,
    pub a: ScalarFn,
    pub g_lag: LagFn,
    pub terms: Vec<DelayTerm>,
}

impl NeutralEquation {
    pub fn new(t0: f64, a: ScalarFn, g_lag: LagFn, terms: Vec<DelayTerm>) -> Self {
        Self {
            t0,
            a,
            g_lag,
            terms,
        }
    }

    pub fn m(&self) -> usize {
        self.terms.len()
    }

    /// Largest of the neutral and state lag bounds.
    pub fn max_lag(&self) -> f64 {
        self.terms
            .iter()
            .map(|term| term.lag.lag_sup)
            .fold(self.g_lag.lag_sup, f64::max)
    }

    /// Default norm window `[t0, t0 + W]` with `W = 20 max(sigma, tau_k, 2 pi)`
    /// and step `1e-3 W`.
    pub fn default_window(&self) -> Window {
        let width = 20.0 * self.max_lag().max(2.0 * std::f64::consts::PI);
        Window::new(self.t0, self.t0 + width, 1e-3 * width)
    }

    /// `sum_k b_k(t)`.
    pub fn b_sum(&self, t: f64) -> Result<f64, EvalError> {
        self.terms.iter().map(|term| term.b.eval(t)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub phi: ScalarFn,
    pub psi: ScalarFn,
    pub x0: f64,
}

impl InitialData {
    /// Initial data with `x0 = phi(t0)`.
    pub fn new(phi: ScalarFn, psi: ScalarFn, t0: f64) -> Result<Self, EvalError> {
        let x0 = phi.eval(t0)?;
        Ok(Self { phi, psi, x0 })
    }

    pub fn zero() -> Self {
        Self {
            phi: ScalarFn::constant(0.0),
            psi: ScalarFn::constant(0.0),
            x0: 0.0,
        }
    }

    /// Zero history with a unit jump at the start time.
    pub fn unit_impulse() -> Self {
        Self {
            x0: 1.0,
            ..Self::zero()
        }
    }
}

/// Sampling window `[lo, hi]`. Samples are taken at every multiple of
/// `step / 2` from `lo` (grid nodes and their midpoints) plus `hi` itself,
/// so halving the step always yields a superset of the previous samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self { lo, hi, step }
    }

    pub fn refined(&self) -> Self {
        Self {
            step: self.step / 2.0,
            ..*self
        }
    }

    pub fn is_valid(&self) -> bool {
        self.step > 0.0 && self.hi >= self.lo && self.step.is_finite() && self.hi.is_finite()
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        let half = self.step / 2.0;
        let n = ((self.hi - self.lo) / half).floor() as usize;
        let lo = self.lo;
        let hi = self.hi;
        let last_on_grid = lo + n as f64 * half;
        (0..=n)
            .map(move |i| lo + i as f64 * half)
            .filter(move |&t| t <= hi)
            .chain((last_on_grid < hi).then_some(hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMethod {
    Declared,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub method: NormMethod,
    pub window: Window,
}

/// Signed minimum and maximum of `f` over the window samples.
pub fn sample_extrema<F>(f: F, window: &Window) -> Result<(f64, f64), EvalError>
where
    F: Fn(f64) -> Result<f64, EvalError>,
{
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in window.samples() {
        let v = f(t)?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

pub fn sampled_sup<F>(f: F, window: &Window) -> Result<f64, EvalError>
where
    F: Fn(f64) -> Result<f64, EvalError>,
{
    sample_extrema(f, window).map(|(_, hi)| hi)
}

pub fn sampled_inf<F>(f: F, window: &Window) -> Result<f64, EvalError>
where
    F: Fn(f64) -> Result<f64, EvalError>,
{
    sample_extrema(f, window).map(|(lo, _)| lo)
}

/// Sampled sup of `|f|`.
pub fn sampled_norm<F>(f: F, window: &Window) -> Result<f64, EvalError>
where
    F: Fn(f64) -> Result<f64, EvalError>,
{
    sampled_sup(|t| f(t).map(f64::abs), window)
}

/// Supremum of `f`: the declared bound if present, otherwise the sampled maximum.
pub fn estimate_sup(f: &ScalarFn, window: &Window) -> Result<NormEstimate, EvalError> {
    Ok(match f.declared_sup {
        Some(value) => NormEstimate {
            value,
            method: NormMethod::Declared,
            window: *window,
        },
        None => NormEstimate {
            value: sampled_sup(|t| f.eval(t), window)?,
            method: NormMethod::Sampled,
            window: *window,
        },
    })
}

/// Infimum of `f`: the declared bound if present, otherwise the sampled minimum.
pub fn estimate_inf(f: &ScalarFn, window: &Window) -> Result<NormEstimate, EvalError> {
    Ok(match f.declared_inf {
        Some(value) => NormEstimate {
            value,
            method: NormMethod::Declared,
            window: *window,
        },
        None => NormEstimate {
            value: sampled_inf(|t| f.eval(t), window)?,
            method: NormMethod::Sampled,
            window: *window,
        },
    })
}

/// `||f||`, the sup of `|f|`, from the sup/inf estimates.
pub fn estimate_norm(f: &ScalarFn, window: &Window) -> Result<NormEstimate, EvalError> {
    if f.declared_sup.is_some() && f.declared_inf.is_some() {
        let sup = estimate_sup(f, window)?;
        let inf = estimate_inf(f, window)?;
        return Ok(NormEstimate {
            value: sup.value.abs().max(inf.value.abs()),
            method: NormMethod::Declared,
            window: *window,
        });
    }
    Ok(NormEstimate {
        value: sampled_norm(|t| f.eval(t), window)?,
        method: NormMethod::Sampled,
        window: *window,
    })
}

/// `max(lag(t) - shift, 0)` as a composed function.
pub fn positive_part_shifted(lag: &LagFn, shift: f64) -> ScalarFn {
    ScalarFn::new(Expr::call(
        Func::Max,
        vec![lag.body.clone().sub(Expr::Num(shift)), Expr::Num(0.0)],
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NeutralCoefficientTooLarge,
    NegativeLag,
    LagOutOfBounds,
    DeclaredBoundViolated,
    NoDelayTerms,
    Evaluation,
}

/// One failed hypothesis, with the field, the witnessing time and value.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub field: String,
    pub t: f64,
    pub value: f64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (t = {}, value = {})",
            self.field, self.message, self.t, self.value
        )
    }
}

fn check_lag(field: &str, lag: &LagFn, window: &Window, out: &mut Vec<Violation>) {
    if lag.lag_inf < 0.0 {
        out.push(Violation {
            kind: ViolationKind::NegativeLag,
            field: field.into(),
            t: window.lo,
            value: lag.lag_inf,
            message: "negative lag bound".into(),
        });
    }
    let tol = BOUND_TOLERANCE * lag.lag_sup.abs().max(1.0);
    for t in window.samples() {
        let v = match lag.eval(t) {
            Ok(v) => v,
            Err(err) => {
                out.push(eval_violation(field, err));
                return;
            }
        };
        if v < 0.0 {
            out.push(Violation {
                kind: ViolationKind::NegativeLag,
                field: field.into(),
                t,
                value: v,
                message: "negative lag".into(),
            });
            return;
        }
        if v < lag.lag_inf - tol || v > lag.lag_sup + tol {
            out.push(Violation {
                kind: ViolationKind::LagOutOfBounds,
                field: field.into(),
                t,
                value: v,
                message: format!("lag outside [{}, {}]", lag.lag_inf, lag.lag_sup),
            });
            return;
        }
    }
}

fn check_declared(field: &str, f: &ScalarFn, window: &Window, out: &mut Vec<Violation>) {
    if f.declared_sup.is_none() && f.declared_inf.is_none() {
        return;
    }
    for t in window.samples() {
        let v = match f.eval(t) {
            Ok(v) => v,
            Err(err) => {
                out.push(eval_violation(field, err));
                return;
            }
        };
        let bad_sup = f
            .declared_sup
            .is_some_and(|s| v > s + BOUND_TOLERANCE * s.abs().max(1.0));
        let bad_inf = f
            .declared_inf
            .is_some_and(|s| v < s - BOUND_TOLERANCE * s.abs().max(1.0));
        if bad_sup || bad_inf {
            out.push(Violation {
                kind: ViolationKind::DeclaredBoundViolated,
                field: field.into(),
                t,
                value: v,
                message: "sample violates declared bound".into(),
            });
            return;
        }
    }
}

fn eval_violation(field: &str, err: EvalError) -> Violation {
    Violation {
        kind: ViolationKind::Evaluation,
        field: field.into(),
        t: err.t,
        value: f64::NAN,
        message: err.kind.to_string(),
    }
}

/// Checks the standing hypotheses on `window`: `||a|| < 1`, lags inside
/// their bounds, non-negative lags, declared bounds respected, `m >= 1`.
/// An empty result means the equation is admissible.
pub fn validate(eq: &NeutralEquation, window: &Window) -> Vec<Violation> {
    let mut out = Vec::new();
    if eq.terms.is_empty() {
        out.push(Violation {
            kind: ViolationKind::NoDelayTerms,
            field: "terms".into(),
            t: eq.t0,
            value: 0.0,
            message: "at least one delayed term is required".into(),
        });
    }
    check_declared("a", &eq.a, window, &mut out);
    match estimate_norm(&eq.a, window) {
        Ok(norm) if norm.value >= 1.0 => {
            // witness: the first sample where |a| attains the estimate (or t0 if declared)
            let t = window
                .samples()
                .find(|&t| eq.a.eval(t).is_ok_and(|v| v.abs() >= norm.value))
                .unwrap_or(window.lo);
            out.push(Violation {
                kind: ViolationKind::NeutralCoefficientTooLarge,
                field: "a".into(),
                t,
                value: norm.value,
                message: "||a|| >= 1".into(),
            });
        }
        Ok(_) => {}
        Err(err) => out.push(eval_violation("a", err)),
    }
    check_lag("g_lag", &eq.g_lag, window, &mut out);
    for (k, term) in eq.terms.iter().enumerate() {
        check_declared(&format!("terms[{}].b", k), &term.b, window, &mut out);
        check_lag(&format!("terms[{}].h_lag", k), &term.lag, window, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use std::f64::consts::PI;

    fn f(src: &str) -> ScalarFn {
        ScalarFn::new(parse(src).unwrap())
    }

    fn example_equation(sigma: f64) -> NeutralEquation {
        let tau = 1.0 / std::f64::consts::E + 0.1;
        NeutralEquation::new(
            0.0,
            ScalarFn::constant(0.15),
            LagFn::constant(sigma),
            vec![DelayTerm {
                b: ScalarFn::constant(1.0),
                lag: LagFn::new(parse("1/e + 0.1*sin(t)").unwrap(), tau - 0.2, tau),
            }],
        )
    }

    #[test]
    fn declared_constant() {
        let w = Window::new(0.0, 10.0, 0.1);
        let est = estimate_sup(&ScalarFn::constant(0.15), &w).unwrap();
        assert_eq!(est.value, 0.15);
        assert_eq!(est.method, NormMethod::Declared);
        assert_eq!(
            estimate_inf(&ScalarFn::constant(1.0), &w).unwrap().value,
            1.0
        );
    }

    #[test]
    fn sampled_lag_bounds() {
        let w = Window::new(0.0, 4.0 * PI, 1e-3);
        let lag = f("1/e + 0.1*sin(t)");
        let sup = estimate_sup(&lag, &w).unwrap();
        let inf = estimate_inf(&lag, &w).unwrap();
        assert_eq!(sup.method, NormMethod::Sampled);
        assert!((sup.value - 0.46788).abs() < 1e-4);
        assert!((inf.value - 0.26788).abs() < 1e-4);
        let sin = estimate_sup(&f("sin(t)"), &Window::new(0.0, 2.0 * PI, 1e-3)).unwrap();
        assert!((sin.value - 1.0).abs() < 1e-6);
        let shifted = estimate_inf(&f("2+sin(t)"), &w).unwrap();
        assert!((shifted.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn norm_uses_absolute_values() {
        let w = Window::new(0.0, 2.0 * PI, 1e-3);
        let norm = estimate_norm(&f("-3 + sin(t)"), &w).unwrap();
        assert!((norm.value - 4.0).abs() < 1e-6);
        let declared = ScalarFn::constant(-0.4);
        assert_eq!(estimate_norm(&declared, &w).unwrap().value, 0.4);
    }

    #[test]
    fn window_samples_cover_endpoints() {
        let w = Window::new(1.0, 2.05, 0.1);
        let samples: Vec<f64> = w.samples().collect();
        assert_eq!(samples[0], 1.0);
        assert_eq!(*samples.last().unwrap(), 2.05);
        assert!(samples.windows(2).all(|p| p[1] > p[0]));
        let degenerate: Vec<f64> = Window::new(3.0, 3.0, 0.1).samples().collect();
        assert_eq!(degenerate, vec![3.0]);
    }

    #[test]
    fn refinement_is_nested() {
        let w = Window::new(0.0, 7.3, 0.37);
        let coarse: Vec<f64> = w.samples().collect();
        let fine: Vec<f64> = w.refined().samples().collect();
        for t in coarse {
            assert!(fine.contains(&t), "{} missing", t);
        }
    }

    #[test]
    fn validate_oscillating_lag_equation() {
        let eq = example_equation(0.5);
        assert!(validate(&eq, &eq.default_window()).is_empty());
    }

    #[test]
    fn validate_rejects_large_neutral_coefficient() {
        let mut eq = example_equation(0.5);
        eq.a = ScalarFn::constant(1.0);
        let v = validate(&eq, &eq.default_window());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NeutralCoefficientTooLarge);
        assert_eq!(v[0].field, "a");

        eq.a = f("0.5 + 0.6*sin(t)");
        let v = validate(&eq, &eq.default_window());
        assert_eq!(v[0].kind, ViolationKind::NeutralCoefficientTooLarge);
        assert!((eq.a.eval(v[0].t).unwrap().abs() - v[0].value).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_negative_lag() {
        let mut eq = example_equation(0.5);
        eq.terms[0].lag = LagFn::new(parse("-0.1").unwrap(), -0.1, -0.1);
        let v = validate(&eq, &eq.default_window());
        assert!(v
            .iter()
            .any(|v| v.kind == ViolationKind::NegativeLag && v.field == "terms[0].h_lag"));
    }

    #[test]
    fn validate_catches_wrong_lag_bounds() {
        let mut eq = example_equation(0.5);
        eq.terms[0].lag.lag_sup = 0.4;
        let v = validate(&eq, &eq.default_window());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::LagOutOfBounds);
        assert!(v[0].value > 0.4);
    }

    #[test]
    fn validate_catches_declared_bound() {
        let mut eq = example_equation(0.5);
        eq.terms[0].b = f("1 + 0.5*sin(t)").with_bounds(Some(0.5), Some(1.2));
        let v = validate(&eq, &eq.default_window());
        assert_eq!(v[0].kind, ViolationKind::DeclaredBoundViolated);
        assert_eq!(v[0].field, "terms[0].b");
    }

    #[test]
    fn sampled_lag_constructor() {
        let w = Window::new(0.0, 4.0 * PI, 1e-3);
        let lag = LagFn::sampled(parse("2.7 + 0.3*cos(t)").unwrap(), &w).unwrap();
        assert!((lag.lag_sup - 3.0).abs() < 1e-9);
        assert!((lag.lag_inf - 2.4).abs() < 1e-6);
    }

    #[test]
    fn initial_data_matches_phi() {
        let init = InitialData::new(f("cos(t)"), f("sin(2*t)+2"), 0.0).unwrap();
        assert_eq!(init.x0, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn refinement_monotone(
                amp in 0.1f64..3.0,
                freq in 0.1f64..5.0,
                phase in 0.0f64..6.0,
                width in 0.5f64..20.0,
                step in 0.01f64..0.5,
            ) {
                let body = Expr::Num(amp)
                    .mul(Expr::call(Func::Sin, vec![Expr::Num(freq).mul(Expr::Var).add(Expr::Num(phase))]));
                let g = ScalarFn::new(body);
                let w = Window::new(0.0, width, step);
                let sup = estimate_sup(&g, &w).unwrap().value;
                let inf = estimate_inf(&g, &w).unwrap().value;
                let sup2 = estimate_sup(&g, &w.refined()).unwrap().value;
                let inf2 = estimate_inf(&g, &w.refined()).unwrap().value;
                prop_assert!(sup2 >= sup);
                prop_assert!(inf2 <= inf);
            }

            #[test]
            fn declared_and_sampled_agree(
                amp in 0.1f64..3.0,
                offset in -2.0f64..2.0,
                step in 1e-3f64..0.1,
            ) {
                let body = Expr::Num(offset).add(Expr::Num(amp).mul(Expr::call(Func::Cos, vec![Expr::Var])));
                let declared = ScalarFn::new(body.clone()).with_bounds(Some(offset - amp), Some(offset + amp));
                let sampled = ScalarFn::new(body);
                let w = Window::new(0.0, 4.0 * PI, step);
                let d = estimate_sup(&declared, &w).unwrap().value;
                let s = estimate_sup(&sampled, &w).unwrap().value;
                // cos peaks at multiples of 2 pi; the nearest sample is within step/4
                let tol = amp * (step / 4.0).powi(2) / 2.0 + 1e-12;
                prop_assert!(d >= s && d - s <= tol);
            }
        }
    }
}
