//! Problem files.
//!
//! A problem is a TOML document:
//!
//! ```toml
//! [equation]
//! t0 = 0.0
//! a = "0.15"
//! g_lag = "0.5"
//!
//! [[equation.term]]
//! b = "1"
//! h_lag = { expr = "1/e + 0.1*sin(t)", inf = "1/e - 0.1", sup = "1/e + 0.1" }
//!
//! [initial]
//! phi = "cos(t)"
//! psi = "sin(2*t) + 2"
//!
//! [forcing]
//! f = "0"
//!
//! [numerics]
//! solver_h = 1e-3
//! t_end = 60.0
//! ```
//!
//! Every function is either an expression string or a table with `expr`
//! and optional `inf`/`sup` bounds (numbers or constant expressions).
//! Lag bounds that are not declared are estimated on the norm window.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::expr::{parse, EvalError, Expr, ParseError};
use crate::model::{
    sampled_norm, DelayTerm, InitialData, LagFn, NeutralEquation, ScalarFn, Window,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed problem file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{field}: {source}")]
    Expr { field: String, source: ParseError },
    #[error("{field}: bound must not depend on t")]
    VariableBound { field: String },
    #[error("{field}: {source}")]
    Eval { field: String, source: EvalError },
    #[error("initial.x0 = {x0} differs from phi(t0) = {phi_t0}")]
    InitialMismatch { x0: f64, phi_t0: f64 },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FnSpec {
    Text(String),
    Number(f64),
    Detailed {
        expr: String,
        inf: Option<Bound>,
        sup: Option<Bound>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub b: FnSpec,
    pub h_lag: FnSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationSpec {
    #[serde(default)]
    pub t0: f64,
    pub a: FnSpec,
    pub g_lag: FnSpec,
    #[serde(rename = "term")]
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub phi: FnSpec,
    pub psi: FnSpec,
    pub x0: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSpec {
    pub f: Option<FnSpec>,
    pub f_bound: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSpec {
    /// Width of the norm window `[t0, t0 + window]`.
    pub window: Option<f64>,
    pub norm_step: Option<f64>,
    pub solver_h: Option<f64>,
    pub t_end: Option<f64>,
    pub lambda_hi: Option<f64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub equation: EquationSpec,
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub numerics: NumericsSpec,
}

pub const DEFAULT_SOLVER_H: f64 = 1e-3;
pub const DEFAULT_T_END: f64 = 60.0;
pub const DEFAULT_LAMBDA_HI: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Numerical settings after defaults are applied. Window fields left unset
/// follow the equation (see [`NeutralEquation::default_window`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    pub window: Option<f64>,
    pub norm_step: Option<f64>,
    pub solver_h: f64,
    pub t_end: f64,
    pub lambda_hi: f64,
    pub tol: f64,
}

impl Numerics {
    pub fn window_for(&self, eq: &NeutralEquation) -> Window {
        let default = eq.default_window();
        let width = self.window.unwrap_or(default.hi - default.lo);
        let step = self.norm_step.unwrap_or(1e-3 * width);
        Window::new(eq.t0, eq.t0 + width, step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub equation: NeutralEquation,
    pub initial: InitialData,
    pub forcing: ScalarFn,
    /// Bound on `|f|` used by envelope certificates; sampled on
    /// `[t0, t_end]` unless declared.
    pub f_bound: f64,
    pub numerics: Numerics,
}

impl Problem {
    pub fn window(&self) -> Window {
        self.numerics.window_for(&self.equation)
    }
}

fn parse_field(field: &str, src: &str) -> Result<Expr, ConfigError> {
    parse(src).map_err(|source| ConfigError::Expr {
        field: field.to_string(),
        source,
    })
}

fn constant(field: &str, expr: &Expr) -> Result<f64, ConfigError> {
    if !expr.is_constant() {
        return Err(ConfigError::VariableBound {
            field: field.to_string(),
        });
    }
    expr.eval(0.0).map_err(|source| ConfigError::Eval {
        field: field.to_string(),
        source,
    })
}

fn bound(field: &str, b: &Option<Bound>) -> Result<Option<f64>, ConfigError> {
    match b {
        None => Ok(None),
        Some(Bound::Number(v)) => Ok(Some(*v)),
        Some(Bound::Text(src)) => {
            let expr = parse_field(field, src)?;
            constant(field, &expr).map(Some)
        }
    }
}

/// Expression plus declared `(inf, sup)`; constant expressions declare
/// their own value.
fn resolve(field: &str, spec: &FnSpec) -> Result<(Expr, Option<f64>, Option<f64>), ConfigError> {
    let (expr, inf, sup) = match spec {
        FnSpec::Number(v) => (Expr::Num(*v), None, None),
        FnSpec::Text(src) => (parse_field(field, src)?, None, None),
        FnSpec::Detailed { expr, inf, sup } => (
            parse_field(&format!("{}.expr", field), expr)?,
            bound(&format!("{}.inf", field), inf)?,
            bound(&format!("{}.sup", field), sup)?,
        ),
    };
    if expr.is_constant() && inf.is_none() && sup.is_none() {
        let v = constant(field, &expr)?;
        return Ok((expr, Some(v), Some(v)));
    }
    Ok((expr, inf, sup))
}

fn scalar_fn(field: &str, spec: &FnSpec) -> Result<ScalarFn, ConfigError> {
    let (expr, inf, sup) = resolve(field, spec)?;
    Ok(ScalarFn::new(expr).with_bounds(inf, sup))
}

fn lag_fn(field: &str, spec: &FnSpec, window: &Window) -> Result<LagFn, ConfigError> {
    let (expr, inf, sup) = resolve(field, spec)?;
    let (inf, sup) = match (inf, sup) {
        (Some(inf), Some(sup)) => (inf, sup),
        _ => {
            let sampled =
                LagFn::sampled(expr.clone(), window).map_err(|source| ConfigError::Eval {
                    field: field.to_string(),
                    source,
                })?;
            (
                inf.unwrap_or(sampled.lag_inf),
                sup.unwrap_or(sampled.lag_sup),
            )
        }
    };
    Ok(LagFn::new(expr, inf, sup))
}

fn positive(field: &str, v: Option<f64>) -> Result<Option<f64>, ConfigError> {
    match v {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(ConfigError::Invalid {
            field: field.to_string(),
            message: format!("must be positive, got {}", v),
        }),
        other => Ok(other),
    }
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn build(&self) -> Result<Problem, ConfigError> {
        let n = &self.numerics;
        let numerics = Numerics {
            window: positive("numerics.window", n.window)?,
            norm_step: positive("numerics.norm_step", n.norm_step)?,
            solver_h: positive("numerics.solver_h", n.solver_h)?.unwrap_or(DEFAULT_SOLVER_H),
            t_end: n.t_end.unwrap_or(DEFAULT_T_END),
            lambda_hi: positive("numerics.lambda_hi", n.lambda_hi)?.unwrap_or(DEFAULT_LAMBDA_HI),
            tol: positive("numerics.tol", n.tol)?.unwrap_or(DEFAULT_TOL),
        };
        let spec = &self.equation;
        if spec.terms.is_empty() {
            return Err(ConfigError::Invalid {
                field: "equation.term".into(),
                message: "at least one delayed term is required".into(),
            });
        }
        let a = scalar_fn("equation.a", &spec.a)?;
        let mut coefficients = Vec::with_capacity(spec.terms.len());
        for (k, term) in spec.terms.iter().enumerate() {
            coefficients.push(scalar_fn(&format!("equation.term[{}].b", k), &term.b)?);
        }

        // undeclared lag bounds are sampled before the lags are known, on the
        // window of an equation without lags
        let provisional = NeutralEquation::new(spec.t0, a.clone(), LagFn::constant(0.0), vec![]);
        let lag_window = numerics.window_for(&provisional);
        let g_lag = lag_fn("equation.g_lag", &spec.g_lag, &lag_window)?;
        let mut lags = Vec::with_capacity(spec.terms.len());
        for (k, term) in spec.terms.iter().enumerate() {
            lags.push(lag_fn(
                &format!("equation.term[{}].h_lag", k),
                &term.h_lag,
                &lag_window,
            )?);
        }
        let terms = coefficients
            .into_iter()
            .zip(lags)
            .map(|(b, lag)| DelayTerm { b, lag })
            .collect();
        let equation = NeutralEquation::new(spec.t0, a, g_lag, terms);

        let initial = match &self.initial {
            None => InitialData::zero(),
            Some(init) => {
                let phi = scalar_fn("initial.phi", &init.phi)?;
                let psi = scalar_fn("initial.psi", &init.psi)?;
                let phi_t0 = phi.eval(spec.t0).map_err(|source| ConfigError::Eval {
                    field: "initial.phi".into(),
                    source,
                })?;
                if let Some(x0) = init.x0 {
                    if (x0 - phi_t0).abs() > 1e-12 * phi_t0.abs().max(1.0) {
                        return Err(ConfigError::InitialMismatch { x0, phi_t0 });
                    }
                }
                InitialData {
                    phi,
                    psi,
                    x0: phi_t0,
                }
            }
        };

        let forcing = match &self.forcing.f {
            None => ScalarFn::constant(0.0),
            Some(spec) => scalar_fn("forcing.f", spec)?,
        };
        let f_bound = match self.forcing.f_bound {
            Some(v) => v,
            None => {
                let span = Window::new(spec.t0, numerics.t_end.max(spec.t0), numerics.solver_h);
                sampled_norm(|t| forcing.eval(t), &span).map_err(|source| ConfigError::Eval {
                    field: "forcing.f".into(),
                    source,
                })?
            }
        };

        Ok(Problem {
            equation,
            initial,
            forcing,
            f_bound,
            numerics,
        })
    }
}

pub fn load_problem(path: &Path) -> Result<Problem, ConfigError> {
    ProblemConfig::load(path)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROBLEM: &str = r#"
[equation]
t0 = 0.0
a = "0.15"
g_lag = "0.5"

[[equation.term]]
b = "1"
h_lag = { expr = "1/e + 0.1*sin(t)", inf = "1/e - 0.1", sup = "1/e + 0.1" }

[initial]
phi = "cos(t)"
psi = "sin(2*t) + 2"
x0 = 1.0
"#;

    #[test]
    fn builds_oscillating_lag_problem() {
        let p = ProblemConfig::from_toml(PROBLEM).unwrap().build().unwrap();
        let eq = &p.equation;
        assert_eq!(eq.a.declared_sup, Some(0.15));
        assert_eq!(eq.g_lag.lag_inf, 0.5);
        assert!((eq.terms[0].lag.lag_sup - (1.0 / std::f64::consts::E + 0.1)).abs() < 1e-15);
        assert_eq!(p.initial.x0, 1.0);
        assert_eq!(p.f_bound, 0.0);
        assert_eq!(p.numerics.solver_h, DEFAULT_SOLVER_H);
        let w = p.window();
        assert!((w.hi - 40.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn samples_undeclared_lag_bounds() {
        let text = PROBLEM.replace(r#"g_lag = "0.5""#, r#"g_lag = "2.7 + 0.3*cos(t)""#);
        let p = ProblemConfig::from_toml(&text).unwrap().build().unwrap();
        assert!((p.equation.g_lag.lag_sup - 3.0).abs() < 1e-9);
        assert!((p.equation.g_lag.lag_inf - 2.4).abs() < 1e-3);
    }

    #[test]
    fn reports_expression_field() {
        let text = PROBLEM.replace(r#"a = "0.15""#, r#"a = "0.15 +""#);
        let err = ProblemConfig::from_toml(&text)
            .unwrap()
            .build()
            .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.starts_with("equation.a: syntax error at column 7"),
            "{}",
            msg
        );
    }

    #[test]
    fn reports_toml_line() {
        let err = ProblemConfig::from_toml("[equation]\na = \n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{}", err);
    }

    #[test]
    fn rejects_inconsistent_x0() {
        let text = PROBLEM.replace("x0 = 1.0", "x0 = 2.0");
        let err = ProblemConfig::from_toml(&text)
            .unwrap()
            .build()
            .unwrap_err();
        assert!(matches!(err, ConfigError::InitialMismatch { .. }));
    }

    #[test]
    fn rejects_variable_bound() {
        let text = PROBLEM.replace(r#"inf = "1/e - 0.1""#, r#"inf = "t""#);
        let err = ProblemConfig::from_toml(&text)
            .unwrap()
            .build()
            .unwrap_err();
        assert!(matches!(err, ConfigError::VariableBound { .. }));
    }

    #[test]
    fn samples_forcing_bound() {
        let text = format!("{}\n[forcing]\nf = \"0.3*sin(t)\"\n", PROBLEM);
        let p = ProblemConfig::from_toml(&text).unwrap().build().unwrap();
        assert!((p.f_bound - 0.3).abs() < 1e-6);
    }
}
