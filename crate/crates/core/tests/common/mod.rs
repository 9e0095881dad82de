#![allow(dead_code)]

use std::f64::consts::E;
use std::path::PathBuf;

use neutral_cert::config::{load_problem, Problem};
use neutral_cert::model::{DelayTerm, InitialData, LagFn, NeutralEquation, ScalarFn};
use neutral_cert::parse;

pub const TAU: f64 = 1.0 / E + 0.1;

pub fn problem_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("problems")
        .join(format!("{}.toml", name))
}

pub fn problem(name: &str) -> Problem {
    load_problem(&problem_path(name)).unwrap()
}

pub fn function(src: &str) -> ScalarFn {
    ScalarFn::new(parse(src).unwrap())
}

/// `x'(t) - 0.15 x'(t - g(t)) = -x(t - 1/e - 0.1 sin t)`.
pub fn oscillating_lag_equation(g_lag: LagFn) -> NeutralEquation {
    NeutralEquation::new(
        0.0,
        ScalarFn::constant(0.15),
        g_lag,
        vec![DelayTerm {
            b: ScalarFn::constant(1.0),
            lag: LagFn::new(parse("1/e + 0.1*sin(t)").unwrap(), 1.0 / E - 0.1, TAU),
        }],
    )
}

pub fn cosine_history() -> InitialData {
    InitialData::new(function("cos(t)"), function("sin(2*t) + 2"), 0.0).unwrap()
}

pub fn constant_equation(a: f64, sigma: f64, b: f64, tau: f64) -> NeutralEquation {
    NeutralEquation::new(
        0.0,
        ScalarFn::constant(a),
        LagFn::constant(sigma),
        vec![DelayTerm {
            b: ScalarFn::constant(b),
            lag: LagFn::constant(tau),
        }],
    )
}
