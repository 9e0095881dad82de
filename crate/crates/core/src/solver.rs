//! Method-of-steps integration of the neutral initial value problem.
//!
//! The state history keeps both `x` and `x'` so that the neutral term
//! `x'(g(t))` can be read back. Each step is a classical four-stage
//! Runge-Kutta step whose stage right-hand sides look delayed arguments up
//! in the history; afterwards the node derivative is recomputed from the
//! equation itself, once as the right limit and once as the left limit, so
//! derivative jumps that land on the grid are resolved. Dense output is
//! cubic Hermite for `x` and piecewise linear for `x'`.

use thiserror::Error;

use crate::expr::EvalError;
use crate::model::{validate, InitialData, NeutralEquation, ScalarFn, Violation};

/// Relative slack when comparing an argument against the frontier.
const FRONTIER_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("step h = {0} must be positive and finite")]
    InvalidStep(f64),
    #[error("end time {t_end} precedes start time {t0}")]
    InvalidSpan { t0: f64, t_end: f64 },
    #[error("neutral lag g_lag has infimum {0}; the explicit scheme needs a positive neutral lag")]
    VanishingNeutralLag(f64),
    #[error("step h = {h} exceeds the infimum {lag_inf} of the neutral lag g_lag")]
    StepTooLarge { h: f64, lag_inf: f64 },
    #[error("equation fails validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("evaluating {location}: {source}")]
    Eval {
        location: &'static str,
        source: EvalError,
    },
    #[error("history requested at t = {t} beyond the frontier {frontier}")]
    BeyondFrontier { t: f64, frontier: f64 },
}

fn at(location: &'static str) -> impl Fn(EvalError) -> SolverError {
    move |source| SolverError::Eval { location, source }
}

/// Solution samples on the uniform grid `t0 + i h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub h: f64,
    pub x: Vec<f64>,
    /// Right derivative at each node.
    pub dx: Vec<f64>,
    /// Left derivative at each node; `psi(t0)` at the first node.
    pub dx_left: Vec<f64>,
}

/// Which one-sided limit to take at a point where the history may jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Trajectory {
    fn start(t0: f64, h: f64, x0: f64, capacity: usize) -> Self {
        let mut x = Vec::with_capacity(capacity);
        let mut dx = Vec::with_capacity(capacity);
        let mut dx_left = Vec::with_capacity(capacity);
        x.push(x0);
        dx.push(0.0);
        dx_left.push(0.0);
        Self {
            t0,
            h,
            x,
            dx,
            dx_left,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.h
    }

    pub fn frontier(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    /// Dense `(x, x')` for `t` in `[t0, frontier]`; `x'` is the right
    /// derivative at nodes.
    pub fn eval(&self, t: f64) -> Option<(f64, f64)> {
        self.eval_side(t, Side::Right)
    }

    /// Like [`Trajectory::eval`], taking the requested one-sided derivative
    /// when `t` is a node.
    pub fn eval_side(&self, t: f64, side: Side) -> Option<(f64, f64)> {
        let frontier = self.frontier();
        let slack = FRONTIER_SLACK * self.h;
        if t < self.t0 - slack || t > frontier + slack {
            return None;
        }
        let last = self.len() - 1;
        let pos = ((t - self.t0) / self.h).max(0.0);
        let i = (pos.round() as usize).min(last);
        if (pos - i as f64).abs() * self.h <= slack {
            let dx = match side {
                Side::Left => self.dx_left[i],
                Side::Right => self.dx[i],
            };
            return Some((self.x[i], dx));
        }
        let i = (pos.floor() as usize).min(last - 1);
        let theta = (t - self.time(i)) / self.h;
        Some(self.hermite(i, theta))
    }

    fn hermite(&self, i: usize, theta: f64) -> (f64, f64) {
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let (d0, d1) = (self.dx[i], self.dx_left[i + 1]);
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let x = h00 * x0 + h10 * self.h * d0 + h01 * x1 + h11 * self.h * d1;
        (x, d0 + theta * (d1 - d0))
    }
}

/// `(x(t), x'(t))` from the initial functions for `t < t0` and from the
/// trajectory otherwise.
pub fn history_eval(
    init: &InitialData,
    traj: &Trajectory,
    t: f64,
) -> Result<(f64, f64), SolverError> {
    if t < traj.t0 {
        let x = init.phi.eval(t).map_err(at("phi"))?;
        let dx = init.psi.eval(t).map_err(at("psi"))?;
        return Ok((x, dx));
    }
    traj.eval(t).ok_or(SolverError::BeyondFrontier {
        t,
        frontier: traj.frontier(),
    })
}

struct Stepper<'a> {
    eq: &'a NeutralEquation,
    init: &'a InitialData,
    forcing: &'a ScalarFn,
    traj: Trajectory,
}

impl Stepper<'_> {
    /// Whether `t` falls on the initial-data side of `t0`. A left limit at
    /// `t0` itself still reads the initial functions.
    fn before_start(&self, t: f64, side: Side) -> bool {
        let t0 = self.traj.t0;
        t < t0 || (side == Side::Left && t - t0 <= FRONTIER_SLACK * self.traj.h)
    }

    fn lookup(&self, t: f64, side: Side) -> Result<(f64, f64), SolverError> {
        self.traj
            .eval_side(t, side)
            .ok_or(SolverError::BeyondFrontier {
                t,
                frontier: self.traj.frontier(),
            })
    }

    fn history_x(&self, t: f64, side: Side) -> Result<f64, SolverError> {
        if self.before_start(t, side) {
            return self.init.phi.eval(t.min(self.traj.t0)).map_err(at("phi"));
        }
        self.lookup(t, side).map(|(x, _)| x)
    }

    fn history_dx(&self, t: f64, side: Side) -> Result<f64, SolverError> {
        if self.before_start(t, side) {
            return self.init.psi.eval(t.min(self.traj.t0)).map_err(at("psi"));
        }
        self.lookup(t, side).map(|(_, dx)| dx)
    }

    /// Right side `a(s) x'(g(s)) - sum b_k(s) x(h_k(s)) + f(s)` with state `y`
    /// at time `s >= frontier`. State arguments inside the open step are
    /// interpolated linearly between the frontier value and `y`. `side`
    /// selects one-sided limits of the history at jump points.
    fn rhs(&self, s: f64, y: f64, side: Side) -> Result<f64, SolverError> {
        let frontier = self.traj.frontier();
        let x_frontier = *self.traj.x.last().expect("trajectory is never empty");
        let eq = self.eq;

        let neutral_arg = s - eq.g_lag.eval(s).map_err(at("g_lag"))?;
        let slack = FRONTIER_SLACK * self.traj.h;
        if neutral_arg > frontier + slack {
            return Err(SolverError::BeyondFrontier {
                t: neutral_arg,
                frontier,
            });
        }
        let mut value =
            eq.a.eval(s).map_err(at("a"))? * self.history_dx(neutral_arg.min(frontier), side)?;
        for term in &eq.terms {
            let arg = s - term.lag.eval(s).map_err(at("h_lag"))?;
            let x = if arg <= frontier {
                self.history_x(arg, side)?
            } else {
                x_frontier + (y - x_frontier) * (arg - frontier) / (s - frontier)
            };
            value -= term.b.eval(s).map_err(at("b"))? * x;
        }
        Ok(value + self.forcing.eval(s).map_err(at("f"))?)
    }

    fn step(&mut self) -> Result<(), SolverError> {
        let h = self.traj.h;
        let t = self.traj.frontier();
        let x = *self.traj.x.last().expect("trajectory is never empty");
        // stages at the step ends see the history from inside the step
        let k1 = self.rhs(t, x, Side::Right)?;
        let k2 = self.rhs(t + 0.5 * h, x + 0.5 * h * k1, Side::Right)?;
        let k3 = self.rhs(t + 0.5 * h, x + 0.5 * h * k2, Side::Right)?;
        let next_t = self.traj.time(self.traj.len());
        let k4 = self.rhs(next_t, x + h * k3, Side::Left)?;
        let next_x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let next_dx_left = self.rhs(next_t, next_x, Side::Left)?;
        let next_dx = self.rhs(next_t, next_x, Side::Right)?;
        self.traj.x.push(next_x);
        self.traj.dx.push(next_dx);
        self.traj.dx_left.push(next_dx_left);
        Ok(())
    }
}

pub fn step_count(t0: f64, t_end: f64, h: f64) -> usize {
    let ratio = (t_end - t0) / h;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Integrates on `[eq.t0, t_end]` with fixed step `h`. Requires a positive
/// neutral lag with `h <= inf (t - g(t))` so the neutral argument always
/// lies in known history.
pub fn integrate(
    eq: &NeutralEquation,
    init: &InitialData,
    forcing: &ScalarFn,
    t_end: f64,
    h: f64,
) -> Result<Trajectory, SolverError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SolverError::InvalidStep(h));
    }
    if t_end < eq.t0 {
        return Err(SolverError::InvalidSpan { t0: eq.t0, t_end });
    }
    let lag_inf = eq.g_lag.lag_inf;
    if lag_inf <= 0.0 {
        return Err(SolverError::VanishingNeutralLag(lag_inf));
    }
    if h > lag_inf {
        return Err(SolverError::StepTooLarge { h, lag_inf });
    }
    let violations = validate(eq, &eq.default_window());
    if !violations.is_empty() {
        return Err(SolverError::Invalid(violations));
    }

    let steps = step_count(eq.t0, t_end, h);
    let mut stepper = Stepper {
        eq,
        init,
        forcing,
        traj: Trajectory::start(eq.t0, h, init.x0, steps + 1),
    };
    // every argument lies in the initial history except zero state lags,
    // which read x0 itself
    stepper.traj.dx[0] = stepper.rhs(eq.t0, init.x0, Side::Right)?;
    stepper.traj.dx_left[0] = init.psi.eval(eq.t0).map_err(at("psi"))?;
    for _ in 0..steps {
        stepper.step()?;
    }
    Ok(stepper.traj)
}

/// Fundamental function `X(t, s)` for `t` in `[s, t_end]`: unit value at
/// `s`, zero history and no forcing. `X(t, s) = 0` for `t < s`.
pub fn fundamental_solution(
    eq: &NeutralEquation,
    s: f64,
    t_end: f64,
    h: f64,
) -> Result<Trajectory, SolverError> {
    let shifted = NeutralEquation {
        t0: s,
        ..eq.clone()
    };
    integrate(
        &shifted,
        &InitialData::unit_impulse(),
        &ScalarFn::constant(0.0),
        t_end,
        h,
    )
}

/// Observed order `log2(|x_h - x_{h/2}| / |x_{h/2} - x_{h/4}|)` at `t_end`.
pub fn convergence_order(
    eq: &NeutralEquation,
    init: &InitialData,
    forcing: &ScalarFn,
    t_end: f64,
    h: f64,
) -> Result<f64, SolverError> {
    let end_value = |step: f64| -> Result<f64, SolverError> {
        let traj = integrate(eq, init, forcing, t_end, step)?;
        Ok(*traj.x.last().expect("trajectory is never empty"))
    };
    let coarse = end_value(h)?;
    let mid = end_value(h / 2.0)?;
    let fine = end_value(h / 4.0)?;
    Ok(((coarse - mid).abs() / (mid - fine).abs()).log2())
}

/// Largest deviation between stored node derivatives and the equation's
/// right side rebuilt from the finished history.
pub fn residual(
    eq: &NeutralEquation,
    init: &InitialData,
    forcing: &ScalarFn,
    traj: &Trajectory,
) -> Result<f64, SolverError> {
    let mut worst: f64 = 0.0;
    for (i, t) in traj.times().enumerate() {
        let neutral = history_eval(init, traj, t - eq.g_lag.eval(t).map_err(at("g_lag"))?)?.1;
        let mut rhs = eq.a.eval(t).map_err(at("a"))? * neutral;
        for term in &eq.terms {
            let arg = t - term.lag.eval(t).map_err(at("h_lag"))?;
            rhs -= term.b.eval(t).map_err(at("b"))? * history_eval(init, traj, arg)?.0;
        }
        rhs += forcing.eval(t).map_err(at("f"))?;
        worst = worst.max((rhs - traj.dx[i]).abs());
    }
    Ok(worst)
}
