//! Command-line front end.
//!
//! Exit codes: 0 when the requested property is certified (or the command
//! simply succeeded), 2 when it is inconclusive, infeasible or fails
//! dominance, 1 on input and runtime errors.

use std::error::Error;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{load_problem, Problem};
use crate::criteria::{multi_delay_lhs, run_all, CriteriaError, CriterionId, Settings};
use crate::envelope::{certificate, optimize_lambda, EnvelopeCertificate, EnvelopeError};
use crate::model::{LagFn, NeutralEquation, ScalarFn};
use crate::solver::{integrate, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;

type Failure = Box<dyn Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(
    name = "neutral-cert",
    version,
    about = "Stability tests, decay envelopes and simulation for scalar neutral delay equations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate every stability test.
    Check(Common),
    /// Issue an exponential envelope certificate.
    Envelope {
        #[command(flatten)]
        common: Common,
        /// Certify at this rate instead of searching for the largest one.
        #[arg(long)]
        lambda: Option<f64>,
        /// CSV of the envelope on the solver grid.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the initial value problem.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate and compare the solution with its envelope.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
        /// Override the envelope constant.
        #[arg(long = "C", value_name = "C")]
        c: Option<f64>,
        /// CSV of t, x and the envelope.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one parameter and tabulate the verdicts.
    Region {
        #[command(flatten)]
        common: Common,
        /// sigma, a, b, tau, or bK / tauK for the K-th delayed term.
        #[arg(long)]
        param: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Problem file.
    pub config: PathBuf,
    /// Solver step.
    #[arg(long)]
    pub h: Option<f64>,
    /// End of the integration interval.
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// Width of the norm window.
    #[arg(long)]
    pub window: Option<f64>,
    /// Sampling step of the norm window.
    #[arg(long)]
    pub step: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<Problem, Failure> {
        let mut problem = load_problem(&self.config)?;
        let n = &mut problem.numerics;
        for (name, value) in [
            ("--h", self.h),
            ("--window", self.window),
            ("--step", self.step),
        ] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(format!("{} must be positive, got {}", name, v).into());
                }
            }
        }
        if let Some(h) = self.h {
            n.solver_h = h;
        }
        if let Some(t_end) = self.t_end {
            n.t_end = t_end;
        }
        if self.window.is_some() {
            n.window = self.window;
        }
        if self.step.is_some() {
            n.norm_step = self.step;
        }
        Ok(problem)
    }
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Check(common) => cmd_check(&common, out),
        Command::Envelope {
            common,
            lambda,
            out: path,
        } => cmd_envelope(&common, lambda, path.as_deref(), out),
        Command::Solve { common, out: path } => cmd_solve(&common, path.as_deref(), out),
        Command::Verify {
            common,
            lambda,
            c,
            out: path,
        } => cmd_verify(&common, lambda, c, path.as_deref(), out),
        Command::Region {
            common,
            param,
            from,
            to,
            points,
            out: path,
        } => cmd_region(&common, &param, from, to, points, path.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e);
            EXIT_ERROR
        }
    }
}

/// Parses `args` (program name first) and runs; usage errors exit with 1.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, out, err),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{}", text)
            } else {
                write!(out, "{}", text)
            };
            code
        }
    }
}

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{:.16e}", v)
    }
}

fn create(path: &Path) -> Result<io::BufWriter<File>, Failure> {
    let file = File::create(path).map_err(|e| format!("cannot write {}: {}", path.display(), e))?;
    Ok(io::BufWriter::new(file))
}

fn file_csv(path: &Path) -> Result<csv::Writer<io::BufWriter<File>>, Failure> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_sink<'a>(
    path: Option<&Path>,
    stdout: &'a mut dyn Write,
) -> Result<csv::Writer<Box<dyn Write + 'a>>, Failure> {
    let sink: Box<dyn Write + 'a> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(stdout),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn cmd_check(common: &Common, out: &mut dyn Write) -> Result<i32, Failure> {
    let problem = common.load()?;
    let settings = Settings::new(problem.window());
    let report = run_all(&problem.equation, &settings)?;
    writeln!(
        out,
        "{:<22} {:<10} {:<6} {:>14} {:>14}  details",
        "criterion", "applicable", "holds", "lhs", "threshold"
    )?;
    for v in &report.verdicts {
        let details: Vec<String> = v
            .intermediates
            .iter()
            .map(|(k, x)| format!("{}={:.6}", k, x))
            .collect();
        let (lhs, threshold) = if v.applicable {
            (format!("{:.6}", v.lhs), format!("{:.6}", v.threshold))
        } else {
            ("-".to_string(), "-".to_string())
        };
        writeln!(
            out,
            "{:<22} {:<10} {:<6} {:>14} {:>14}  {} {}",
            v.id.as_str(),
            v.applicable,
            v.applicable && v.holds,
            lhs,
            threshold,
            details.join(" "),
            v.note
        )?;
    }
    if report.overall {
        let by: Vec<&str> = report
            .verdicts
            .iter()
            .filter(|v| v.applicable && v.holds)
            .map(|v| v.id.as_str())
            .collect();
        writeln!(out, "overall: exponentially stable (by {})", by.join(", "))?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "overall: inconclusive")?;
        Ok(EXIT_INCONCLUSIVE)
    }
}

/// Certificate at `lambda`, or at the largest feasible rate found.
fn issue(problem: &Problem, lambda: Option<f64>) -> Result<EnvelopeCertificate, EnvelopeError> {
    let window = problem.window();
    let eq = &problem.equation;
    let lambda = match lambda {
        Some(l) => l,
        None => {
            let n = &problem.numerics;
            match optimize_lambda(eq, n.lambda_hi, n.tol, &window)? {
                Some(l) => l,
                None => {
                    let probe = n.lambda_hi / crate::envelope::SCAN_POINTS as f64;
                    // report why the smallest scanned rate fails
                    return certificate(eq, probe, &problem.initial, problem.f_bound, &window);
                }
            }
        }
    };
    certificate(eq, lambda, &problem.initial, problem.f_bound, &window)
}

fn write_certificate(cert: &EnvelopeCertificate, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "lambda       = {}", cert.lambda)?;
    writeln!(out, "alpha        = {}", cert.alpha)?;
    writeln!(out, "M1           = {}", cert.m1)?;
    writeln!(out, "M0           = {}", cert.m0)?;
    writeln!(out, "C            = {}", cert.c)?;
    writeln!(out, "forcing_gain = {}", cert.forcing_gain)?;
    writeln!(out, "f_bound      = {}", cert.f_bound)?;
    writeln!(out, "C = M0 * (x0_term + neutral_term + sum delay_term)")?;
    writeln!(out, "  x0_term      = {}", cert.x0_term)?;
    writeln!(
        out,
        "  neutral_term = {} (||psi|| = {})",
        cert.neutral_term, cert.psi_norm
    )?;
    for (k, (term, phi)) in cert.delay_terms.iter().zip(&cert.phi_norms).enumerate() {
        writeln!(
            out,
            "  delay_term[{}] = {} (||phi|| = {})",
            k + 1,
            term,
            phi
        )?;
    }
    writeln!(
        out,
        "|x(t)| <= {} e^(-{} (t - {})) + {} ||f||",
        cert.c, cert.lambda, cert.t0, cert.forcing_gain
    )
}

fn cmd_envelope(
    common: &Common,
    lambda: Option<f64>,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let problem = common.load()?;
    let cert = match issue(&problem, lambda) {
        Ok(cert) => cert,
        Err(EnvelopeError::Infeasible(clause)) => {
            writeln!(out, "infeasible: {}", clause)?;
            return Ok(EXIT_INCONCLUSIVE);
        }
        Err(e) => return Err(e.into()),
    };
    write_certificate(&cert, out)?;
    if let Some(path) = path {
        let n = &problem.numerics;
        let steps = crate::solver::step_count(problem.equation.t0, n.t_end, n.solver_h);
        let mut w = file_csv(path)?;
        w.write_record(["t", "envelope", "bound"])?;
        for i in 0..=steps {
            let t = problem.equation.t0 + i as f64 * n.solver_h;
            w.write_record([fmt_f64(t), fmt_f64(cert.decay(t)), fmt_f64(cert.total(t))])?;
        }
        w.flush()?;
    }
    Ok(EXIT_OK)
}

fn solve(problem: &Problem) -> Result<Trajectory, Failure> {
    let n = &problem.numerics;
    Ok(integrate(
        &problem.equation,
        &problem.initial,
        &problem.forcing,
        n.t_end,
        n.solver_h,
    )?)
}

fn cmd_solve(common: &Common, path: Option<&Path>, out: &mut dyn Write) -> Result<i32, Failure> {
    let problem = common.load()?;
    let traj = solve(&problem)?;
    let mut w = csv_sink(path, out)?;
    w.write_record(["t", "x", "dx"])?;
    for i in 0..traj.len() {
        w.write_record([
            fmt_f64(traj.time(i)),
            fmt_f64(traj.x[i]),
            fmt_f64(traj.dx[i]),
        ])?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

fn cmd_verify(
    common: &Common,
    lambda: Option<f64>,
    c: Option<f64>,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let problem = common.load()?;
    let forced = problem.f_bound > 0.0;
    // replaying given constants for an unforced problem needs no certificate
    let (lambda, c, gain) = match (lambda, c) {
        (Some(l), Some(c)) if !forced => (l, c, 0.0),
        _ => match issue(&problem, lambda) {
            Ok(cert) => (cert.lambda, c.unwrap_or(cert.c), cert.forcing_gain),
            Err(EnvelopeError::Infeasible(clause)) => {
                writeln!(out, "infeasible: {}", clause)?;
                return Ok(EXIT_INCONCLUSIVE);
            }
            Err(e) => return Err(e.into()),
        },
    };
    let traj = solve(&problem)?;
    let t0 = problem.equation.t0;

    let mut w = match path {
        Some(p) => Some(file_csv(p)?),
        None => None,
    };
    if let Some(w) = w.as_mut() {
        w.write_record(["t", "x", "envelope"])?;
    }
    let mut f_sup = 0.0_f64;
    let mut worst = 0.0_f64;
    let mut worst_t = t0;
    for i in 0..traj.len() {
        let t = traj.time(i);
        if forced {
            f_sup = f_sup.max(problem.forcing.eval(t)?.abs());
        }
        let envelope = c * (-lambda * (t - t0)).exp() + gain * f_sup;
        let x = traj.x[i];
        let ratio = if x == 0.0 { 0.0 } else { x.abs() / envelope };
        if ratio > worst || ratio.is_nan() {
            worst = ratio;
            worst_t = t;
        }
        if let Some(w) = w.as_mut() {
            w.write_record([fmt_f64(t), fmt_f64(x), fmt_f64(envelope)])?;
        }
    }
    if let Some(mut w) = w {
        w.flush()?;
    }

    writeln!(out, "lambda = {}", lambda)?;
    writeln!(out, "C = {}", c)?;
    if forced {
        writeln!(out, "forcing_gain = {}", gain)?;
    }
    writeln!(out, "max |x| / envelope = {} at t = {}", worst, worst_t)?;
    if worst <= 1.0 {
        writeln!(out, "PASS")?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "FAIL")?;
        Ok(EXIT_INCONCLUSIVE)
    }
}

/// A scalar knob of the equation that a sweep may set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knob {
    /// Constant neutral lag.
    Sigma,
    /// Constant neutral coefficient.
    A,
    /// Constant coefficient of the k-th delayed term (0-based).
    B(usize),
    /// Constant lag of the k-th delayed term (0-based).
    Tau(usize),
}

impl Knob {
    pub fn parse(name: &str, m: usize) -> Result<Self, String> {
        let indexed = |prefix: &str| -> Option<Result<usize, String>> {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() {
                return Some(Ok(0));
            }
            Some(match rest.parse::<usize>() {
                Ok(k) if (1..=m).contains(&k) => Ok(k - 1),
                _ => Err(format!(
                    "unknown parameter '{}': the equation has {} delayed term(s)",
                    name, m
                )),
            })
        };
        match name {
            "sigma" => Ok(Knob::Sigma),
            "a" => Ok(Knob::A),
            _ => {
                if let Some(k) = indexed("tau") {
                    return k.map(Knob::Tau);
                }
                if let Some(k) = indexed("b") {
                    return k.map(Knob::B);
                }
                Err(format!(
                    "unknown parameter '{}' (expected sigma, a, b, bK, tau or tauK)",
                    name
                ))
            }
        }
    }

    pub fn apply(self, eq: &NeutralEquation, value: f64) -> NeutralEquation {
        let mut eq = eq.clone();
        match self {
            Knob::Sigma => eq.g_lag = LagFn::constant(value),
            Knob::A => eq.a = ScalarFn::constant(value),
            Knob::B(k) => eq.terms[k].b = ScalarFn::constant(value),
            Knob::Tau(k) => eq.terms[k].lag = LagFn::constant(value),
        }
        eq
    }
}

/// `points` values from `from` to `to` inclusive.
pub fn sweep_values(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![from],
        _ => (0..points)
            .map(|i| from + (to - from) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn region_row(problem: &Problem, knob: Knob, value: f64) -> Result<Vec<String>, Failure> {
    let eq = knob.apply(&problem.equation, value);
    let window = problem.numerics.window_for(&eq);
    let settings = Settings::new(window);
    let mut row = vec![fmt_f64(value)];
    let report = match run_all(&eq, &settings) {
        Ok(report) => report,
        Err(CriteriaError::Invalid(_)) => {
            row.extend(std::iter::repeat_n(
                "invalid".to_string(),
                CriterionId::ALL.len() + 3,
            ));
            return Ok(row);
        }
        Err(e) => return Err(e.into()),
    };
    for v in &report.verdicts {
        row.push(if v.applicable {
            v.holds.to_string()
        } else {
            "NA".into()
        });
    }
    row.push(report.overall.to_string());
    row.push(fmt_f64(multi_delay_lhs(&eq, &settings)?));
    let n = &problem.numerics;
    let lambda_star = optimize_lambda(&eq, n.lambda_hi, n.tol, &window)?;
    row.push(lambda_star.map_or("NA".into(), fmt_f64));
    Ok(row)
}

fn cmd_region(
    common: &Common,
    param: &str,
    from: f64,
    to: f64,
    points: usize,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let problem = common.load()?;
    let knob = Knob::parse(param, problem.equation.m())?;
    if points == 0 {
        return Err("--points must be at least 1".into());
    }
    let rows = sweep_values(from, to, points)
        .into_par_iter()
        .map(|v| region_row(&problem, knob, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_sink(path, out)?;
    let mut header = vec![param.to_string()];
    header.extend(CriterionId::ALL.iter().map(|id| id.as_str().to_string()));
    header.extend(["overall", "multi_delay_lhs", "lambda_star"].map(String::from));
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knob_names() {
        assert_eq!(Knob::parse("sigma", 2), Ok(Knob::Sigma));
        assert_eq!(Knob::parse("a", 2), Ok(Knob::A));
        assert_eq!(Knob::parse("b", 2), Ok(Knob::B(0)));
        assert_eq!(Knob::parse("tau2", 2), Ok(Knob::Tau(1)));
        assert!(Knob::parse("tau3", 2).is_err());
        assert!(Knob::parse("gamma", 1).is_err());
    }

    #[test]
    fn sweep_grid() {
        assert_eq!(sweep_values(1.0, 1.0, 1), vec![1.0]);
        let v = sweep_values(0.0, 4.0, 401);
        assert_eq!(v.len(), 401);
        assert_eq!(v[400], 4.0);
        assert!((v[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn number_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02e23] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "NA");
    }

    #[test]
    fn usage_errors_exit_with_one() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = main_with_args(["neutral-cert", "bogus"], &mut out, &mut err);
        assert_eq!(code, EXIT_ERROR);
        assert!(!err.is_empty());
    }
}
