//! Stability tests, exponential solution envelopes and a method-of-steps
//! solver for the scalar linear neutral equation
//!
//! ```text
//! x'(t) - a(t) x'(g(t)) + sum_k b_k(t) x(h_k(t)) = f(t)
//! ```

pub mod cli;
pub mod config;
pub mod criteria;
pub mod envelope;
pub mod expr;
pub mod model;
pub mod solver;

pub use criteria::{run_all, CriterionId, CriterionVerdict, Settings, StabilityReport};
pub use envelope::{certificate, feasible, optimize_lambda, EnvelopeCertificate};
pub use expr::{parse, Expr};
pub use model::{DelayTerm, InitialData, LagFn, NeutralEquation, ScalarFn, Window};
pub use solver::{fundamental_solution, integrate, Trajectory};
