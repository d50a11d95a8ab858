//! ssncvx — a semismooth Newton solver for convex composite optimization.
//!
//! Solves problems of the form
//!
//! ```text
//!     minimize   p(x) + f(B(x)) + <c, x> + ½ <x, Q x>
//!     subject to x ∈ P1,   A(x) ∈ P2,
//! ```
//!
//! where `p` and `f` come from a catalog of proximable functions (ℓ1, ℓ2,
//! norm balls, box/cone indicators, nuclear/spectral norms, the PSD cone,
//! fused total variation, squared loss), `P1`/`P2` are box sets, and
//! `A`/`B`/`Q` are linear operators. The problem is lifted to a saddle-point
//! system via an augmented Lagrangian dual and the stacked optimality
//! residual `F(w) = 0` is driven to zero by a globalized, regularized
//! semismooth Newton method. Each Newton system is reduced by a Schur
//! complement whose blocks exploit the closed-form structure of generalized
//! Jacobians of the proximal maps (diagonal, diagonal-plus-low-rank,
//! spectral, fused-block).
//!
//! Capabilities:
//!
//! * proximal maps, Moreau envelopes, and generalized Jacobians for the
//!   whole function catalog ([`prox`]);
//! * second-order-cone log-barrier smoothing with exact prox/Jacobian
//!   formulas ([`prox::soc`]);
//! * structured Schur-complement solves, direct or matrix-free CG
//!   ([`linsys`]);
//! * the globalized Newton outer loop with nonmonotone acceptance,
//!   regularization fallback, and adaptive penalty updates ([`newton`]);
//! * reproducible synthetic problem generators ([`presets`]) and a JSON /
//!   Matrix Market problem-file front end ([`io`]).

#![allow(clippy::needless_range_loop)]

pub mod la;
pub mod model;
pub mod prox;
pub mod saddle;
pub mod linsys;
pub mod newton;
pub mod presets;
pub mod io;
pub mod report;

pub use model::{build_problem, BoxSet, FunctionKind, FunctionSpec, LinearOperator, ModelError, Problem, ProblemSpec, VariableLayout};
pub use newton::{solve, solve_with_hooks, AcceptTag, Hooks, IterTrace, SolveStatus, SolverConfig};
pub use presets::{generate_preset, PresetError, PresetOptions};
pub use report::SolveReport;
pub use saddle::KktResiduals;
