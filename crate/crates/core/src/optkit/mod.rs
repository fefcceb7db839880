//! Feasibility and optimization oracles: LP, dense convex QP and Lyapunov LMIs.

pub mod lmi;
pub mod lp;
pub mod polyhedron;
pub mod qp;

pub use lmi::{
    lmi_feasibility, lyapunov_margins, reverify, CertificateKind, LmiMode, LmiOptions,
    StabilityCertificate,
};
pub use lp::{LinearProgram, LpOutcome};
pub use polyhedron::{chebyshev_interior, ChebyshevBall, Polyhedron, DEFAULT_BOX_RADIUS, EPS_RADIUS};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
