//! Riemannian optimization on Euclidean space, the sphere and the oblique
//! manifold: gradient descent (fixed step and Armijo), a trust-region method
//! with first- and second-order steps, a Burer–Monteiro SDP front end, and a
//! harness that checks worst-case iteration bounds against recorded traces.

pub mod error;
pub mod gd;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod problem;
pub mod rtr;
pub mod sdp;
pub mod seed;
pub mod trace;
pub mod verify;

pub use error::{Error, Result, SolveFailure};
pub use manifold::{Manifold, Point, RetractionOrders, TangentBasis, TangentVector, DEFAULT_FEAS_TOL};
pub use problem::{EvalCounts, LipschitzEstimate, Problem, TaylorCheckReport};
pub use gd::{GdConfig, GdMode, GdStatus, GdTrace};
pub use trace::{FStar, Provenance};
pub use rtr::{Certificate, InnerSolver, RtrConfig, RtrStatus, RtrTrace};
pub use sdp::{BmSolution, MatrixFormat, SdpInstance};
