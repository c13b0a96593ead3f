//! Simulation and checking toolkit for a Byzantine-tolerant read/write
//! register that keeps working while servers join and leave.

pub mod adversary;
pub mod checker;
pub mod counterexample;
pub mod model;
pub mod params;
pub mod protocol;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use params::{check_constraints, feasible_interval, min_ns_min, ConstraintReport, Params};
pub use scalar::Scalar;

/// Parameters over binary doubles.
pub type Params64 = Params<f64>;
/// Parameters over exact rationals.
pub type ExactParams = Params<num_rational::BigRational>;
