//! Symbolic and numeric engine for the planar three-segment snake robot.
//!
//! The crate derives the robot's velocity distribution from first principles,
//! checks it against the commonly transcribed display formulas (reporting any
//! sign repairs), decides when the configuration space carries a compatible
//! constant complex structure, assembles the adapted coframe, and normalizes
//! it to the target structure equations to extract the differential
//! invariants of the induced geometry. A fixed-step integrator exercises the
//! same distribution by flows.
//!
//! All symbolic work happens in exact arithmetic: trigonometric polynomials
//! over a field of rational functions in the scale parameters `s1, s2, s3`.
//! Floating point appears only in the sampling/fitting lanes, which serve as
//! independent oracles for the exact ones.

pub mod cr;
pub mod equiv;
pub mod exterior;
pub mod kin;
pub mod linalg;
pub mod numeric;
pub mod parse;
pub mod poly;
pub mod ratfunc;
pub mod report;
pub mod scalar;
pub mod snake;
pub mod trig;
pub mod vars;

/// Exact rational scalar used by every symbolic layer.
pub type Rat = num_rational::BigRational;
/// Arbitrary-precision integer.
pub type Int = num_bigint::BigInt;
/// The coefficient field: rational functions in `s1, s2, s3` over `Rat`.
pub type ParamField = ratfunc::RatFunc;
/// Canonical trigonometric polynomial over `ParamField`.
pub type TrigExpr = trig::TrigExpr;
/// Complex floating-point scalar of the numeric lane.
pub type C64 = num_complex::Complex64;

pub use numeric::{NumericPoint, Rng};
pub use parse::{parse, parse_ast, print, ParseError};
pub use poly::Param;
pub use vars::{AngVar, CartVar, Chart, Var};
