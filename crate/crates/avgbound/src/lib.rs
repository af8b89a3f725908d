//! Certified bounds on infinite-time averages of polynomial ODE systems and
//! on stationary expectations of their additive-noise stochastic
//! counterparts.
//!
//! The pipeline: polynomial bounding programs are assembled exactly
//! ([`bounds`]), compiled to semidefinite programs through sum-of-squares
//! constraints ([`sosc`]), solved by a dense extended-precision primal-dual
//! interior-point method ([`sdp`]), and the resulting Gram decompositions are
//! re-verified a posteriori ([`certify`]). Independent simulation oracles
//! ([`oracles`]) supply ground truth for validation.

pub mod bounds;
pub mod certify;
pub mod linalg;
pub mod oracles;
pub mod poly;
pub mod problem;
pub mod sdp;
pub mod sosc;

mod scalar;

pub use scalar::{float_to_rat, parse_rational, rat_to_float, Coeff, MIN_MANTISSA_BITS};

pub use rug::{Float, Rational};
