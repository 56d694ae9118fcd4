//! Exact tabular engine for Markov potential games.
//!
//! The crate builds finite Markov games from three certified potential-game
//! families, evaluates joint policies exactly with dense linear solves, runs
//! independent policy mirror descent under Euclidean or KL regularization,
//! measures Nash gaps against exact best responses, and cross-checks the
//! main build with independent brute-force oracles.
//!
//! Everything is generic over the scalar type (see [`scalar::Scalar`]);
//! `f64` aliases are exported at the crate root and are what the stated
//! tolerances assume.

pub mod error;
pub mod metrics;
pub mod oracle;
pub mod pmd;
pub mod eval;
pub mod format;
pub mod game;
pub mod joint;
pub mod linalg;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` concrete aliases; the default precision for experiments.
pub type Game64 = game::MarkovGame<f64>;
pub type Potential64 = game::PotentialSpec<f64>;
pub type Policy64 = game::JointPolicy<f64>;
pub type EvalBundle64 = eval::EvalBundle<f64>;

/// `f32` aliases for low-precision experimentation.
pub type Game32 = game::MarkovGame<f32>;
pub type Potential32 = game::PotentialSpec<f32>;
pub type Policy32 = game::JointPolicy<f32>;
