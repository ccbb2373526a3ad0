//! Maximum weight entropy (MaxWEnt) stochastic neural networks.
//!
//! A pretrained network's weights `w̄` are wrapped in a distribution
//! `w = w̄ + noise(φ, z)` whose spread `φ` is trained to trade average
//! empirical risk against weight entropy. Sampling that distribution at
//! inference gives epistemic uncertainty scores used for out-of-distribution
//! detection.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod network;
pub mod numerics;
pub mod oracle;
pub mod stochastic;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{Activation, Head, NetworkSpec, Targets, WeightLayout};
pub use numerics::{DenseMatrix, Law, RandomStream, Scalar};
pub use stochastic::{EnsembleDistribution, Parameterization, WeightDistribution};

/// Double precision matrix, the default everywhere outside the generic kernels.
pub type Matrix = DenseMatrix<f64>;
pub type MatrixF32 = DenseMatrix<f32>;
