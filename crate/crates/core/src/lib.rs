//! Truncated Euler-Maruyama simulation of a mean-reverting rate model with
//! superlinear drift, delayed volatility, multiplicative Poisson jumps and
//! Markovian regime switching:
//!
//! ```text
//! dX = f(X, r) dt + φ(X(t-τ), r) g(X) dB + h(X, r) dN
//! f(x, i) = α₋₁(i)/x - α₀(i) + α₁(i) x - α₂(i) x^ρ,  g(x) = x^θ,  h(x, i) = α₃(i) x
//! ```
//!
//! ```
//! use hybrid_tem::{ModelSpec, PowerMu, TruncationPolicy, Grid, StreamKey, simulate_tem};
//!
//! let spec = ModelSpec::two_regime_example();
//! let policy = TruncationPolicy::new(&spec, PowerMu::QUADRATIC3, 2.0 / 3.0, None).unwrap();
//! let grid = Grid::snap(spec.tau, 1e-3, 2.0).unwrap();
//! let (path, _noise) = simulate_tem(&spec, &policy, grid, StreamKey::new(1, 0)).unwrap();
//! assert_eq!(path.forward().len(), 2001);
//! ```

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod config;
pub mod error;
pub mod mc;
pub mod model;
pub mod noise;
pub mod rng;
pub mod scheme;
pub mod truncation;

pub use chain::{matrix_exponential, sample_chain_path, stationary_distribution, GeneratorMatrix, TransitionMatrix};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use mc::{bond_price, barrier_option_price, strong_error, ConvergenceReport, EstimatorResult};
pub use model::{InitialSegment, ModelSpec, Regime, RegimeParams, ValidationOptions, Volatility};
pub use noise::{coarsen_noise, make_noise, NoiseIncrements, NoiseRecord};
pub use rng::{Channel, StreamKey};
pub use scheme::{simulate_bem_path, simulate_tem, simulate_tem_path, tem_step, Grid, PathState};
pub use truncation::{PowerMu, TruncationPolicy};
