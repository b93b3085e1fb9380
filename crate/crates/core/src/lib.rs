//! Stochastic Plackett-Luce ranking models trained with the PL-Rank gradient
//! estimators.
//!
//! A PL model turns per-item log scores `m(d)` into a distribution over
//! rankings. This crate samples rankings with the Gumbel trick, estimates the
//! gradient of a ranking metric (DCG, precision, ARP, or a custom rank-weight
//! vector) with four interchangeable estimators, and extends the same
//! machinery to an exposure-disparity fairness objective.
//!
//! Every estimator returns one scalar `λ_d` per item so that the gradient
//! w.r.t. model parameters is `Σ_d λ_d ∂m(d)/∂w`:
//!
//! ```
//! use plrank::{
//!     estimators::{estimate, EstimatorKind},
//!     metrics::RankWeights,
//!     sampler::{sample_rankings, PlScores},
//!     stream_rng,
//! };
//!
//! let scores = PlScores::new(vec![0.3, -0.1, 1.2, 0.0]).unwrap();
//! let relevances = [1.0, 0.0, 3.0, 7.0];
//! let weights = RankWeights::dcg(2);
//! let mut rng = stream_rng(7, 0, 0);
//! let samples = sample_rankings(&scores, weights.cutoff(), 100, &mut rng).unwrap();
//! let grad = estimate(EstimatorKind::PlRank2, &scores, &relevances, &weights, &samples).unwrap();
//! assert_eq!(grad.lambda.len(), 4);
//! ```
//!
//! The [`oracle`] module enumerates every ranking for small item sets and
//! provides exact rewards, exposures and gradients; it is the ground truth the
//! estimators are tested against.

pub mod bench;
pub mod data;
mod error;
pub mod estimators;
pub mod fairness;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
pub use sampler::stream_rng;
