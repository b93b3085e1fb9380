//! Exposure estimation and the pairwise exposure-disparity objective.
//!
//! The exposure of item `d` is `E_d = E_y[Σ_k θ_k 𝟙[y_k = d]]`, with `θ_k`
//! read as the probability a user examines rank `k`. Exposure has the same
//! form as the relevance reward with `ρ` replaced by the indicator of `d`, so
//! any objective `F(E)` can be optimized by the relevance estimators after
//! swapping `ρ` for `∂F/∂E` (chain rule through `E`).
//!
//! Disparity compares the reward each item would earn under another item's
//! exposure:
//!
//! ```text
//! F = 1 / (|D| (|D| - 1)) · Σ_d Σ_d' (E_d' ρ_d - E_d ρ_d')²
//! ```
//!
//! It is zero when exposure is proportional to merit and handles items with
//! zero relevance. `F` is an error to be minimized.

use rand::Rng;

use crate::metrics::{RankWeights, RankingSample};
use crate::sampler::{sample_rankings, PlScores};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureVector {
    pub exposure: Vec<f64>,
    pub n_samples: usize,
}

/// Average exposure over already-drawn rankings.
pub fn exposure_from_samples(
    samples: &[RankingSample],
    weights: &RankWeights,
    n_items: usize,
) -> Result<ExposureVector> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("at least one sampled ranking is required".into()));
    }
    let mut exposure = vec![0.0; n_items];
    for s in samples {
        if s.n_items() != n_items {
            return Err(Error::ShapeMismatch { expected: n_items, actual: s.n_items() });
        }
        for (&d, &theta) in s.items().iter().zip(weights.as_slice()) {
            exposure[d] += theta;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    exposure.iter_mut().for_each(|e| *e *= inv);
    Ok(ExposureVector { exposure, n_samples: samples.len() })
}

/// Monte Carlo exposure from `n_samples` fresh Gumbel rankings.
pub fn estimate_exposure<R: Rng + ?Sized>(
    scores: &PlScores,
    weights: &RankWeights,
    n_samples: usize,
    rng: &mut R,
) -> Result<ExposureVector> {
    let samples = sample_rankings(scores, weights.cutoff(), n_samples, rng)?;
    exposure_from_samples(&samples, weights, scores.len())
}

/// Disparity value; `single_item` flags groups where no item pair exists and
/// the value is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disparity {
    pub value: f64,
    pub single_item: bool,
}

fn check_lengths(exposure: &[f64], relevances: &[f64]) -> Result<()> {
    if exposure.len() != relevances.len() {
        return Err(Error::ShapeMismatch { expected: relevances.len(), actual: exposure.len() });
    }
    if exposure.is_empty() {
        return Err(Error::InvalidArgument("no items".into()));
    }
    Ok(())
}

pub fn disparity_metric(exposure: &[f64], relevances: &[f64]) -> Result<Disparity> {
    check_lengths(exposure, relevances)?;
    let n = exposure.len();
    if n == 1 {
        return Ok(Disparity { value: 0.0, single_item: true });
    }
    let mut total = 0.0;
    for d in 0..n {
        for e in 0..n {
            let diff = exposure[e] * relevances[d] - exposure[d] * relevances[e];
            total += diff * diff;
        }
    }
    Ok(Disparity { value: total / (n * (n - 1)) as f64, single_item: false })
}

/// `∂F/∂E_d = 4 / (|D| (|D| - 1)) · Σ_d' (E_d ρ_d' - E_d' ρ_d) ρ_d'`.
///
/// Positive entries mark items whose exposure exceeds their share of merit.
/// Single-item groups get a zero gradient.
pub fn disparity_gradient(exposure: &[f64], relevances: &[f64]) -> Result<Vec<f64>> {
    check_lengths(exposure, relevances)?;
    let n = exposure.len();
    if n == 1 {
        return Ok(vec![0.0]);
    }
    // Σ_d' (E_d ρ_d' - E_d' ρ_d) ρ_d' = E_d Σ ρ² - ρ_d Σ E ρ
    let sum_sq: f64 = relevances.iter().map(|r| r * r).sum();
    let cross: f64 = exposure.iter().zip(relevances).map(|(e, r)| e * r).sum();
    let scale = 4.0 / (n * (n - 1)) as f64;
    Ok(exposure.iter().zip(relevances).map(|(e, r)| scale * (e * sum_sq - r * cross)).collect())
}

/// Relevances to hand to an estimator so that it ascends `α·R - β·F`:
/// `α·ρ - β·∂F/∂E`.
pub fn fairness_pseudo_relevances(gradient: &[f64], relevances: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    if gradient.len() != relevances.len() {
        return Err(Error::ShapeMismatch { expected: relevances.len(), actual: gradient.len() });
    }
    Ok(relevances.iter().zip(gradient).map(|(r, g)| alpha * r - beta * g).collect())
}
