//! Exact expectations by enumerating every top-K ranking.
//!
//! Only usable for small item sets; it exists to verify the sampled
//! estimators, never to train.

use crate::metrics::RankWeights;
use crate::sampler::{placement_probs, PlScores};
use crate::{Error, Result};

/// Largest number of rankings the oracle will enumerate.
pub const MAX_RANKINGS: u128 = 1_000_000;

/// `n! / (n - k)!` for `k = min(k, n)`.
pub fn num_rankings(n_items: usize, k: usize) -> u128 {
    let k = k.min(n_items);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n_items - i) as u128))
}

fn check_size(n_items: usize, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
    }
    let count = num_rankings(n_items, k);
    if count > MAX_RANKINGS {
        return Err(Error::EnumerationTooLarge { count, limit: MAX_RANKINGS });
    }
    Ok(k.min(n_items))
}

/// Calls `visit(ranking, π(ranking), ∂ log π(ranking) / ∂m)` for every
/// top-`k` ranking. Prefix probabilities and score gradients are carried
/// down the recursion.
fn for_each_ranking<F>(scores: &PlScores, k: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize], f64, &[f64]),
{
    let k = check_size(scores.len(), k)?;
    let mut prefix = Vec::with_capacity(k);
    let mut grad = vec![0.0; scores.len()];
    recurse(scores, k, &mut prefix, 1.0, &mut grad, &mut visit)
}

fn recurse<F>(
    scores: &PlScores,
    k: usize,
    prefix: &mut Vec<usize>,
    prob: f64,
    grad: &mut Vec<f64>,
    visit: &mut F,
) -> Result<()>
where
    F: FnMut(&[usize], f64, &[f64]),
{
    if prefix.len() == k {
        visit(prefix, prob, grad);
        return Ok(());
    }
    let probs = placement_probs(scores, prefix)?;
    for d in 0..scores.len() {
        if prefix.contains(&d) {
            continue;
        }
        // ∂ log π(d | prefix) / ∂m = e_d - π(· | prefix)
        for (g, p) in grad.iter_mut().zip(&probs) {
            *g -= p;
        }
        grad[d] += 1.0;
        prefix.push(d);
        recurse(scores, k, prefix, prob * probs[d], grad, visit)?;
        prefix.pop();
        grad[d] -= 1.0;
        for (g, p) in grad.iter_mut().zip(&probs) {
            *g += p;
        }
    }
    Ok(())
}

/// Every top-K ranking with its exact probability.
#[derive(Debug, Clone)]
pub struct EnumerationTable {
    k: usize,
    rankings: Vec<usize>,
    probs: Vec<f64>,
}

impl EnumerationTable {
    pub fn build(scores: &PlScores, k: usize) -> Result<Self> {
        let k_eff = check_size(scores.len(), k)?;
        let count = num_rankings(scores.len(), k) as usize;
        let mut rankings = Vec::with_capacity(count * k_eff);
        let mut probs = Vec::with_capacity(count);
        for_each_ranking(scores, k, |y, p, _| {
            rankings.extend_from_slice(y);
            probs.push(p);
        })?;
        Ok(Self { k: k_eff, rankings, probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.rankings.chunks_exact(self.k).zip(self.probs.iter().copied())
    }

    pub fn total_probability(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn reward(&self, relevances: &[f64], weights: &RankWeights) -> f64 {
        self.iter()
            .map(|(y, p)| p * y.iter().zip(weights.as_slice()).map(|(&d, t)| t * relevances[d]).sum::<f64>())
            .sum()
    }

    pub fn exposure(&self, weights: &RankWeights, n_items: usize) -> Vec<f64> {
        let mut exposure = vec![0.0; n_items];
        for (y, p) in self.iter() {
            for (&d, t) in y.iter().zip(weights.as_slice()) {
                exposure[d] += p * t;
            }
        }
        exposure
    }
}

fn check_relevances(scores: &PlScores, relevances: &[f64]) -> Result<()> {
    if relevances.len() != scores.len() {
        return Err(Error::ShapeMismatch { expected: scores.len(), actual: relevances.len() });
    }
    Ok(())
}

/// `R = Σ_y π(y) Σ_k θ_k ρ_{y_k}`.
pub fn exact_reward(scores: &PlScores, relevances: &[f64], weights: &RankWeights) -> Result<f64> {
    check_relevances(scores, relevances)?;
    Ok(EnumerationTable::build(scores, weights.cutoff())?.reward(relevances, weights))
}

/// `∂R/∂m = Σ_y π(y) · ∂ log π(y)/∂m · Σ_k θ_k ρ_{y_k}`.
pub fn exact_gradient(scores: &PlScores, relevances: &[f64], weights: &RankWeights) -> Result<Vec<f64>> {
    check_relevances(scores, relevances)?;
    let mut gradient = vec![0.0; scores.len()];
    for_each_ranking(scores, weights.cutoff(), |y, p, grad_log| {
        let reward: f64 = y.iter().zip(weights.as_slice()).map(|(&d, t)| t * relevances[d]).sum();
        for (g, gl) in gradient.iter_mut().zip(grad_log) {
            *g += p * reward * gl;
        }
    })?;
    Ok(gradient)
}

/// `E_d = Σ_y π(y) Σ_k θ_k 𝟙[y_k = d]`.
pub fn exact_exposure(scores: &PlScores, weights: &RankWeights) -> Result<Vec<f64>> {
    Ok(EnumerationTable::build(scores, weights.cutoff())?.exposure(weights, scores.len()))
}
