//! Rank-weight vectors and ranking rewards.
//!
//! A metric is a weight `θ_k` per rank; the reward of a ranking `y` is
//! `Σ_k θ_k ρ_{y_k}` and a policy's metric value is its expectation over
//! sampled rankings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sampler::{sample_rankings, PlScores};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Dcg,
    Prec,
    Arp,
    Custom,
}

/// Per-rank weights `θ_1..θ_K` for a top-`K` metric.
///
/// ARP is truncated at the cutoff: ranks past `K` contribute nothing, which
/// differs from full-list average relevant position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankWeights {
    kind: MetricKind,
    weights: Vec<f64>,
}

impl RankWeights {
    /// `θ_k = 1 / log2(k + 1)`.
    pub fn dcg(cutoff: usize) -> Self {
        let weights = (1..=cutoff).map(|k| 1.0 / ((k + 1) as f64).log2()).collect();
        Self { kind: MetricKind::Dcg, weights }
    }

    /// `θ_k = 1 / K`.
    pub fn precision(cutoff: usize) -> Self {
        Self { kind: MetricKind::Prec, weights: vec![1.0 / cutoff as f64; cutoff] }
    }

    /// `θ_k = -k`.
    pub fn arp(cutoff: usize) -> Self {
        Self { kind: MetricKind::Arp, weights: (1..=cutoff).map(|k| -(k as f64)).collect() }
    }

    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("rank weights need a cutoff of at least 1".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("rank weights must be finite".into()));
        }
        Ok(Self { kind: MetricKind::Custom, weights })
    }

    pub fn new(kind: MetricKind, cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
        }
        match kind {
            MetricKind::Dcg => Ok(Self::dcg(cutoff)),
            MetricKind::Prec => Ok(Self::precision(cutoff)),
            MetricKind::Arp => Ok(Self::arp(cutoff)),
            MetricKind::Custom => Err(Error::InvalidArgument("custom weights must be given explicitly".into())),
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn cutoff(&self) -> usize {
        self.weights.len()
    }

    /// Ranks actually filled for a query with `n_items` candidates.
    pub fn effective_cutoff(&self, n_items: usize) -> usize {
        self.weights.len().min(n_items)
    }

    /// `θ` as a zero-based slice: `as_slice()[k]` weighs rank `k + 1`.
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// One sampled top-K ranking over a query's items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingSample {
    ranked: Vec<usize>,
    rank_of: Vec<Option<usize>>,
}

impl RankingSample {
    /// `ranked[k]` is the item shown at rank `k + 1`.
    pub fn new(ranked: Vec<usize>, n_items: usize) -> Result<Self> {
        let mut rank_of = vec![None; n_items];
        for (k, &d) in ranked.iter().enumerate() {
            let slot = rank_of.get_mut(d).ok_or(Error::IndexOutOfRange { index: d, len: n_items })?;
            if slot.is_some() {
                return Err(Error::DuplicateItem(d));
            }
            *slot = Some(k + 1);
        }
        Ok(Self { ranked, rank_of })
    }

    pub fn items(&self) -> &[usize] {
        &self.ranked
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn n_items(&self) -> usize {
        self.rank_of.len()
    }

    /// 1-based rank of `item`, `None` when it was not placed.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.rank_of.get(item).copied().flatten()
    }
}

fn check_sample(sample: &RankingSample, relevances: &[f64], weights: &RankWeights) -> Result<()> {
    if sample.len() > weights.cutoff() {
        return Err(Error::ShapeMismatch { expected: weights.cutoff(), actual: sample.len() });
    }
    if let Some(&d) = sample.items().iter().find(|&&d| d >= relevances.len()) {
        return Err(Error::IndexOutOfRange { index: d, len: relevances.len() });
    }
    Ok(())
}

/// `Σ_k θ_k ρ_{y_k}` for one ranking.
pub fn sample_reward(sample: &RankingSample, relevances: &[f64], weights: &RankWeights) -> Result<f64> {
    check_sample(sample, relevances, weights)?;
    Ok(sample.items().iter().zip(weights.as_slice()).map(|(&d, &theta)| theta * relevances[d]).sum())
}

/// Suffix rewards `ω_k = Σ_{x ≥ k} θ_x ρ_{y_x}`, one per placed rank.
pub fn following_rewards(sample: &RankingSample, relevances: &[f64], weights: &RankWeights) -> Result<Vec<f64>> {
    check_sample(sample, relevances, weights)?;
    let mut omega = vec![0.0; sample.len()];
    let mut acc = 0.0;
    for (k, &d) in sample.items().iter().enumerate().rev() {
        acc += weights.as_slice()[k] * relevances[d];
        omega[k] = acc;
    }
    Ok(omega)
}

/// Monte Carlo estimate of the policy's expected metric for one query.
pub fn expected_metric<R: Rng + ?Sized>(
    relevances: &[f64],
    scores: &PlScores,
    weights: &RankWeights,
    eval_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if relevances.len() != scores.len() {
        return Err(Error::ShapeMismatch { expected: scores.len(), actual: relevances.len() });
    }
    let samples = sample_rankings(scores, weights.cutoff(), eval_samples, rng)?;
    let mut total = 0.0;
    for s in &samples {
        total += sample_reward(s, relevances, weights)?;
    }
    Ok(total / samples.len() as f64)
}

/// Metric of the ranking that sorts items by relevance.
///
/// This is the best attainable value whenever `θ` is non-increasing (DCG,
/// precision, ARP), and therefore an upper bound on any policy's expected
/// metric for those kinds.
pub fn ideal_metric(relevances: &[f64], weights: &RankWeights) -> f64 {
    let mut sorted = relevances.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().zip(weights.as_slice()).map(|(r, t)| r * t).sum()
}
