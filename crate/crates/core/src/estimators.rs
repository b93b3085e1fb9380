//! Gradient estimators for the expected ranking metric of a PL model.
//!
//! All four estimators produce one weight `λ_d` per item such that
//! `∂R/∂w ≈ Σ_d λ_d ∂m(d)/∂w`. They estimate the same gradient and differ in
//! variance and cost:
//!
//! * [`EstimatorKind::BasicPg`] multiplies the score gradient of
//!   `log π(y)` by the reward of the whole ranking (REINFORCE).
//! * [`EstimatorKind::PlacementPg`] weights the score gradient of each
//!   placement `log π(y_k | y_{1:k-1})` by the reward from rank `k` onwards.
//! * [`EstimatorKind::PlRank1`] is the placement estimator rearranged per
//!   item: the reward following the item's placement minus the risk
//!   `Σ_k π(d | y_{1:k-1}) ω_k` it imposed on earlier ranks.
//! * [`EstimatorKind::PlRank2`] moves the item's own reward into an expected
//!   direct-reward term `π(d | y_{1:k-1}) θ_k ρ_d`, so items that were never
//!   sampled into the top-K can still receive positive weight.
//!
//! Both policy-gradient variants are written the way an autodiff framework
//! evaluates them: each placement's log-softmax gradient is formed from
//! scratch over the unplaced items. The PL-Rank variants keep one running
//! softmax denominator per sampled ranking and update it by subtraction.
//!
//! For an item that is never placed, the following reward is empty and its
//! risk sum runs over all `K` ranks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::{RankWeights, RankingSample};
use crate::sampler::PlScores;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    BasicPg,
    PlacementPg,
    #[serde(rename = "pl-rank-1")]
    PlRank1,
    #[serde(rename = "pl-rank-2")]
    PlRank2,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::BasicPg, Self::PlacementPg, Self::PlRank1, Self::PlRank2];

    pub fn name(self) -> &'static str {
        match self {
            Self::BasicPg => "basic-pg",
            Self::PlacementPg => "placement-pg",
            Self::PlRank1 => "pl-rank-1",
            Self::PlRank2 => "pl-rank-2",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator {s:?}")))
    }
}

/// Per-item weights `λ_d`, already averaged over the `n_samples` rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWeights {
    pub lambda: Vec<f64>,
    pub n_samples: usize,
}

/// Once the running denominator has shrunk below this fraction of the value
/// it was last computed at, subtraction has cancelled too many digits and the
/// remaining mass is recomputed (re-stabilized) from scratch.
const RESCALE_FRACTION: f64 = 1e-4;

/// Scratch state shared by all estimators for one query.
///
/// Holds the stabilized exponentials, the running PL denominator, the suffix
/// rewards `ω` of the current sample and a placed-item mask.
#[derive(Debug)]
pub struct EstimatorWorkspace<'a> {
    scores: &'a PlScores,
    exp: Vec<f64>,
    total: f64,
    rescaled: bool,
    omega: Vec<f64>,
    placed: Vec<bool>,
    grad: Vec<f64>,
    path: Vec<f64>,
    check_denominator: bool,
}

impl<'a> EstimatorWorkspace<'a> {
    pub fn new(scores: &'a PlScores) -> Self {
        let n = scores.len();
        let exp = scores.exp_scores().to_vec();
        let total = exp.iter().sum();
        Self {
            scores,
            exp,
            total,
            rescaled: false,
            omega: Vec::new(),
            placed: vec![false; n],
            grad: vec![0.0; n],
            path: vec![0.0; n],
            check_denominator: false,
        }
    }

    /// Recompute the running denominator from scratch after every update and
    /// panic if it drifts more than 1e-9 (relative) from the maintained value.
    pub fn with_denominator_check(mut self, on: bool) -> Self {
        self.check_denominator = on;
        self
    }

    fn validate(&self, relevances: &[f64], weights: &RankWeights, samples: &[RankingSample]) -> Result<()> {
        let n = self.scores.len();
        if relevances.len() != n {
            return Err(Error::ShapeMismatch { expected: n, actual: relevances.len() });
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("at least one sampled ranking is required".into()));
        }
        let k = weights.effective_cutoff(n);
        for s in samples {
            if s.n_items() != n {
                return Err(Error::ShapeMismatch { expected: n, actual: s.n_items() });
            }
            if s.len() != k {
                return Err(Error::ShapeMismatch { expected: k, actual: s.len() });
            }
        }
        Ok(())
    }

    pub fn estimate(
        &mut self,
        kind: EstimatorKind,
        relevances: &[f64],
        weights: &RankWeights,
        samples: &[RankingSample],
    ) -> Result<GradientWeights> {
        self.validate(relevances, weights, samples)?;
        let mut lambda = vec![0.0; self.scores.len()];
        for s in samples {
            self.accumulate(kind, relevances, weights.as_slice(), s, &mut lambda);
        }
        let inv = 1.0 / samples.len() as f64;
        lambda.iter_mut().for_each(|l| *l *= inv);
        Ok(GradientWeights { lambda, n_samples: samples.len() })
    }

    /// The un-averaged contribution of every sample, for variance analysis.
    pub fn per_sample(
        &mut self,
        kind: EstimatorKind,
        relevances: &[f64],
        weights: &RankWeights,
        samples: &[RankingSample],
    ) -> Result<Vec<Vec<f64>>> {
        self.validate(relevances, weights, samples)?;
        Ok(samples
            .iter()
            .map(|s| {
                let mut lambda = vec![0.0; self.scores.len()];
                self.accumulate(kind, relevances, weights.as_slice(), s, &mut lambda);
                lambda
            })
            .collect())
    }

    fn accumulate(
        &mut self,
        kind: EstimatorKind,
        rho: &[f64],
        theta: &[f64],
        sample: &RankingSample,
        lambda: &mut [f64],
    ) {
        let y = sample.items();
        self.omega.clear();
        self.omega.resize(y.len() + 1, 0.0);
        for k in (0..y.len()).rev() {
            self.omega[k] = self.omega[k + 1] + theta[k] * rho[y[k]];
        }
        match kind {
            EstimatorKind::BasicPg => self.basic_pg(y, lambda),
            EstimatorKind::PlacementPg => self.placement_pg(y, lambda),
            EstimatorKind::PlRank1 => self.pl_rank(false, rho, theta, y, lambda),
            EstimatorKind::PlRank2 => self.pl_rank(true, rho, theta, y, lambda),
        }
        for &d in y {
            self.placed[d] = false;
        }
    }

    /// Fills `self.grad` with `∂ log π(y_k | y_{1:k-1}) / ∂m`, i.e.
    /// `𝟙[d = y_k] - π(d | y_{1:k-1})`, evaluated from scratch.
    fn log_placement_grad(&mut self, chosen: usize) {
        let m = self.scores.log_scores();
        let top = m.iter().zip(&self.placed).filter(|(_, &p)| !p).map(|(&v, _)| v).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for d in 0..m.len() {
            self.grad[d] = if self.placed[d] { 0.0 } else { (m[d] - top).exp() };
            denom += self.grad[d];
        }
        for g in self.grad.iter_mut() {
            *g = -*g / denom;
        }
        self.grad[chosen] += 1.0;
    }

    fn basic_pg(&mut self, y: &[usize], lambda: &mut [f64]) {
        self.path.iter_mut().for_each(|v| *v = 0.0);
        for &d in y {
            self.log_placement_grad(d);
            for (p, g) in self.path.iter_mut().zip(&self.grad) {
                *p += g;
            }
            self.placed[d] = true;
        }
        let reward = self.omega[0];
        for (l, p) in lambda.iter_mut().zip(&self.path) {
            *l += reward * p;
        }
    }

    fn placement_pg(&mut self, y: &[usize], lambda: &mut [f64]) {
        for (k, &d) in y.iter().enumerate() {
            self.log_placement_grad(d);
            let following = self.omega[k];
            for (l, g) in lambda.iter_mut().zip(&self.grad) {
                *l += following * g;
            }
            self.placed[d] = true;
        }
    }

    /// Undoes the per-sample zeroing (and any rescaling) of `self.exp`.
    fn restore_exponentials(&mut self, y: &[usize]) {
        let pristine = self.scores.exp_scores();
        if self.rescaled {
            self.exp.copy_from_slice(pristine);
            self.rescaled = false;
        } else {
            for &d in y {
                self.exp[d] = pristine[d];
            }
        }
    }

    /// Re-exponentiates the unplaced items relative to their largest score.
    /// Placed items keep their zero entry.
    fn rescale_remaining(&mut self) -> f64 {
        let m = self.scores.log_scores();
        let top = m.iter().zip(&self.placed).filter(|(_, &p)| !p).map(|(&v, _)| v).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for d in 0..m.len() {
            if !self.placed[d] {
                self.exp[d] = (m[d] - top).exp();
                denom += self.exp[d];
            }
        }
        self.rescaled = true;
        denom
    }

    /// Shared loop of both PL-Rank variants. Placed items have `exp = 0`, so
    /// the per-rank sweep over all items needs no mask.
    fn pl_rank(&mut self, second: bool, rho: &[f64], theta: &[f64], y: &[usize], lambda: &mut [f64]) {
        let mut denom = self.total;
        let mut reference = denom;
        for (k, &chosen) in y.iter().enumerate() {
            let following = self.omega[k];
            let inv = 1.0 / denom;
            if second {
                lambda[chosen] += self.omega[k + 1];
                let direct = theta[k] * inv;
                let risk = following * inv;
                for ((l, e), r) in lambda.iter_mut().zip(&self.exp).zip(rho) {
                    *l += e * (direct * r - risk);
                }
            } else {
                lambda[chosen] += following;
                let risk = following * inv;
                for (l, e) in lambda.iter_mut().zip(&self.exp) {
                    *l -= e * risk;
                }
            }
            self.placed[chosen] = true;
            if k + 1 == y.len() {
                break;
            }
            denom -= self.exp[chosen];
            self.exp[chosen] = 0.0;
            if denom <= reference * RESCALE_FRACTION {
                denom = self.rescale_remaining();
                reference = denom;
            }
            if self.check_denominator {
                let exact: f64 = (0..self.exp.len()).filter(|&d| !self.placed[d]).map(|d| self.exp[d]).sum();
                assert!(denom > 0.0, "PL denominator must stay positive, got {denom}");
                assert!(
                    ((denom - exact) / exact).abs() <= 1e-9,
                    "PL denominator drifted: maintained {denom}, recomputed {exact}"
                );
            }
        }
        self.restore_exponentials(y);
    }
}

/// Runs `kind` on pre-drawn samples.
pub fn estimate(
    kind: EstimatorKind,
    scores: &PlScores,
    relevances: &[f64],
    weights: &RankWeights,
    samples: &[RankingSample],
) -> Result<GradientWeights> {
    EstimatorWorkspace::new(scores).estimate(kind, relevances, weights, samples)
}

/// Per-sample `λ` vectors; their mean is what [`estimate`] returns.
pub fn per_sample_lambdas(
    kind: EstimatorKind,
    scores: &PlScores,
    relevances: &[f64],
    weights: &RankWeights,
    samples: &[RankingSample],
) -> Result<Vec<Vec<f64>>> {
    EstimatorWorkspace::new(scores).per_sample(kind, relevances, weights, samples)
}

pub fn estimate_basic_pg(
    scores: &PlScores,
    relevances: &[f64],
    weights: &RankWeights,
    samples: &[RankingSample],
) -> Result<GradientWeights> {
    estimate(EstimatorKind::BasicPg, scores, relevances, weights, samples)
}

pub fn estimate_placement_pg(
    scores: &PlScores,
    relevances: &[f64],
    weights: &RankWeights,
    samples: &[RankingSample],
) -> Result<GradientWeights> {
    estimate(EstimatorKind::PlacementPg, scores, relevances, weights, samples)
}

pub fn estimate_pl_rank_1(
    scores: &PlScores,
    relevances: &[f64],
    weights: &RankWeights,
    samples: &[RankingSample],
) -> Result<GradientWeights> {
    estimate(EstimatorKind::PlRank1, scores, relevances, weights, samples)
}

pub fn estimate_pl_rank_2(
    scores: &PlScores,
    relevances: &[f64],
    weights: &RankWeights,
    samples: &[RankingSample],
) -> Result<GradientWeights> {
    estimate(EstimatorKind::PlRank2, scores, relevances, weights, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{placement_prob, sample_rankings};
    use crate::stream_rng;

    fn sample(items: &[usize], n: usize) -> RankingSample {
        RankingSample::new(items.to_vec(), n).unwrap()
    }

    fn two_items() -> (PlScores, [f64; 2], RankWeights) {
        (PlScores::new(vec![0.0, 0.0]).unwrap(), [1.0, 0.0], RankWeights::dcg(1))
    }

    #[test]
    fn names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("lambdaloss".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn two_item_hand_values() {
        let (scores, rho, theta) = two_items();
        let a = [sample(&[0], 2)];
        let b = [sample(&[1], 2)];
        for kind in [EstimatorKind::BasicPg, EstimatorKind::PlacementPg, EstimatorKind::PlRank1] {
            assert_eq!(estimate(kind, &scores, &rho, &theta, &a).unwrap().lambda, vec![0.5, -0.5], "{kind}");
            assert_eq!(estimate(kind, &scores, &rho, &theta, &b).unwrap().lambda, vec![0.0, 0.0], "{kind}");
        }
        let pl2 = EstimatorKind::PlRank2;
        assert_eq!(estimate(pl2, &scores, &rho, &theta, &a).unwrap().lambda, vec![0.0, -0.5]);
        assert_eq!(estimate(pl2, &scores, &rho, &theta, &b).unwrap().lambda, vec![0.5, 0.0]);
    }

    #[test]
    fn zero_relevance_gives_zero_lambda() {
        let scores = PlScores::new(vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        let samples = sample_rankings(&scores, 3, 20, &mut stream_rng(0, 0, 0)).unwrap();
        for kind in EstimatorKind::ALL {
            let g = estimate(kind, &scores, &[0.0; 4], &RankWeights::dcg(3), &samples).unwrap();
            assert!(g.lambda.iter().all(|&l| l == 0.0), "{kind}: {:?}", g.lambda);
            assert_eq!(g.n_samples, 20);
        }
    }

    #[test]
    fn cutoff_one_placement_equals_basic() {
        let scores = PlScores::new(vec![0.3, -1.0, 2.0, 0.1, 0.0]).unwrap();
        let rho = [1.0, 0.0, 3.0, 7.0, 15.0];
        let theta = RankWeights::dcg(1);
        let samples = sample_rankings(&scores, 1, 30, &mut stream_rng(1, 0, 0)).unwrap();
        let basic = estimate_basic_pg(&scores, &rho, &theta, &samples).unwrap();
        let placement = estimate_placement_pg(&scores, &rho, &theta, &samples).unwrap();
        for (a, b) in basic.lambda.iter().zip(&placement.lambda) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Direct transcription of the placement estimator: for each sample and
    /// rank, the log-placement gradient times the following reward.
    fn placement_oracle(scores: &PlScores, rho: &[f64], theta: &[f64], samples: &[RankingSample]) -> Vec<f64> {
        let n = scores.len();
        let mut lambda = vec![0.0; n];
        for s in samples {
            let y = s.items();
            for k in 0..y.len() {
                let following: f64 = (k..y.len()).map(|x| theta[x] * rho[y[x]]).sum();
                for d in 0..n {
                    let indicator = if y[k] == d { 1.0 } else { 0.0 };
                    let p = placement_prob(scores, &y[..k], d).unwrap();
                    lambda[d] += (indicator - p) * following;
                }
            }
        }
        lambda.iter().map(|l| l / samples.len() as f64).collect()
    }

    #[test]
    fn placement_matches_transcription_and_pl_rank_1() {
        let scores = PlScores::new(vec![0.4, -0.7, 1.1]).unwrap();
        let rho = [3.0, 1.0, 0.0];
        let theta = RankWeights::dcg(2);
        let samples = sample_rankings(&scores, 2, 25, &mut stream_rng(5, 0, 0)).unwrap();
        let want = placement_oracle(&scores, &rho, theta.as_slice(), &samples);
        for kind in [EstimatorKind::PlacementPg, EstimatorKind::PlRank1] {
            let got = estimate(kind, &scores, &rho, &theta, &samples).unwrap();
            for (g, w) in got.lambda.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{kind}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn pl_rank_2_rewards_unsampled_relevant_items() {
        // Item 2 is relevant but far too unlikely to appear in the top-1.
        let scores = PlScores::new(vec![5.0, 5.0, -5.0]).unwrap();
        let rho = [0.0, 0.0, 1.0];
        let theta = RankWeights::dcg(1);
        let samples = [sample(&[0], 3), sample(&[1], 3)];
        let pl2 = estimate_pl_rank_2(&scores, &rho, &theta, &samples).unwrap();
        assert!(pl2.lambda[2] > 0.0);
        let pl1 = estimate_pl_rank_1(&scores, &rho, &theta, &samples).unwrap();
        assert_eq!(pl1.lambda[2], 0.0);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let scores = PlScores::new(vec![0.0, 0.0, 0.0]).unwrap();
        let theta = RankWeights::dcg(2);
        let ok = [sample(&[0, 1], 3)];
        assert!(estimate_pl_rank_2(&scores, &[1.0; 2], &theta, &ok).is_err());
        assert!(estimate_pl_rank_2(&scores, &[1.0; 3], &theta, &[]).is_err());
        assert!(estimate_pl_rank_2(&scores, &[1.0; 3], &theta, &[sample(&[0], 3)]).is_err());
        assert!(estimate_pl_rank_2(&scores, &[1.0; 3], &theta, &[sample(&[0, 1], 4)]).is_err());
    }

    #[test]
    fn denominator_survives_dominant_items() {
        let scores = PlScores::new(vec![60.0, 30.0, 0.0, -1.0, -30.0, -2.0]).unwrap();
        let rho = [1.0, 3.0, 0.0, 7.0, 15.0, 1.0];
        let theta = RankWeights::dcg(5);
        let samples = [sample(&[0, 1, 2, 5, 3], 6), sample(&[0, 1, 3, 2, 5], 6)];
        for kind in [EstimatorKind::PlRank1, EstimatorKind::PlRank2] {
            let checked = EstimatorWorkspace::new(&scores)
                .with_denominator_check(true)
                .estimate(kind, &rho, &theta, &samples)
                .unwrap();
            assert!(checked.lambda.iter().all(|l| l.is_finite()));
        }
        let want = placement_oracle(&scores, &rho, theta.as_slice(), &samples);
        let got = estimate_pl_rank_1(&scores, &rho, &theta, &samples).unwrap();
        for (g, w) in got.lambda.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9 * (1.0 + w.abs()), "{g} vs {w}");
        }
    }

    #[test]
    fn per_sample_mean_is_estimate() {
        let scores = PlScores::new(vec![0.2, 0.0, -0.5, 1.0]).unwrap();
        let rho = [1.0, 3.0, 0.0, 1.0];
        let theta = RankWeights::dcg(3);
        let samples = sample_rankings(&scores, 3, 40, &mut stream_rng(8, 0, 0)).unwrap();
        for kind in EstimatorKind::ALL {
            let rows = per_sample_lambdas(kind, &scores, &rho, &theta, &samples).unwrap();
            let mean = estimate(kind, &scores, &rho, &theta, &samples).unwrap();
            for d in 0..4 {
                let m = rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
                assert!((m - mean.lambda[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn names_match_serialized_form() {
        for kind in EstimatorKind::ALL {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
            assert_eq!(kind.name().parse::<EstimatorKind>().unwrap(), kind);
        }
    }
}
