//! Plackett-Luce scores, Gumbel top-K sampling and exact placement
//! probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::RankingSample;
use crate::{Error, Result};

/// Uniform draws are clamped to `[UNIFORM_EPS, 1 - UNIFORM_EPS]`.
pub const UNIFORM_EPS: f64 = 1e-12;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Reproducible generator for the `(domain, index)` stream under `seed`.
///
/// `domain` keys the ChaCha state and `index` selects one of its 2^64
/// independent streams, so e.g. `(epoch, query)` pairs never share draws.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain.wrapping_add(0xA076_1D64_78BD_642F)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Log scores `m(d)` of one query's items together with their stabilized
/// exponentials `exp(m(d) - max m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlScores {
    log_scores: Vec<f64>,
    shift: f64,
    exp_scores: Vec<f64>,
}

impl PlScores {
    pub fn new(log_scores: Vec<f64>) -> Result<Self> {
        if log_scores.is_empty() {
            return Err(Error::InvalidArgument("no items to rank".into()));
        }
        if let Some((index, &value)) = log_scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteScore { index, value });
        }
        let shift = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp_scores = log_scores.iter().map(|m| (m - shift).exp()).collect();
        Ok(Self { log_scores, shift, exp_scores })
    }

    pub fn len(&self) -> usize {
        self.log_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scores.is_empty()
    }

    pub fn log_scores(&self) -> &[f64] {
        &self.log_scores
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `exp(m(d) - shift)`, each in `(0, 1]` unless it underflowed.
    pub fn exp_scores(&self) -> &[f64] {
        &self.exp_scores
    }
}

/// One round of Gumbel noise for every item.
#[derive(Debug, Clone)]
pub struct GumbelDraw {
    pub uniforms: Vec<f64>,
    pub gumbels: Vec<f64>,
    pub perturbed: Vec<f64>,
}

impl GumbelDraw {
    pub fn draw<R: Rng + ?Sized>(scores: &PlScores, rng: &mut R) -> Self {
        let n = scores.len();
        let mut draw =
            Self { uniforms: Vec::with_capacity(n), gumbels: Vec::with_capacity(n), perturbed: Vec::with_capacity(n) };
        for &m in scores.log_scores() {
            let u = rng.random::<f64>().clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
            let g = -(-u.ln()).ln();
            draw.uniforms.push(u);
            draw.gumbels.push(g);
            draw.perturbed.push(m + g);
        }
        draw
    }
}

fn perturbed_scores<R: Rng + ?Sized>(scores: &PlScores, rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    out.extend(scores.log_scores().iter().map(|&m| {
        let u = rng.random::<f64>().clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
        m - (-u.ln()).ln()
    }));
}

fn top_k(perturbed: &[f64], k: usize, order: &mut Vec<usize>) -> Vec<usize> {
    order.clear();
    order.extend(0..perturbed.len());
    let by_score = |a: &usize, b: &usize| perturbed[*b].total_cmp(&perturbed[*a]).then_with(|| a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_score);
        order.truncate(k);
    }
    order.sort_unstable_by(by_score);
    order.clone()
}

/// Draws `n` rankings of length `min(k, |D|)` from the PL distribution.
///
/// Each ranking lists the items with the largest `m(d) + γ_d`, ties going to
/// the lower item index.
pub fn sample_rankings<R: Rng + ?Sized>(
    scores: &PlScores,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<RankingSample>> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidArgument("sample count and cutoff must be at least 1".into()));
    }
    let n_items = scores.len();
    let k = k.min(n_items);
    let mut perturbed = Vec::with_capacity(n_items);
    let mut order = Vec::with_capacity(n_items);
    (0..n)
        .map(|_| {
            perturbed_scores(scores, rng, &mut perturbed);
            RankingSample::new(top_k(&perturbed, k, &mut order), n_items)
        })
        .collect()
}

/// Top-K ranking induced by an existing Gumbel draw.
pub fn ranking_from_draw(draw: &GumbelDraw, k: usize) -> Result<RankingSample> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
    }
    let n = draw.perturbed.len();
    let mut order = Vec::with_capacity(n);
    RankingSample::new(top_k(&draw.perturbed, k.min(n), &mut order), n)
}

fn placed_mask(n_items: usize, prefix: &[usize]) -> Result<Vec<bool>> {
    let mut placed = vec![false; n_items];
    for &d in prefix {
        let slot = placed.get_mut(d).ok_or(Error::IndexOutOfRange { index: d, len: n_items })?;
        if *slot {
            return Err(Error::DuplicateItem(d));
        }
        *slot = true;
    }
    Ok(placed)
}

/// `π(d | prefix)`: zero for placed items, otherwise the softmax of `m` over
/// the unplaced items.
pub fn placement_prob(scores: &PlScores, prefix: &[usize], item: usize) -> Result<f64> {
    let placed = placed_mask(scores.len(), prefix)?;
    if item >= scores.len() {
        return Err(Error::IndexOutOfRange { index: item, len: scores.len() });
    }
    if placed[item] {
        return Ok(0.0);
    }
    Ok(placement_probs_masked(scores, &placed)[item])
}

/// Placement distribution over all items after `prefix`.
pub fn placement_probs(scores: &PlScores, prefix: &[usize]) -> Result<Vec<f64>> {
    let placed = placed_mask(scores.len(), prefix)?;
    Ok(placement_probs_masked(scores, &placed))
}

/// Softmax over the unplaced items, re-stabilized by the largest remaining
/// log score so that heavily skewed prefixes do not underflow.
fn placement_probs_masked(scores: &PlScores, placed: &[bool]) -> Vec<f64> {
    let m = scores.log_scores();
    let top = m.iter().zip(placed).filter(|(_, &p)| !p).map(|(&v, _)| v).fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = m.iter().zip(placed).map(|(&v, &p)| if p { 0.0 } else { (v - top).exp() }).collect();
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|p| *p /= total);
    }
    probs
}

/// `π(y) = Π_k π(y_k | y_{1:k-1})`.
pub fn ranking_prob(scores: &PlScores, sample: &RankingSample) -> Result<f64> {
    if sample.n_items() != scores.len() {
        return Err(Error::ShapeMismatch { expected: scores.len(), actual: sample.n_items() });
    }
    let mut placed = vec![false; scores.len()];
    let mut prob = 1.0;
    for &d in sample.items() {
        prob *= placement_probs_masked(scores, &placed)[d];
        placed[d] = true;
    }
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_scores() {
        assert!(PlScores::new(vec![]).is_err());
        assert!(matches!(PlScores::new(vec![0.0, f64::INFINITY]), Err(Error::NonFiniteScore { index: 1, .. })));
        let s = PlScores::new(vec![1.0, -2.0]).unwrap();
        assert_eq!(s.shift(), 1.0);
        assert_eq!(s.exp_scores()[0], 1.0);
    }

    #[test]
    fn single_item_always_first() {
        let s = PlScores::new(vec![-3.0]).unwrap();
        let mut rng = stream_rng(0, 0, 0);
        for y in sample_rankings(&s, 5, 20, &mut rng).unwrap() {
            assert_eq!(y.items(), &[0]);
        }
    }

    #[test]
    fn samples_are_valid_and_reproducible() {
        let s = PlScores::new(vec![0.1, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        let a = sample_rankings(&s, 3, 50, &mut stream_rng(4, 1, 2)).unwrap();
        let b = sample_rankings(&s, 3, 50, &mut stream_rng(4, 1, 2)).unwrap();
        let c = sample_rankings(&s, 3, 50, &mut stream_rng(4, 1, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|y| y.len() == 3));
        let full = sample_rankings(&s, 10, 5, &mut stream_rng(0, 0, 0)).unwrap();
        assert!(full.iter().all(|y| y.len() == 6));
        assert!(sample_rankings(&s, 0, 5, &mut stream_rng(0, 0, 0)).is_err());
        assert!(sample_rankings(&s, 1, 0, &mut stream_rng(0, 0, 0)).is_err());
    }

    #[test]
    fn draw_matches_sampler_and_breaks_ties_by_index() {
        let s = PlScores::new(vec![0.3, -0.2, 1.0]).unwrap();
        let draw = GumbelDraw::draw(&s, &mut stream_rng(9, 9, 9));
        let direct = sample_rankings(&s, 2, 1, &mut stream_rng(9, 9, 9)).unwrap();
        assert_eq!(ranking_from_draw(&draw, 2).unwrap(), direct[0]);
        for i in 0..3 {
            assert!(draw.uniforms[i] > 0.0 && draw.uniforms[i] < 1.0);
            assert_eq!(draw.perturbed[i], s.log_scores()[i] + draw.gumbels[i]);
        }

        let tied = GumbelDraw { uniforms: vec![0.5; 3], gumbels: vec![0.0; 3], perturbed: vec![1.0, 2.0, 2.0] };
        assert_eq!(ranking_from_draw(&tied, 3).unwrap().items(), &[1, 2, 0]);
    }

    #[test]
    fn placement_examples() {
        let even = PlScores::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(placement_prob(&even, &[], 0).unwrap(), 0.5);
        assert_eq!(placement_prob(&even, &[], 1).unwrap(), 0.5);
        assert_eq!(placement_prob(&even, &[0], 0).unwrap(), 0.0);
        assert_eq!(placement_prob(&even, &[0], 1).unwrap(), 1.0);
        assert!(matches!(placement_prob(&even, &[1, 1], 0), Err(Error::DuplicateItem(1))));
        assert!(placement_prob(&even, &[], 2).is_err());

        let s = PlScores::new(vec![2f64.ln(), 0.0, 0.0]).unwrap();
        let p = placement_probs(&s, &[]).unwrap();
        for (got, want) in p.iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ranking_prob_examples() {
        let one = PlScores::new(vec![4.0]).unwrap();
        assert_eq!(ranking_prob(&one, &RankingSample::new(vec![0], 1).unwrap()).unwrap(), 1.0);

        let even = PlScores::new(vec![0.0, 0.0]).unwrap();
        for order in [vec![0, 1], vec![1, 0]] {
            let y = RankingSample::new(order, 2).unwrap();
            assert_eq!(ranking_prob(&even, &y).unwrap(), 0.5);
        }

        let s = PlScores::new(vec![2f64.ln(), 0.0, 0.0]).unwrap();
        let y = RankingSample::new(vec![0, 1, 2], 3).unwrap();
        assert!((ranking_prob(&s, &y).unwrap() - 0.25).abs() < 1e-15);
        let wrong = RankingSample::new(vec![0], 2).unwrap();
        assert!(ranking_prob(&s, &wrong).is_err());
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let s = PlScores::new(vec![800.0, 0.0, -800.0]).unwrap();
        let p = placement_probs(&s, &[0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[1] - 1.0).abs() < 1e-12);
    }
}
