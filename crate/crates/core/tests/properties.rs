mod common;

use plrank::data::{
    normalize_features, parse_svmlight_str, relevance_from_label, to_svmlight, Dataset, QueryGroup, Split, MAX_LABEL,
};
use plrank::estimators::{estimate, EstimatorKind};
use plrank::fairness::{disparity_gradient, disparity_metric};
use plrank::metrics::{following_rewards, sample_reward, RankWeights, RankingSample};
use plrank::model::{forward, Architecture, ModelParams};
use plrank::oracle::{exact_gradient, exact_reward};
use plrank::sampler::{placement_probs, sample_rankings, PlScores};
use plrank::stream_rng;
use proptest::prelude::*;

fn scores_strategy(max_items: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..=max_items)
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..4, 1usize..5).prop_flat_map(|(dim, n_queries)| {
        prop::collection::vec(
            prop::collection::vec((0u8..=MAX_LABEL, prop::collection::vec(-100.0f64..100.0, dim)), 1..6),
            n_queries,
        )
        .prop_map(move |queries| {
            let groups = queries
                .into_iter()
                .enumerate()
                .map(|(q, items)| {
                    let (labels, rows): (Vec<u8>, Vec<Vec<f64>>) = items.into_iter().unzip();
                    QueryGroup::new(format!("q{q}"), rows, labels).unwrap()
                })
                .collect();
            Dataset::new(groups, dim, Split::Train).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svmlight_round_trip(ds in dataset_strategy()) {
        let back = parse_svmlight_str(&to_svmlight(&ds), Split::Train).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in ds.groups().iter().zip(back.groups()) {
            prop_assert_eq!(a.query_id(), b.query_id());
            prop_assert_eq!(a.labels(), b.labels());
            prop_assert_eq!(a.features(), b.features());
        }
    }

    #[test]
    fn relevance_is_monotone_in_label(a in 0u8..=MAX_LABEL, b in 0u8..=MAX_LABEL) {
        prop_assert_eq!(a < b, relevance_from_label(a) < relevance_from_label(b));
        prop_assert!(relevance_from_label(a) >= 0.0);
    }

    #[test]
    fn normalization_is_idempotent_and_bounded(ds in dataset_strategy()) {
        let once = normalize_features(&ds).unwrap();
        let twice = normalize_features(&once).unwrap();
        for (a, b) in once.groups().iter().zip(twice.groups()) {
            for (x, y) in a.features().iter().zip(b.features()) {
                prop_assert!((0.0..=1.0).contains(x));
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn suffix_rewards_telescope(m in scores_strategy(8), k in 1usize..6, seed in any::<u64>()) {
        let n = m.len();
        let rho: Vec<f64> = (0..n).map(|d| relevance_from_label((d % 5) as u8)).collect();
        let weights = RankWeights::dcg(k);
        let scores = PlScores::new(m).unwrap();
        let sample = sample_rankings(&scores, k, 1, &mut stream_rng(seed, 1, 0)).unwrap().remove(0);
        let omega = following_rewards(&sample, &rho, &weights).unwrap();
        let theta = weights.as_slice();
        for (i, &d) in sample.items().iter().enumerate() {
            let next = omega.get(i + 1).copied().unwrap_or(0.0);
            prop_assert!((omega[i] - next - theta[i] * rho[d]).abs() < 1e-12);
        }
        prop_assert!((omega[0] - sample_reward(&sample, &rho, &weights).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn placement_probabilities_sum_to_one(m in scores_strategy(10), cut in 0usize..10) {
        let scores = PlScores::new(m.clone()).unwrap();
        let prefix: Vec<usize> = (0..cut.min(m.len() - 1)).collect();
        let p = placement_probs(&scores, &prefix).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for &d in &prefix {
            prop_assert_eq!(p[d], 0.0);
        }
    }

    #[test]
    fn extreme_scores_stay_normalized(big in 300.0f64..700.0, n in 2usize..8) {
        let mut m = vec![-big; n];
        m[0] = big;
        let p = placement_probs(&PlScores::new(m).unwrap(), &[0]).unwrap();
        prop_assert!(p.iter().all(|v| v.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn estimators_are_shift_invariant(m in scores_strategy(6), c in -50.0f64..50.0, seed in any::<u64>()) {
        let n = m.len();
        let rho: Vec<f64> = (0..n).map(|d| relevance_from_label(((d * 3) % 5) as u8)).collect();
        let weights = RankWeights::dcg(3);
        let a = PlScores::new(m.clone()).unwrap();
        let b = PlScores::new(m.iter().map(|v| v + c).collect()).unwrap();
        let samples = sample_rankings(&a, 3, 20, &mut stream_rng(seed, 2, 0)).unwrap();
        for kind in EstimatorKind::ALL {
            let la = estimate(kind, &a, &rho, &weights, &samples).unwrap().lambda;
            let lb = estimate(kind, &b, &rho, &weights, &samples).unwrap().lambda;
            prop_assert!(common::rel_error(&la, &lb, 1.0) < 1e-9, "{kind}: {la:?} vs {lb:?}");
        }
        prop_assert_eq!(
            sample_rankings(&a, 3, 20, &mut stream_rng(seed, 2, 0)).unwrap(),
            sample_rankings(&b, 3, 20, &mut stream_rng(seed, 2, 0)).unwrap()
        );
    }

    #[test]
    fn all_estimators_vanish_without_relevance(m in scores_strategy(6), seed in any::<u64>()) {
        let scores = PlScores::new(m.clone()).unwrap();
        let samples = sample_rankings(&scores, 2, 5, &mut stream_rng(seed, 3, 0)).unwrap();
        for kind in EstimatorKind::ALL {
            let l = estimate(kind, &scores, &vec![0.0; m.len()], &RankWeights::dcg(2), &samples).unwrap();
            prop_assert!(l.lambda.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rankings_are_distinct_and_complete(m in scores_strategy(12), k in 1usize..15, seed in any::<u64>()) {
        let scores = PlScores::new(m.clone()).unwrap();
        for s in sample_rankings(&scores, k, 5, &mut stream_rng(seed, 4, 0)).unwrap() {
            prop_assert_eq!(s.len(), k.min(m.len()));
            prop_assert!(RankingSample::new(s.items().to_vec(), m.len()).is_ok());
        }
    }

    #[test]
    fn disparity_is_nonnegative(e in prop::collection::vec(0.0f64..3.0, 2..8), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = stream_rng(seed, 5, 0);
        let rho: Vec<f64> = e.iter().map(|_| rng.random_range(0.0..15.0)).collect();
        prop_assert!(disparity_metric(&e, &rho).unwrap().value >= 0.0);
        let proportional: Vec<f64> = rho.iter().map(|r| 0.1 * r).collect();
        prop_assert!(disparity_metric(&proportional, &rho).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn disparity_gradient_matches_differences(e in prop::collection::vec(0.0f64..3.0, 2..8), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = stream_rng(seed, 6, 0);
        let rho: Vec<f64> = e.iter().map(|_| rng.random_range(0.0..15.0)).collect();
        let g = disparity_gradient(&e, &rho).unwrap();
        let fd = common::central_diff(|x| disparity_metric(x, &rho).unwrap().value, &e, 1e-4);
        prop_assert!(common::rel_error(&g, &fd, 1e-3) < 1e-6, "{g:?} vs {fd:?}");
    }

    #[test]
    fn exact_gradient_matches_differences(m in prop::collection::vec(-2.0f64..2.0, 2..6), k in 1usize..4, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 7, 0);
        let rho = common::random_relevances(&mut rng, m.len());
        let weights = RankWeights::dcg(k);
        let g = exact_gradient(&PlScores::new(m.clone()).unwrap(), &rho, &weights).unwrap();
        let fd = common::central_diff(
            |x| exact_reward(&PlScores::new(x.to_vec()).unwrap(), &rho, &weights).unwrap(),
            &m,
            1e-5,
        );
        prop_assert!(common::rel_error(&g, &fd, 1e-3) < 1e-6, "{g:?} vs {fd:?}");
    }

    #[test]
    fn scores_do_not_depend_on_item_order(seed in any::<u64>(), n in 2usize..7) {
        use rand::seq::SliceRandom;
        let params = ModelParams::init(Architecture::mlp(3, vec![4]), seed).unwrap();
        let mut rng = stream_rng(seed, 8, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| common::random_scores(&mut rng, 3, 1.0)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (a, _) = forward(&params, &rows.concat()).unwrap();
        let permuted: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
        let (b, _) = forward(&params, &permuted).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(a[i], b[j]);
        }
    }
}
