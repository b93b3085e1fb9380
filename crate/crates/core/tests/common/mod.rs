//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the estimators or the enumeration module; every
//! quantity is rebuilt from the PL definition by brute force.

#![allow(dead_code)]

use rand::Rng;

/// All ordered selections of `k` distinct items out of `0..n`.
pub fn k_permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for d in 0..n {
            if !cur.contains(&d) {
                cur.push(d);
                go(n, k, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(n, k.min(n), &mut Vec::new(), &mut out);
    out
}

/// `π(y)` as a literal product of softmaxes over the remaining items.
pub fn ranking_probability(m: &[f64], y: &[usize]) -> f64 {
    let mut p = 1.0;
    let mut used = vec![false; m.len()];
    for &d in y {
        let denom: f64 = (0..m.len()).filter(|&i| !used[i]).map(|i| m[i].exp()).sum();
        p *= m[d].exp() / denom;
        used[d] = true;
    }
    p
}

pub fn dcg_weights(k: usize) -> Vec<f64> {
    (1..=k).map(|r| 1.0 / ((r + 1) as f64).log2()).collect()
}

/// `Σ_y π(y) Σ_k θ_k ρ_{y_k}` by brute force.
pub fn brute_reward(m: &[f64], rho: &[f64], theta: &[f64]) -> f64 {
    k_permutations(m.len(), theta.len())
        .iter()
        .map(|y| ranking_probability(m, y) * y.iter().zip(theta).map(|(&d, t)| t * rho[d]).sum::<f64>())
        .sum()
}

/// `Σ_y π(y) Σ_k θ_k 𝟙[y_k = d]` by brute force.
pub fn brute_exposure(m: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; m.len()];
    for y in k_permutations(m.len(), theta.len()) {
        let p = ranking_probability(m, &y);
        for (&d, t) in y.iter().zip(theta) {
            e[d] += p * t;
        }
    }
    e
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |acc, v| acc.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Relevance `2^grade - 1` for a grade in `0..=4`.
pub fn random_relevances<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| 2f64.powi(rng.random_range(0..=4)) - 1.0).collect()
}

pub fn random_scores<R: Rng>(rng: &mut R, n: usize, spread: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-spread..spread)).collect()
}

/// Prints and returns a criterion verdict.
pub fn report(name: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
