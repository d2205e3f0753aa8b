//! A small deterministic random forest used as the feature-independent
//! importance oracle: axis-aligned splits chosen by Gini gain over
//! per-flow FSU summaries, importance accumulated as weighted impurity
//! decrease per feature.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 100,
            max_depth: 4,
            seed: 0,
        }
    }
}

/// Trains the forest and returns per-feature importance normalized to sum 1.
/// `features` is `[n_samples, n_features]` row-major.
pub fn split_gain_importance(
    features: &[f64],
    labels: &[usize],
    n_features: usize,
    classes: usize,
    cfg: &ForestConfig,
) -> Vec<f64> {
    let n = labels.len();
    assert_eq!(features.len(), n * n_features, "feature matrix shape");
    assert!(n > 1, "need at least two samples");
    let mut gains = vec![0.0f64; n_features];

    for tree in 0..cfg.trees {
        let mut rng = crate::rng::substream(cfg.seed, &[0xF03E, tree as u64]);
        // Bootstrap sample.
        let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        grow(
            features,
            labels,
            n_features,
            classes,
            &sample,
            0,
            cfg.max_depth,
            &mut rng,
            &mut gains,
        );
    }

    let total: f64 = gains.iter().sum();
    if total > 0.0 {
        gains.iter_mut().for_each(|g| *g /= total);
    } else {
        // Degenerate data: spread uniformly so the output still sums to 1.
        gains.iter_mut().for_each(|g| *g = 1.0 / n_features as f64);
    }
    gains
}

fn gini(counts: &[u64], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

#[allow(clippy::too_many_arguments)]
fn grow(
    features: &[f64],
    labels: &[usize],
    n_features: usize,
    classes: usize,
    members: &[usize],
    depth: usize,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
    gains: &mut [f64],
) {
    if depth >= max_depth || members.len() < 2 {
        return;
    }
    let mut counts = vec![0u64; classes];
    for &i in members {
        counts[labels[i]] += 1;
    }
    let total = members.len() as u64;
    let node_gini = gini(&counts, total);
    if node_gini == 0.0 {
        return; // pure node
    }

    // Best split per feature, then a seeded random choice among features
    // that tie on gain, so equally informative features share importance
    // across the ensemble instead of the lowest index taking everything.
    let mut best_gain = 0.0f64;
    let mut tied: Vec<(usize, f64)> = Vec::new(); // (feature, threshold)
    for f in 0..n_features {
        let mut order: Vec<usize> = members.to_vec();
        order.sort_by(|&a, &b| {
            features[a * n_features + f]
                .partial_cmp(&features[b * n_features + f])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut left = vec![0u64; classes];
        let mut right = counts.clone();
        let mut feature_best: Option<(f64, f64)> = None;
        for w in 0..order.len() - 1 {
            let i = order[w];
            left[labels[i]] += 1;
            right[labels[i]] -= 1;
            let xv = features[i * n_features + f];
            let xn = features[order[w + 1] * n_features + f];
            if xv == xn {
                continue; // cannot split between equal values
            }
            let nl = (w + 1) as u64;
            let nr = total - nl;
            let gain = node_gini
                - (nl as f64 / total as f64) * gini(&left, nl)
                - (nr as f64 / total as f64) * gini(&right, nr);
            if feature_best.map_or(true, |(g, _)| gain > g) {
                feature_best = Some((gain, 0.5 * (xv + xn)));
            }
        }
        if let Some((gain, threshold)) = feature_best {
            if gain > best_gain + 1e-12 {
                best_gain = gain;
                tied = vec![(f, threshold)];
            } else if gain > best_gain - 1e-12 && gain > 1e-12 {
                tied.push((f, threshold));
            }
        }
    }

    if tied.is_empty() || best_gain <= 1e-12 {
        return;
    }
    let (feature, threshold) = tied[rng.gen_range(0..tied.len())];
    // Weight by the number of this tree's samples reaching the node.
    gains[feature] += best_gain * members.len() as f64;

    let (left, right): (Vec<usize>, Vec<usize>) = members
        .iter()
        .partition(|&&i| features[i * n_features + feature] <= threshold);
    if !left.is_empty() && !right.is_empty() {
        grow(features, labels, n_features, classes, &left, depth + 1, max_depth, rng, gains);
        grow(features, labels, n_features, classes, &right, depth + 1, max_depth, rng, gains);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise_matrix(rng: &mut impl Rng, n: usize, f: usize) -> Vec<f64> {
        (0..n * f).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn single_informative_feature_dominates() {
        let mut rng = crate::rng::stream(3);
        let n = 200;
        let f = 12;
        let mut x = noise_matrix(&mut rng, n, f);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for (i, &l) in labels.iter().enumerate() {
            x[i * f + 4] = l as f64 + 0.05 * rng.gen::<f64>();
        }
        let imp = split_gain_importance(&x, &labels, f, 2, &ForestConfig::default());
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp[4] > 0.9, "informative feature got {}", imp[4]);
    }

    #[test]
    fn shuffled_labels_stay_near_uniform() {
        let f = 20;
        for seed in 0..5 {
            let mut rng = crate::rng::stream(seed);
            let n = 300;
            let x = noise_matrix(&mut rng, n, f);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let imp = split_gain_importance(
                &x,
                &labels,
                f,
                2,
                &ForestConfig {
                    seed,
                    ..ForestConfig::default()
                },
            );
            let max = imp.iter().cloned().fold(0.0, f64::max);
            assert!(
                max < 3.0 / f as f64,
                "seed {seed}: max importance {max} exceeds 3/N"
            );
        }
    }

    #[test]
    fn importance_is_deterministic() {
        let mut rng = crate::rng::stream(9);
        let n = 100;
        let f = 6;
        let x = noise_matrix(&mut rng, n, f);
        let labels: Vec<usize> = (0..n).map(|i| (i / 3) % 3).collect();
        let cfg = ForestConfig {
            seed: 5,
            ..ForestConfig::default()
        };
        let a = split_gain_importance(&x, &labels, f, 3, &cfg);
        let b = split_gain_importance(&x, &labels, f, 3, &cfg);
        assert_eq!(a, b);
    }
}
