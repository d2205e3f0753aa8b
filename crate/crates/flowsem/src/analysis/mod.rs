//! Embedding-space geometry and FSU importance analyses.
//!
//! Geometry inspects the value-embedding layer alone: per-FSU centroids,
//! pairwise centroid distances, and intra-FSU variance, contrasting
//! FSU-specific embedders with a shared-embedding twin. Importance compares
//! gradient attribution through the trained model against a split-gain
//! forest built on flattened per-flow summaries, with tie-aware Spearman
//! correlation between the two rankings.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::dataset::DatasetFile;
use crate::model::{ModelError, ModelState, Trainable};

mod forest;

pub use forest::{split_gain_importance, ForestConfig};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("dataset contains unlabeled records")]
    UnlabeledData,
    #[error("vectors have different or too-short lengths: {0} vs {1} (need >= 3)")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

// ---------------------------------------------------------------------------
// Spearman correlation
// ---------------------------------------------------------------------------

/// Tie-aware Spearman rank correlation: Pearson correlation of average
/// ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    Ok(pearson(&ra, &rb))
}

/// Average (fractional) ranks, 1-based; ties share the mean of their ranks.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap().then(i.cmp(&j)));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

// ---------------------------------------------------------------------------
// Embedding geometry
// ---------------------------------------------------------------------------

/// Geometry of the value-embedding layer over sampled cell values.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    /// "fsu_specific" or "shared".
    pub mode: String,
    pub columns: Vec<String>,
    /// `[n, dim]` row-major per-FSU centroids.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// `[n][n]` pairwise centroid Euclidean distances.
    pub inter_distance: Vec<Vec<f64>>,
    /// Mean squared distance to the centroid, per FSU.
    pub intra_variance: Vec<f64>,
    /// max/min of intra-FSU variance over columns whose sampled raw values
    /// actually vary; constant columns have zero variance in every mode and
    /// are reported but excluded from the ratio.
    pub variance_ratio: f64,
    pub samples_per_column: usize,
}

impl GeometryReport {
    /// Heatmap-ready CSV of the distance matrix.
    pub fn distance_csv(&self) -> String {
        let mut out = String::from("fsu");
        for c in &self.columns {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (i, row) in self.inter_distance.iter().enumerate() {
            out.push_str(&self.columns[i]);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn variance_csv(&self) -> String {
        let mut out = String::from("fsu,intra_variance\n");
        for (c, v) in self.columns.iter().zip(&self.intra_variance) {
            out.push_str(&format!("{c},{v:.9}\n"));
        }
        out
    }
}

/// Computes per-FSU value-embedding geometry (positional terms excluded)
/// over up to `sample_n` valid cells per column. `column_names` labels the
/// dataset's columns.
pub fn embedding_geometry(
    model: &ModelState,
    dataset: &DatasetFile,
    sample_n: usize,
    column_names: &[String],
) -> Result<GeometryReport, AnalysisError> {
    if sample_n < 100 {
        return Err(AnalysisError::InsufficientSamples {
            needed: 100,
            available: sample_n,
        });
    }
    let (t, n, d) = (dataset.t, dataset.n, model.hyper.dim);
    let available: usize = dataset.records.iter().map(|r| r.valid_count()).sum();
    if available < 100 {
        return Err(AnalysisError::InsufficientSamples {
            needed: 100,
            available,
        });
    }

    // Sampled raw values per column, in dataset order.
    let mut samples: Vec<Vec<f32>> = vec![Vec::with_capacity(sample_n.min(available)); n];
    'outer: for rec in &dataset.records {
        for ti in 0..rec.valid_count().min(t) {
            for ni in 0..n {
                if samples[ni].len() < sample_n {
                    samples[ni].push(rec.values[ti * n + ni]);
                }
            }
            if samples[0].len() >= sample_n {
                break 'outer;
            }
        }
    }
    let per_column = samples[0].len();

    let mut centroids = vec![0.0f64; n * d];
    let mut intra = vec![0.0f64; n];
    let mut raw_varies = vec![false; n];
    for ni in 0..n {
        let (w, b) = model.embedder(ni);
        let vals = &samples[ni];
        raw_varies[ni] = vals.iter().any(|&v| v != vals[0]);
        // Embedding is affine in x, so the centroid is the embedding of the
        // mean and the variance contracts through |w|^2.
        let mean_x = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
        let var_x = vals
            .iter()
            .map(|&v| (v as f64 - mean_x).powi(2))
            .sum::<f64>()
            / vals.len() as f64;
        let w_norm_sq: f64 = w.iter().map(|&v| (v as f64) * (v as f64)).sum();
        for j in 0..d {
            centroids[ni * d + j] = w[j] as f64 * mean_x + b[j] as f64;
        }
        intra[ni] = w_norm_sq * var_x;
    }

    let mut inter = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dist = 0.0;
            for k in 0..d {
                let delta = centroids[i * d + k] - centroids[j * d + k];
                dist += delta * delta;
            }
            let dist = dist.sqrt();
            inter[i][j] = dist;
            inter[j][i] = dist;
        }
    }

    let varying: Vec<f64> = intra
        .iter()
        .zip(&raw_varies)
        .filter(|(_, &varies)| varies)
        .map(|(&v, _)| v)
        .collect();
    let variance_ratio = match (
        varying.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        varying.iter().cloned().fold(f64::INFINITY, f64::min),
    ) {
        (max, min) if min > 0.0 => max / min,
        _ => f64::INFINITY,
    };

    Ok(GeometryReport {
        mode: if model.hyper.shared_embedding {
            "shared".into()
        } else {
            "fsu_specific".into()
        },
        columns: column_names.to_vec(),
        centroids,
        dim: d,
        inter_distance: inter,
        intra_variance: intra,
        variance_ratio,
        samples_per_column: per_column,
    })
}

/// A freshly initialized shared-embedding twin of a model, for geometry
/// contrast.
pub fn shared_twin(model: &ModelState) -> ModelState {
    let mut hyper = model.hyper.clone();
    hyper.shared_embedding = true;
    ModelState::init(model.seed, hyper, model.schema_hash, model.class_names.clone())
        .expect("twin hyperparameters are valid")
}

// ---------------------------------------------------------------------------
// FSU importance
// ---------------------------------------------------------------------------

/// How input relevance is scored from gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    /// Mean absolute gradient of the true-class logit.
    GradientAbs,
    /// Mean absolute input-times-gradient.
    InputXGradient,
}

/// Gradient-based FSU importance and its comparison against the
/// feature-independent oracle.
#[derive(Debug, Clone, Serialize)]
pub struct ImportanceReport {
    pub columns: Vec<String>,
    /// Normalized to sum 1.
    pub model_importance: Vec<f64>,
    /// Normalized to sum 1.
    pub oracle_importance: Vec<f64>,
    pub spearman_rho: f64,
    /// Column names ordered by model importance, descending.
    pub model_ranking: Vec<String>,
    /// Column names ordered by oracle importance, descending.
    pub oracle_ranking: Vec<String>,
}

impl ImportanceReport {
    pub fn ranking_csv(&self) -> String {
        let mut out = String::from("fsu,model_importance,oracle_importance\n");
        let mut order: Vec<usize> = (0..self.columns.len()).collect();
        order.sort_by(|&a, &b| {
            self.model_importance[b]
                .partial_cmp(&self.model_importance[a])
                .unwrap()
        });
        for i in order {
            out.push_str(&format!(
                "{},{:.6},{:.6}\n",
                self.columns[i], self.model_importance[i], self.oracle_importance[i]
            ));
        }
        out
    }
}

/// Mean absolute gradient of the true-class logit with respect to each
/// input column, over valid cells, normalized to sum 1. The model must
/// carry a head trained on this label set.
pub fn fsu_importance(
    model: &ModelState,
    dataset: &DatasetFile,
    attribution: Attribution,
) -> Result<Vec<f64>, AnalysisError> {
    let labels: Vec<usize> = dataset
        .records
        .iter()
        .map(|r| r.label.map(|l| l as usize).ok_or(AnalysisError::UnlabeledData))
        .collect::<Result<_, _>>()?;
    let (t, n) = (dataset.t, dataset.n);
    let c = model.hyper.classes;
    let mut accum = vec![0.0f64; n];

    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(64) {
        let (mut values, valid, _) = dataset.batch_values(chunk);
        model.apply_column_zeroing(&mut values);
        let batch = chunk.len();
        let mut tape = Tape::<f32>::new();
        let bound = model.bind(&mut tape, Trainable::None);
        let x = tape.leaf(values.clone(), &[batch, t, n], true);
        let no_mask = Arc::new(vec![false; batch * t * n]);
        let e = model.forward_embed(&mut tape, &bound, x, no_mask, batch);
        let h = model.forward_encode(&mut tape, &bound, e, &valid, batch);
        let logits = model.forward_classify(&mut tape, &bound, h, &valid);

        // Sum of true-class logits; samples are independent, so the input
        // gradient of each row is its own logit's gradient.
        let mut pick = vec![0.0f32; batch * c];
        for (bi, &rec_idx) in chunk.iter().enumerate() {
            pick[bi * c + labels[rec_idx]] = 1.0;
        }
        let objective = tape.weighted_sum(logits, pick);
        tape.backward(objective)?;
        let grad = tape.grad(x).expect("input gradient");
        for (bi, _) in chunk.iter().enumerate() {
            for ti in 0..t {
                if !valid[bi * t + ti] {
                    continue;
                }
                for ni in 0..n {
                    let idx = (bi * t + ti) * n + ni;
                    let g = grad[idx] as f64;
                    accum[ni] += match attribution {
                        Attribution::GradientAbs => g.abs(),
                        Attribution::InputXGradient => (g * values[idx] as f64).abs(),
                    };
                }
            }
        }
    }

    let total: f64 = accum.iter().sum();
    if total > 0.0 {
        accum.iter_mut().for_each(|v| *v /= total);
    } else {
        accum.iter_mut().for_each(|v| *v = 1.0 / n as f64);
    }
    Ok(accum)
}

/// Per-flow mean over valid packets for every column: the flattened
/// summaries the oracle trains on. Returns `([len, n], labels)`.
pub fn flow_summaries(dataset: &DatasetFile) -> Result<(Vec<f64>, Vec<usize>), AnalysisError> {
    let (t, n) = (dataset.t, dataset.n);
    let mut features = Vec::with_capacity(dataset.len() * n);
    let mut labels = Vec::with_capacity(dataset.len());
    for rec in &dataset.records {
        labels.push(
            rec.label
                .map(|l| l as usize)
                .ok_or(AnalysisError::UnlabeledData)?,
        );
        let count = rec.valid_count();
        for ni in 0..n {
            let mut sum = 0.0;
            for ti in 0..count.min(t) {
                sum += rec.values[ti * n + ni] as f64;
            }
            features.push(sum / count as f64);
        }
    }
    Ok((features, labels))
}

/// The feature-independent oracle: split-gain forest importance over
/// per-flow FSU summaries, normalized to sum 1.
pub fn oracle_importance(dataset: &DatasetFile, seed: u64) -> Result<Vec<f64>, AnalysisError> {
    let (features, labels) = flow_summaries(dataset)?;
    let classes = labels.iter().max().map(|m| m + 1).unwrap_or(1).max(2);
    Ok(split_gain_importance(
        &features,
        &labels,
        dataset.n,
        classes,
        &ForestConfig {
            seed,
            ..ForestConfig::default()
        },
    ))
}

/// The full importance comparison.
pub fn importance_report(
    model: &ModelState,
    dataset: &DatasetFile,
    column_names: &[String],
    attribution: Attribution,
    seed: u64,
) -> Result<ImportanceReport, AnalysisError> {
    let model_importance = fsu_importance(model, dataset, attribution)?;
    let oracle = oracle_importance(dataset, seed)?;
    let rho = spearman(&model_importance, &oracle)?;
    let ranking = |scores: &[f64]| -> Vec<String> {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        order
            .into_iter()
            .map(|i| column_names[i].to_string())
            .collect()
    };
    Ok(ImportanceReport {
        columns: column_names.to_vec(),
        model_ranking: ranking(&model_importance),
        oracle_ranking: ranking(&oracle),
        model_importance,
        oracle_importance: oracle,
        spearman_rho: rho,
    })
}

#[cfg(test)]
mod tests;
