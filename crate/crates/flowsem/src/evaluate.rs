//! Frozen-encoder probing, full fine-tuning, classification metrics, and
//! label-efficiency sweeps.
//!
//! Probing holds every encoder parameter fixed — checked literally by
//! digesting encoder bytes before and after — and trains only the MLP head,
//! over pooled features that are computed once. Fine-tuning trains
//! everything end to end.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{AdamWConfig, AutodiffError, Tape};
use crate::dataset::{label_fraction_subset, DatasetError, DatasetFile};
use crate::hash::hex32;
use crate::model::{ModelError, ModelState, Trainable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schema hash mismatch between model ({model}) and dataset ({dataset})")]
    SchemaMismatch { model: String, dataset: String },
    #[error("dataset contains unlabeled records")]
    UnlabeledData,
    #[error("empty confusion matrix")]
    EmptyMatrix,
    #[error("encoder changed during frozen probing")]
    FrozenContractViolated,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Head-training hyperparameters shared by probing and fine-tuning.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epochs: 50,
            batch_size: 32,
            seed: 0,
            optim: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Classification outcome of one evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// "frozen" or "unfrozen".
    pub protocol: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Row = true class, column = predicted class.
    pub confusion: Vec<Vec<u64>>,
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl EvalReport {
    /// Human-readable aligned-column rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "protocol: {}  accuracy: {:.4}  macro_f1: {:.4}  labeled_fraction: {:.2}  seed: {}\n",
            self.protocol, self.accuracy, self.macro_f1, self.labeled_fraction, self.seed
        ));
        out.push_str(&format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
            "class", "precision", "recall", "f1", "support"
        ));
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9}\n",
                c.name, c.precision, c.recall, c.f1, c.support
            ));
        }
        out
    }

    /// Confusion matrix as CSV, one header row of predicted class names.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true_class");
        for c in &self.per_class {
            out.push_str(&format!(",{}", c.name));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&self.per_class[i].name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Standard metrics from a confusion matrix. Macro-F1 is the unweighted
/// mean of per-class F1 with the 0/0 := 0 convention, so zero-support
/// classes with no predictions contribute 0.
pub fn metrics(
    confusion: &[Vec<u64>],
    class_names: &[String],
) -> Result<(f64, f64, Vec<ClassMetrics>), EvalError> {
    let c = confusion.len();
    if c == 0 || confusion.iter().all(|row| row.iter().all(|&v| v == 0)) {
        return Err(EvalError::EmptyMatrix);
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();
    let mut per_class = Vec::with_capacity(c);
    let mut f1_sum = 0.0;
    for i in 0..c {
        let support: u64 = confusion[i].iter().sum();
        let predicted: u64 = (0..c).map(|r| confusion[r][i]).sum();
        let tp = confusion[i][i];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        per_class.push(ClassMetrics {
            name: class_names
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("class{i}")),
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok((trace as f64 / total as f64, f1_sum / c as f64, per_class))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mean-pooled encoder features for every record: `[len, dim]` row-major.
/// Inference only; the model is not modified.
pub fn pooled_features(model: &ModelState, dataset: &DatasetFile) -> Result<Vec<f32>, EvalError> {
    check_schema(model, dataset)?;
    let (t, n) = (dataset.t, dataset.n);
    let mut features = Vec::with_capacity(dataset.len() * model.hyper.dim);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(64) {
        let (mut values, valid, _) = dataset.batch_values(chunk);
        model.apply_column_zeroing(&mut values);
        let batch = chunk.len();
        let mut tape = Tape::<f32>::new();
        let bound = model.bind(&mut tape, Trainable::None);
        let x = tape.leaf(values, &[batch, t, n], false);
        let no_mask = Arc::new(vec![false; batch * t * n]);
        let e = model.forward_embed(&mut tape, &bound, x, no_mask, batch);
        let h = model.forward_encode(&mut tape, &bound, e, &valid, batch);
        let z = tape.mean_pool(h, valid.clone());
        tape.assert_finite()?;
        features.extend_from_slice(tape.value(z));
    }
    Ok(features)
}

fn labels_of(dataset: &DatasetFile) -> Result<Vec<usize>, EvalError> {
    dataset
        .records
        .iter()
        .map(|r| r.label.map(|l| l as usize).ok_or(EvalError::UnlabeledData))
        .collect()
}

fn check_schema(model: &ModelState, dataset: &DatasetFile) -> Result<(), EvalError> {
    if model.schema_hash != dataset.schema_hash {
        return Err(EvalError::SchemaMismatch {
            model: hex32(&model.schema_hash),
            dataset: hex32(&dataset.schema_hash),
        });
    }
    Ok(())
}

/// Trains only the classification head on frozen encoder features and
/// reports on the test set. The encoder digest is checked byte-for-byte
/// before and after. Returns the probed model (trained head attached) and
/// the report.
pub fn probe_frozen(
    model: &ModelState,
    train: &DatasetFile,
    test: &DatasetFile,
    cfg: &EvalConfig,
) -> Result<(ModelState, EvalReport), EvalError> {
    probe_frozen_with_fraction(model, train, test, cfg, 1.0)
}

pub fn probe_frozen_with_fraction(
    model: &ModelState,
    train: &DatasetFile,
    test: &DatasetFile,
    cfg: &EvalConfig,
    labeled_fraction: f64,
) -> Result<(ModelState, EvalReport), EvalError> {
    check_schema(model, train)?;
    check_schema(model, test)?;
    let train_labels = labels_of(train)?;
    let test_labels = labels_of(test)?;
    let classes = train.class_names.len().max(
        train_labels
            .iter()
            .chain(test_labels.iter())
            .max()
            .map(|m| m + 1)
            .unwrap_or(1),
    );

    let mut probed = model.clone();
    probed.reset_head(classes, cfg.seed, train.class_names.clone());
    let digest_before = probed.encoder_digest();

    // Frozen encoder: features computed once.
    let train_z = pooled_features(&probed, train)?;
    let d = probed.hyper.dim;

    let mut opt = probed.optimizer(cfg.optim);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut crate::rng::substream(cfg.seed, &[0x9A0B, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut z = Vec::with_capacity(chunk.len() * d);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                z.extend_from_slice(&train_z[i * d..(i + 1) * d]);
                labels.push(train_labels[i]);
            }
            let mut tape = Tape::<f32>::new();
            let bound = probed.bind(&mut tape, Trainable::HeadOnly);
            let zv = tape.leaf(z, &[chunk.len(), d], false);
            let logits = probed.forward_head(&mut tape, &bound, zv);
            let loss = tape.cross_entropy(logits, Arc::new(labels));
            tape.backward(loss)?;
            probed.apply_step(&mut opt, &tape, &bound);
        }
    }

    if probed.encoder_digest() != digest_before {
        return Err(EvalError::FrozenContractViolated);
    }

    let report = report_on(&probed, test, "frozen", cfg.seed, labeled_fraction)?;
    Ok((probed, report))
}

/// Full fine-tuning: every parameter trains, end to end through the encoder.
pub fn finetune(
    model: &ModelState,
    train: &DatasetFile,
    test: &DatasetFile,
    cfg: &EvalConfig,
) -> Result<(ModelState, EvalReport), EvalError> {
    check_schema(model, train)?;
    check_schema(model, test)?;
    let train_labels = labels_of(train)?;
    let classes = train.class_names.len().max(2);
    let mut tuned = model.clone();
    tuned.reset_head(classes, cfg.seed, train.class_names.clone());
    let (t, n) = (train.t, train.n);

    let mut opt = tuned.optimizer(cfg.optim);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut crate::rng::substream(cfg.seed, &[0xF17E, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (mut values, valid, _) = train.batch_values(chunk);
            tuned.apply_column_zeroing(&mut values);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let batch = chunk.len();
            let mut tape = Tape::<f32>::new();
            let bound = tuned.bind(&mut tape, Trainable::All);
            let x = tape.leaf(values, &[batch, t, n], false);
            let no_mask = Arc::new(vec![false; batch * t * n]);
            let e = tuned.forward_embed(&mut tape, &bound, x, no_mask, batch);
            let h = tuned.forward_encode(&mut tape, &bound, e, &valid, batch);
            let logits = tuned.forward_classify(&mut tape, &bound, h, &valid);
            let loss = tape.cross_entropy(logits, Arc::new(labels));
            tape.backward(loss)?;
            tuned.apply_step(&mut opt, &tape, &bound);
        }
    }

    let report = report_on(&tuned, test, "unfrozen", cfg.seed, 1.0)?;
    Ok((tuned, report))
}

/// Predicted class per record, using the model's trained head.
pub fn predict(model: &ModelState, dataset: &DatasetFile) -> Result<Vec<usize>, EvalError> {
    let z = pooled_features(model, dataset)?;
    let d = model.hyper.dim;
    let mut preds = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(256) {
        let mut zc = Vec::with_capacity(chunk.len() * d);
        for &i in chunk {
            zc.extend_from_slice(&z[i * d..(i + 1) * d]);
        }
        let mut tape = Tape::<f32>::new();
        let bound = model.bind(&mut tape, Trainable::None);
        let zv = tape.leaf(zc, &[chunk.len(), d], false);
        let logits = model.forward_head(&mut tape, &bound, zv);
        let c = model.hyper.classes;
        for row in tape.value(logits).chunks(c) {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            preds.push(best);
        }
    }
    Ok(preds)
}

/// Scores a model with a trained head on a labeled dataset.
pub fn report_on(
    model: &ModelState,
    test: &DatasetFile,
    protocol: &str,
    seed: u64,
    labeled_fraction: f64,
) -> Result<EvalReport, EvalError> {
    let labels = labels_of(test)?;
    let preds = predict(model, test)?;
    let c = model.hyper.classes;
    let mut confusion = vec![vec![0u64; c]; c];
    for (&truth, &pred) in labels.iter().zip(&preds) {
        confusion[truth][pred] += 1;
    }
    let names = if model.class_names.len() == c {
        model.class_names.clone()
    } else {
        (0..c).map(|i| format!("class{i}")).collect()
    };
    let (accuracy, macro_f1, per_class) = metrics(&confusion, &names)?;
    Ok(EvalReport {
        protocol: protocol.to_string(),
        accuracy,
        macro_f1,
        per_class,
        confusion,
        labeled_fraction,
        seed,
    })
}

/// Frozen probes over nested labeled subsets of the training data, one
/// report per fraction.
pub fn label_efficiency(
    model: &ModelState,
    train: &DatasetFile,
    test: &DatasetFile,
    fractions: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<EvalReport>, EvalError> {
    let mut reports = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let subset = label_fraction_subset(train, fraction, cfg.seed)?;
        let (_, report) = probe_frozen_with_fraction(model, &subset, test, cfg, fraction)?;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split, SynthSpec};
    use crate::model::ModelConfig;
    use crate::schema::{default_schema, ColumnSet};

    fn tiny_setup() -> (ModelState, DatasetFile, DatasetFile) {
        let schema = default_schema();
        let data = crate::dataset::synth_corpus(
            &SynthSpec::two_class(),
            60,
            2,
            &schema,
            ColumnSet::Generalizable,
            10,
            5,
        )
        .unwrap()
        .dataset;
        let (train, _, test) = split(&data, (0.7, 0.1, 0.2), 3).unwrap();
        let cfg = ModelConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            t: 10,
            n_fsus: 41,
            ..ModelConfig::default()
        };
        let model = ModelState::init(1, cfg, schema.digest(), data.class_names.clone()).unwrap();
        (model, train, test)
    }

    #[test]
    fn metrics_identity_matrix() {
        let names = vec!["a".into(), "b".into(), "c".into()];
        let confusion = vec![vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 2]];
        let (acc, f1, per) = metrics(&confusion, &names).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 1.0);
        assert!(per.iter().all(|c| c.f1 == 1.0));
    }

    #[test]
    fn metrics_half_half() {
        let names = vec!["a".into(), "b".into()];
        let confusion = vec![vec![5, 5], vec![5, 5]];
        let (acc, f1, per) = metrics(&confusion, &names).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
        assert!((f1 - 0.5).abs() < 1e-12);
        assert!((per[0].precision - 0.5).abs() < 1e-12);
        assert!((per[0].recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_zero_support_class_counts_zero() {
        let names = vec!["a".into(), "b".into(), "ghost".into()];
        let confusion = vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 0]];
        let (acc, f1, per) = metrics(&confusion, &names).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(per[2].f1, 0.0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_empty_matrix_rejected() {
        let names: Vec<String> = vec![];
        assert!(matches!(metrics(&[], &names), Err(EvalError::EmptyMatrix)));
        let zeros = vec![vec![0u64; 2]; 2];
        assert!(matches!(
            metrics(&zeros, &["a".into(), "b".into()]),
            Err(EvalError::EmptyMatrix)
        ));
    }

    #[test]
    fn report_matches_brute_force_recount() {
        let (model, train, test) = tiny_setup();
        let cfg = EvalConfig {
            epochs: 5,
            seed: 4,
            ..EvalConfig::default()
        };
        let (probed, report) = probe_frozen(&model, &train, &test, &cfg).unwrap();

        let preds = predict(&probed, &test).unwrap();
        let labels: Vec<usize> = test
            .records
            .iter()
            .map(|r| r.label.unwrap() as usize)
            .collect();
        let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        assert!((report.accuracy - correct as f64 / labels.len() as f64).abs() < 1e-12);
        let total: u64 = report.confusion.iter().flatten().sum();
        assert_eq!(total as usize, test.len());
        for (i, row) in report.confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            assert_eq!(
                support,
                labels.iter().filter(|&&l| l == i).count() as u64,
                "row sums are per-class test counts"
            );
        }
    }

    #[test]
    fn frozen_probe_keeps_encoder_bytes() {
        let (model, train, test) = tiny_setup();
        let digest = model.encoder_digest();
        let cfg = EvalConfig {
            epochs: 3,
            seed: 9,
            ..EvalConfig::default()
        };
        let (probed, report) = probe_frozen(&model, &train, &test, &cfg).unwrap();
        assert_eq!(probed.encoder_digest(), digest);
        assert_eq!(report.protocol, "frozen");

        // Determinism: identical runs, identical reports.
        let (_, report2) = probe_frozen(&model, &train, &test, &cfg).unwrap();
        assert_eq!(report.accuracy, report2.accuracy);
        assert_eq!(report.confusion, report2.confusion);
    }

    #[test]
    fn finetune_changes_encoder() {
        let (model, train, test) = tiny_setup();
        let digest = model.encoder_digest();
        let cfg = EvalConfig {
            epochs: 2,
            seed: 1,
            ..EvalConfig::default()
        };
        let (tuned, report) = finetune(&model, &train, &test, &cfg).unwrap();
        assert_ne!(tuned.encoder_digest(), digest);
        assert_eq!(report.protocol, "unfrozen");
    }

    #[test]
    fn schema_mismatch_rejected() {
        let (model, train, test) = tiny_setup();
        let mut bad = train.clone();
        bad.schema_hash = [9u8; 32];
        let cfg = EvalConfig::default();
        assert!(matches!(
            probe_frozen(&model, &bad, &test, &cfg),
            Err(EvalError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn unlabeled_data_rejected() {
        let (model, mut train, test) = tiny_setup();
        train.records[0].label = None;
        let cfg = EvalConfig {
            epochs: 1,
            ..EvalConfig::default()
        };
        assert!(matches!(
            probe_frozen(&model, &train, &test, &cfg),
            Err(EvalError::UnlabeledData)
        ));
    }

    #[test]
    fn label_efficiency_full_fraction_equals_plain_probe() {
        let (model, train, test) = tiny_setup();
        let cfg = EvalConfig {
            epochs: 4,
            seed: 6,
            ..EvalConfig::default()
        };
        let reports = label_efficiency(&model, &train, &test, &[0.2, 1.0], &cfg).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].labeled_fraction, 0.2);
        let (_, full) = probe_frozen(&model, &train, &test, &cfg).unwrap();
        assert_eq!(reports[1].accuracy, full.accuracy);
        assert_eq!(reports[1].confusion, full.confusion);
    }
}
