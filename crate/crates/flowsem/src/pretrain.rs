//! Dual Bernoulli masking and the masked-reconstruction pretraining loop.
//!
//! Each flow draws a packet-axis mask (hide a whole packet's FSUs) and a
//! field-axis mask (hide one FSU across all packets), composed by OR and
//! intersected with validity. Hidden valid cells are exactly the
//! reconstruction targets; the loss is mean squared error over those cells
//! and nothing else.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamWConfig, AutodiffError, Tape, Var};
use crate::dataset::DatasetFile;
use crate::model::{ModelConfig, ModelError, ModelState, Trainable};
use crate::schema::{ColumnSet, FsuSchema};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("mask plan has no targets")]
    EmptyMaskSet,
    #[error("dataset has {found} columns but the schema expects {expected} for this column set")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("dataset schema hash does not match the schema in use")]
    SchemaMismatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One flow's dual mask draw and the derived target set.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    pub m_packet: Vec<bool>,
    pub m_field: Vec<bool>,
    /// `t * n`, true where the cell is hidden from the encoder. Hidden valid
    /// cells are exactly the reconstruction targets.
    pub input_mask: Vec<bool>,
    /// Number of retries the sampler needed before this plan.
    pub resamples: u32,
}

impl MaskPlan {
    pub fn target_count(&self) -> usize {
        self.input_mask.iter().filter(|&&m| m).count()
    }

    /// The composition law: `input_mask == (m_packet OR m_field) AND valid`.
    pub fn obeys_composition(&self, valid: &[bool]) -> bool {
        let n = self.m_field.len();
        self.input_mask.iter().enumerate().all(|(idx, &m)| {
            let (t, i) = (idx / n, idx % n);
            m == ((self.m_packet[t] || self.m_field[i]) && valid[t])
        })
    }
}

/// Pretraining hyperparameters and ablation switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Packet-axis Bernoulli rate.
    pub p_packet: f64,
    /// Field-axis Bernoulli rate.
    pub p_field: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
    /// Re-admit random-class FSUs as inputs and targets (the dataset must
    /// have been built with them).
    pub no_filter: bool,
    /// One shared value embedder for all FSUs.
    pub shared_embed: bool,
    /// Zero capture-time metadata columns everywhere.
    pub no_temporal: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            p_packet: 0.15,
            p_field: 0.15,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            optim: AdamWConfig::default(),
            no_filter: false,
            shared_embed: false,
            no_temporal: false,
        }
    }
}

impl PretrainConfig {
    pub fn column_set(&self) -> ColumnSet {
        if self.no_filter {
            ColumnSet::GeneralizableAndRandom
        } else {
            ColumnSet::Generalizable
        }
    }
}

/// Per-FSU reconstruction loss, the per-column diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct PerFsuLoss {
    pub name: String,
    pub count: u64,
    pub mse: f64,
}

/// Everything a pretraining run produces.
pub struct PretrainResult {
    pub model: ModelState,
    /// Mean masked-reconstruction loss per epoch, target-weighted.
    pub epoch_losses: Vec<f64>,
    /// Final per-column reconstruction losses under a fresh mask pass.
    pub per_fsu: Vec<PerFsuLoss>,
}

/// Draws a dual mask for one flow. Degenerate draws (no targets, or no
/// visible valid cell left to condition on) are resampled a bounded number
/// of times, then forced to a single masked column (or packet when the
/// table has one column) so the composition law still holds.
pub fn sample_mask(valid: &[bool], n: usize, p_packet: f64, p_field: f64, rng: &mut impl Rng) -> MaskPlan {
    let t = valid.len();
    let valid_cells = valid.iter().filter(|&&v| v).count() * n;
    debug_assert!(valid_cells > 0, "flow must have a valid packet");
    let mut resamples = 0;
    loop {
        let m_packet: Vec<bool> = (0..t).map(|_| rng.gen::<f64>() < p_packet).collect();
        let m_field: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < p_field).collect();
        let plan = compose(&m_packet, &m_field, valid, resamples);
        let targets = plan.target_count();
        if targets > 0 && targets < valid_cells {
            return plan;
        }
        resamples += 1;
        if resamples >= 8 {
            // Force the minimal law-abiding plan.
            let mut m_packet = vec![false; t];
            let mut m_field = vec![false; n];
            if n > 1 {
                m_field[rng.gen_range(0..n)] = true;
            } else {
                let valid_rows: Vec<usize> =
                    (0..t).filter(|&ti| valid[ti]).collect();
                m_packet[valid_rows[rng.gen_range(0..valid_rows.len())]] = true;
            }
            return compose(&m_packet, &m_field, valid, resamples);
        }
    }
}

fn compose(m_packet: &[bool], m_field: &[bool], valid: &[bool], resamples: u32) -> MaskPlan {
    let (t, n) = (m_packet.len(), m_field.len());
    let mut input_mask = vec![false; t * n];
    for ti in 0..t {
        for ni in 0..n {
            input_mask[ti * n + ni] = (m_packet[ti] || m_field[ni]) && valid[ti];
        }
    }
    MaskPlan {
        m_packet: m_packet.to_vec(),
        m_field: m_field.to_vec(),
        input_mask,
        resamples,
    }
}

/// The masked-reconstruction objective: mean squared error over the target
/// cells. Cells outside the target set contribute no value and no gradient.
pub fn pretrain_loss(
    tape: &mut Tape<f32>,
    pred: Var,
    target: Arc<Vec<f32>>,
    mask: Arc<Vec<bool>>,
) -> Result<Var, PretrainError> {
    if !mask.iter().any(|&m| m) {
        return Err(PretrainError::EmptyMaskSet);
    }
    Ok(tape.mse_masked(pred, target, mask))
}

/// Per-column decomposition of the masked loss. The count-weighted mean of
/// the per-column entries equals the total loss.
pub fn per_fsu_loss(
    pred: &[f32],
    target: &[f32],
    mask: &[bool],
    n: usize,
    names: &[String],
) -> Vec<PerFsuLoss> {
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0u64; n];
    for (idx, &m) in mask.iter().enumerate() {
        if m {
            let col = idx % n;
            let e = (pred[idx] - target[idx]) as f64;
            sums[col] += e * e;
            counts[col] += 1;
        }
    }
    (0..n)
        .map(|col| PerFsuLoss {
            name: names.get(col).cloned().unwrap_or_else(|| format!("col{col}")),
            count: counts[col],
            mse: if counts[col] > 0 { sums[col] / counts[col] as f64 } else { 0.0 },
        })
        .collect()
}

/// Resolves the model configuration for a dataset/ablation combination.
pub fn model_config_for(
    base: &ModelConfig,
    schema: &FsuSchema,
    cfg: &PretrainConfig,
    dataset: &DatasetFile,
) -> Result<ModelConfig, PretrainError> {
    let set = cfg.column_set();
    let expected = schema.indices(set).len();
    if dataset.n != expected {
        return Err(PretrainError::ColumnMismatch {
            expected,
            found: dataset.n,
        });
    }
    if dataset.schema_hash != schema.digest() {
        return Err(PretrainError::SchemaMismatch);
    }
    let mut model = base.clone();
    model.t = dataset.t;
    model.n_fsus = dataset.n;
    model.shared_embedding = cfg.shared_embed;
    model.zeroed_columns = if cfg.no_temporal {
        ["frame.time_delta", "frame.time_relative"]
            .iter()
            .filter_map(|name| schema.column_index(set, name))
            .collect()
    } else {
        Vec::new()
    };
    model.classes = dataset.class_names.len().max(1);
    Ok(model)
}

/// The pretraining loop: shuffle, batch, mask, embed, encode, reconstruct,
/// masked MSE, AdamW. Labels are ignored. Deterministic per config and seed:
/// masks derive from `(seed, epoch, flow_id)`, so batch composition cannot
/// change them.
pub fn pretrain(
    dataset: &DatasetFile,
    schema: &FsuSchema,
    base_model: &ModelConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainResult, PretrainError> {
    if dataset.is_empty() {
        return Err(PretrainError::EmptyDataset);
    }
    let model_cfg = model_config_for(base_model, schema, cfg, dataset)?;
    let mut model = ModelState::init(
        cfg.seed,
        model_cfg,
        dataset.schema_hash,
        dataset.class_names.clone(),
    )?;
    let mut opt = model.optimizer(cfg.optim);
    let (t, n) = (dataset.t, dataset.n);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut crate::rng::substream(cfg.seed, &[0xE60C, epoch as u64]));

        let mut loss_sum = 0.0f64;
        let mut target_sum = 0u64;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (mut values, valid, _labels) = dataset.batch_values(chunk);
            model.apply_column_zeroing(&mut values);
            let batch = chunk.len();

            let mut input_mask = vec![false; batch * t * n];
            for (bi, &rec_idx) in chunk.iter().enumerate() {
                let rec = &dataset.records[rec_idx];
                let mut rng =
                    crate::rng::substream(cfg.seed, &[0x3A5C, epoch as u64, rec.flow_id]);
                let plan = sample_mask(&rec.valid, n, cfg.p_packet, cfg.p_field, &mut rng);
                input_mask[bi * t * n..(bi + 1) * t * n].copy_from_slice(&plan.input_mask);
            }
            let input_mask = Arc::new(input_mask);
            let target = Arc::new(values.clone());

            let mut tape = Tape::<f32>::new();
            let bound = model.bind(&mut tape, Trainable::All);
            let x = tape.leaf(values, &[batch, t, n], false);
            let e = model.forward_embed(&mut tape, &bound, x, input_mask.clone(), batch);
            let h = model.forward_encode(&mut tape, &bound, e, &valid, batch);
            let pred = model.forward_reconstruct(&mut tape, &bound, h);
            let loss = pretrain_loss(&mut tape, pred, target, input_mask.clone())?;
            tape.backward(loss)?;
            model.apply_step(&mut opt, &tape, &bound);

            let targets = input_mask.iter().filter(|&&m| m).count() as u64;
            loss_sum += tape.scalar(loss) as f64 * targets as f64;
            target_sum += targets;
        }
        epoch_losses.push(loss_sum / target_sum.max(1) as f64);
    }

    let per_fsu = evaluate_per_fsu(&model, dataset, schema, cfg)?;
    Ok(PretrainResult {
        model,
        epoch_losses,
        per_fsu,
    })
}

/// Reconstruction quality per column after training: a fresh deterministic
/// mask pass over the whole dataset without updates.
pub fn evaluate_per_fsu(
    model: &ModelState,
    dataset: &DatasetFile,
    schema: &FsuSchema,
    cfg: &PretrainConfig,
) -> Result<Vec<PerFsuLoss>, PretrainError> {
    let (t, n) = (dataset.t, dataset.n);
    let names: Vec<String> = schema
        .column_names(cfg.column_set())
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut all_pred = Vec::with_capacity(dataset.len() * t * n);
    let mut all_target = Vec::with_capacity(dataset.len() * t * n);
    let mut all_mask = Vec::with_capacity(dataset.len() * t * n);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(64) {
        let (mut values, valid, _) = dataset.batch_values(chunk);
        model.apply_column_zeroing(&mut values);
        let batch = chunk.len();
        let mut input_mask = vec![false; batch * t * n];
        for (bi, &rec_idx) in chunk.iter().enumerate() {
            let rec = &dataset.records[rec_idx];
            let mut rng = crate::rng::substream(cfg.seed, &[0xE7A1, rec.flow_id]);
            let plan = sample_mask(&rec.valid, n, cfg.p_packet, cfg.p_field, &mut rng);
            input_mask[bi * t * n..(bi + 1) * t * n].copy_from_slice(&plan.input_mask);
        }
        let input_mask = Arc::new(input_mask);
        let mut tape = Tape::<f32>::new();
        let bound = model.bind(&mut tape, Trainable::None);
        let x = tape.leaf(values.clone(), &[batch, t, n], false);
        let e = model.forward_embed(&mut tape, &bound, x, input_mask.clone(), batch);
        let h = model.forward_encode(&mut tape, &bound, e, &valid, batch);
        let pred = model.forward_reconstruct(&mut tape, &bound, h);
        tape.assert_finite()?;
        all_pred.extend_from_slice(tape.value(pred));
        all_target.extend_from_slice(&values);
        all_mask.extend_from_slice(&input_mask);
    }
    Ok(per_fsu_loss(&all_pred, &all_target, &all_mask, n, &names))
}
