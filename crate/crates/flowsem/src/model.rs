//! The FlowSem-MAE network: per-FSU value embeddings with dual positional
//! encodings, a stack of dual-axis transformer blocks (time-axis attention,
//! FSU-axis attention, two feed-forward sublayers, pre-layer-norm residuals),
//! a bank of per-FSU reconstruction heads, and an MLP classification head
//! over the mean-pooled flow representation.
//!
//! Parameters live in a flat named table so the optimizer, checkpoints, and
//! the frozen-encoder digest all walk the same list; a small index struct
//! gives the forward pass structured access.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    multihead_attention, AdamW, AttnParams, EmbedSpec, KeyMask, Real, Tape, Var,
};
use crate::hash::{crc32, hex32, sha256};

const CHECKPOINT_MAGIC: &[u8; 8] = b"FSMAE001";
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad hyperparameters: {0}")]
    BadHyper(String),
    #[error("checkpoint schema hash {found} does not match expected {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters. Defaults are desk-scale; everything is
/// overridable from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width d.
    pub dim: usize,
    /// Number of dual-axis blocks L.
    pub layers: usize,
    /// Attention heads per axis.
    pub heads: usize,
    /// Packets per flow T.
    pub t: usize,
    /// FSU columns N.
    pub n_fsus: usize,
    /// Classification head output width C.
    pub classes: usize,
    /// Ablation: one shared value embedder instead of per-FSU embedders.
    pub shared_embedding: bool,
    /// Ablation: these input columns are zeroed before embedding, in every
    /// path that feeds the model.
    pub zeroed_columns: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 4,
            heads: 4,
            t: 10,
            n_fsus: 41,
            classes: 2,
            shared_embedding: false,
            zeroed_columns: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(ModelError::BadHyper(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 || self.t == 0 || self.n_fsus == 0 || self.classes == 0 {
            return Err(ModelError::BadHyper(
                "layers, t, n_fsus and classes must be positive".into(),
            ));
        }
        if self.zeroed_columns.iter().any(|&c| c >= self.n_fsus) {
            return Err(ModelError::BadHyper("zeroed column out of range".into()));
        }
        Ok(())
    }

    /// Embedder rows: 1 in shared mode, N otherwise.
    pub fn embedder_rows(&self) -> usize {
        if self.shared_embedding {
            1
        } else {
            self.n_fsus
        }
    }

    /// Closed-form parameter count, derived from the shapes alone. The
    /// parameter table must sum to exactly this.
    pub fn expected_param_count(&self) -> usize {
        let (d, n, t, c) = (self.dim, self.n_fsus, self.t, self.classes);
        let k = self.embedder_rows();
        let embed = k * d + k * d + d + n * d + t * d;
        let attn = 4 * d * d + 4 * d;
        let ffn = d * 4 * d + 4 * d + 4 * d * d + d;
        let ln = 2 * d;
        let block = 2 * attn + 2 * ffn + 4 * ln;
        let decoder = n * d + n;
        let head = d * d + d + d * c + c;
        embed + self.layers * block + decoder + head
    }
}

/// One named parameter array.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    /// Weight decay applies (matrices yes; biases, norms, embeddings no).
    pub decay: bool,
    /// Part of the encoder for the frozen contract (embedders + blocks).
    pub encoder: bool,
}

#[derive(Debug, Clone, Copy)]
struct AttnIndex {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfnIndex {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct LnIndex {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockIndex {
    ln_time: LnIndex,
    time_attn: AttnIndex,
    ln_ffn1: LnIndex,
    ffn1: FfnIndex,
    ln_fsu: LnIndex,
    fsu_attn: AttnIndex,
    ln_ffn2: LnIndex,
    ffn2: FfnIndex,
}

#[derive(Debug, Clone)]
struct ParamIndex {
    embed_w: usize,
    embed_b: usize,
    mask_token: usize,
    fsu_pos: usize,
    time_pos: usize,
    blocks: Vec<BlockIndex>,
    dec_w: usize,
    dec_c: usize,
    head_w1: usize,
    head_b1: usize,
    head_w2: usize,
    head_b2: usize,
}

/// Full model state: hyperparameters, identity, and the parameter table.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub hyper: ModelConfig,
    pub schema_hash: [u8; 32],
    pub seed: u64,
    pub class_names: Vec<String>,
    params: Vec<Param>,
    index: ParamIndex,
    embed_index_map: Arc<Vec<usize>>,
}

/// Which parameters receive gradients when bound to a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    HeadOnly,
    None,
}

/// Tape handles for one bound model, parallel to the parameter table.
pub struct BoundModel {
    vars: Vec<Var>,
}

/// One batch of flow tables ready for the forward pass.
pub struct BatchInput<E> {
    /// `[batch, t, n]` normalized values, already column-zeroed per ablation.
    pub x: Vec<E>,
    /// `[batch * t]` validity (prefix) mask.
    pub valid: Arc<Vec<bool>>,
    /// `[batch * t * n]`, true where hidden from the encoder; all false for
    /// classification passes.
    pub input_mask: Arc<Vec<bool>>,
    pub batch: usize,
}

impl ModelState {
    /// Seeded initialization: truncated normal (std 0.02, clipped at two
    /// standard deviations) for weights and learned encodings, zeros for
    /// biases, ones for layer-norm gains.
    pub fn init(
        seed: u64,
        hyper: ModelConfig,
        schema_hash: [u8; 32],
        class_names: Vec<String>,
    ) -> Result<Self, ModelError> {
        hyper.validate()?;
        let mut rng = crate::rng::substream(seed, &[0x1217]);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid normal");
        let mut trunc = move || loop {
            let v = normal.sample(&mut rng);
            if v.abs() <= 2.0 * INIT_STD {
                return v as f32;
            }
        };

        let (d, n, t, c) = (hyper.dim, hyper.n_fsus, hyper.t, hyper.classes);
        let k = hyper.embedder_rows();
        let mut params: Vec<Param> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, decay: bool, encoder: bool, init: Init| {
            let len = shape.iter().product();
            let data = match init {
                Init::TruncNormal => (0..len).map(|_| trunc()).collect(),
                Init::Zeros => vec![0.0; len],
                Init::Ones => vec![1.0; len],
            };
            params.push(Param {
                name,
                shape,
                data,
                decay,
                encoder,
            });
            params.len() - 1
        };

        let embed_w = push("embed.w".into(), vec![k, d], false, true, Init::TruncNormal);
        let embed_b = push("embed.b".into(), vec![k, d], false, true, Init::Zeros);
        let mask_token = push("embed.mask_token".into(), vec![d], false, true, Init::TruncNormal);
        let fsu_pos = push("embed.fsu_pos".into(), vec![n, d], false, true, Init::TruncNormal);
        let time_pos = push("embed.time_pos".into(), vec![t, d], false, true, Init::TruncNormal);

        let mut blocks = Vec::with_capacity(hyper.layers);
        for l in 0..hyper.layers {
            let mut ln = |tag: &str| LnIndex {
                gain: push(format!("block{l}.{tag}.gain"), vec![d], false, true, Init::Ones),
                bias: push(format!("block{l}.{tag}.bias"), vec![d], false, true, Init::Zeros),
            };
            let ln_time = ln("ln_time");
            let mut attn = |tag: &str| AttnIndex {
                wq: push(format!("block{l}.{tag}.wq"), vec![d, d], true, true, Init::TruncNormal),
                bq: push(format!("block{l}.{tag}.bq"), vec![d], false, true, Init::Zeros),
                wk: push(format!("block{l}.{tag}.wk"), vec![d, d], true, true, Init::TruncNormal),
                bk: push(format!("block{l}.{tag}.bk"), vec![d], false, true, Init::Zeros),
                wv: push(format!("block{l}.{tag}.wv"), vec![d, d], true, true, Init::TruncNormal),
                bv: push(format!("block{l}.{tag}.bv"), vec![d], false, true, Init::Zeros),
                wo: push(format!("block{l}.{tag}.wo"), vec![d, d], true, true, Init::TruncNormal),
                bo: push(format!("block{l}.{tag}.bo"), vec![d], false, true, Init::Zeros),
            };
            let time_attn = attn("time_attn");
            let mut ln = |tag: &str| LnIndex {
                gain: push(format!("block{l}.{tag}.gain"), vec![d], false, true, Init::Ones),
                bias: push(format!("block{l}.{tag}.bias"), vec![d], false, true, Init::Zeros),
            };
            let ln_ffn1 = ln("ln_ffn1");
            let mut ffn = |tag: &str| FfnIndex {
                w1: push(format!("block{l}.{tag}.w1"), vec![d, 4 * d], true, true, Init::TruncNormal),
                b1: push(format!("block{l}.{tag}.b1"), vec![4 * d], false, true, Init::Zeros),
                w2: push(format!("block{l}.{tag}.w2"), vec![4 * d, d], true, true, Init::TruncNormal),
                b2: push(format!("block{l}.{tag}.b2"), vec![d], false, true, Init::Zeros),
            };
            let ffn1 = ffn("ffn1");
            let mut ln = |tag: &str| LnIndex {
                gain: push(format!("block{l}.{tag}.gain"), vec![d], false, true, Init::Ones),
                bias: push(format!("block{l}.{tag}.bias"), vec![d], false, true, Init::Zeros),
            };
            let ln_fsu = ln("ln_fsu");
            let mut attn = |tag: &str| AttnIndex {
                wq: push(format!("block{l}.{tag}.wq"), vec![d, d], true, true, Init::TruncNormal),
                bq: push(format!("block{l}.{tag}.bq"), vec![d], false, true, Init::Zeros),
                wk: push(format!("block{l}.{tag}.wk"), vec![d, d], true, true, Init::TruncNormal),
                bk: push(format!("block{l}.{tag}.bk"), vec![d], false, true, Init::Zeros),
                wv: push(format!("block{l}.{tag}.wv"), vec![d, d], true, true, Init::TruncNormal),
                bv: push(format!("block{l}.{tag}.bv"), vec![d], false, true, Init::Zeros),
                wo: push(format!("block{l}.{tag}.wo"), vec![d, d], true, true, Init::TruncNormal),
                bo: push(format!("block{l}.{tag}.bo"), vec![d], false, true, Init::Zeros),
            };
            let fsu_attn = attn("fsu_attn");
            let mut ln = |tag: &str| LnIndex {
                gain: push(format!("block{l}.{tag}.gain"), vec![d], false, true, Init::Ones),
                bias: push(format!("block{l}.{tag}.bias"), vec![d], false, true, Init::Zeros),
            };
            let ln_ffn2 = ln("ln_ffn2");
            let mut ffn = |tag: &str| FfnIndex {
                w1: push(format!("block{l}.{tag}.w1"), vec![d, 4 * d], true, true, Init::TruncNormal),
                b1: push(format!("block{l}.{tag}.b1"), vec![4 * d], false, true, Init::Zeros),
                w2: push(format!("block{l}.{tag}.w2"), vec![4 * d, d], true, true, Init::TruncNormal),
                b2: push(format!("block{l}.{tag}.b2"), vec![d], false, true, Init::Zeros),
            };
            let ffn2 = ffn("ffn2");

            blocks.push(BlockIndex {
                ln_time,
                time_attn,
                ln_ffn1,
                ffn1,
                ln_fsu,
                fsu_attn,
                ln_ffn2,
                ffn2,
            });
        }

        let dec_w = push("decoder.w".into(), vec![n, d], true, false, Init::TruncNormal);
        let dec_c = push("decoder.c".into(), vec![n], false, false, Init::Zeros);
        let head_w1 = push("head.w1".into(), vec![d, d], true, false, Init::TruncNormal);
        let head_b1 = push("head.b1".into(), vec![d], false, false, Init::Zeros);
        let head_w2 = push("head.w2".into(), vec![d, c], true, false, Init::TruncNormal);
        let head_b2 = push("head.b2".into(), vec![c], false, false, Init::Zeros);
        drop(push);

        let index = ParamIndex {
            embed_w,
            embed_b,
            mask_token,
            fsu_pos,
            time_pos,
            blocks,
            dec_w,
            dec_c,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
        };
        let embed_index_map = Arc::new(if hyper.shared_embedding {
            vec![0; n]
        } else {
            (0..n).collect()
        });

        let state = ModelState {
            hyper,
            schema_hash,
            seed,
            class_names,
            params,
            index,
            embed_index_map,
        };
        debug_assert_eq!(state.param_count(), state.hyper.expected_param_count());
        Ok(state)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Per-FSU value-embedding parameters `(w_k, b_k)` for column `k`,
    /// honoring shared mode.
    pub fn embedder(&self, column: usize) -> (&[f32], &[f32]) {
        let d = self.hyper.dim;
        let row = self.embed_index_map[column];
        (
            &self.params[self.index.embed_w].data[row * d..(row + 1) * d],
            &self.params[self.index.embed_b].data[row * d..(row + 1) * d],
        )
    }

    /// SHA-256 over the encoder parameter bytes, the frozen-probe contract.
    pub fn encoder_digest(&self) -> [u8; 32] {
        let mut bytes = Vec::new();
        for p in self.params.iter().filter(|p| p.encoder) {
            bytes.extend_from_slice(p.name.as_bytes());
            for v in &p.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        sha256(&bytes)
    }

    /// Replaces the classification head with a freshly initialized one of
    /// `classes` outputs; used when probing a pretrained encoder on a new
    /// label set.
    pub fn reset_head(&mut self, classes: usize, seed: u64, class_names: Vec<String>) {
        let d = self.hyper.dim;
        let mut rng = crate::rng::substream(seed, &[0x4EAD]);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid normal");
        let mut trunc = move || loop {
            let v = normal.sample(&mut rng);
            if v.abs() <= 2.0 * INIT_STD {
                return v as f32;
            }
        };
        self.hyper.classes = classes;
        self.class_names = class_names;
        let w1 = &mut self.params[self.index.head_w1];
        w1.data = (0..d * d).map(|_| trunc()).collect();
        self.params[self.index.head_b1].data = vec![0.0; d];
        let w2 = &mut self.params[self.index.head_w2];
        w2.shape = vec![d, classes];
        w2.data = (0..d * classes).map(|_| trunc()).collect();
        let b2 = &mut self.params[self.index.head_b2];
        b2.shape = vec![classes];
        b2.data = vec![0.0; classes];
    }

    /// Zeroes ablated columns of a `[batch, t, n]` value buffer in place.
    pub fn apply_column_zeroing<E: Real>(&self, x: &mut [E]) {
        if self.hyper.zeroed_columns.is_empty() {
            return;
        }
        let n = self.hyper.n_fsus;
        for (i, v) in x.iter_mut().enumerate() {
            if self.hyper.zeroed_columns.contains(&(i % n)) {
                *v = E::ZERO;
            }
        }
    }

    // -- binding and forward ---------------------------------------------------

    /// Pushes every parameter onto the tape as a leaf, converting to the
    /// tape's element type. `trainable` controls which leaves require grad.
    pub fn bind<E: Real>(&self, tape: &mut Tape<E>, trainable: Trainable) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let rg = match trainable {
                    Trainable::All => true,
                    Trainable::HeadOnly => p.name.starts_with("head."),
                    Trainable::None => false,
                };
                let data: Vec<E> = p.data.iter().map(|&v| E::from_f64(v as f64)).collect();
                tape.leaf(data, &p.shape, rg)
            })
            .collect();
        BoundModel { vars }
    }

    /// Embeds a batch: value embeddings (mask token at hidden cells) plus
    /// positional encodings. `x` must already be a tape leaf of shape
    /// `[batch, t, n]`.
    pub fn forward_embed<E: Real>(
        &self,
        tape: &mut Tape<E>,
        bound: &BoundModel,
        x: Var,
        input_mask: Arc<Vec<bool>>,
        batch: usize,
    ) -> Var {
        let ix = &self.index;
        let spec = EmbedSpec {
            batch,
            t: self.hyper.t,
            n: self.hyper.n_fsus,
            dim: self.hyper.dim,
            index_map: self.embed_index_map.clone(),
            input_mask,
        };
        tape.embed(
            x,
            bound.vars[ix.embed_w],
            bound.vars[ix.embed_b],
            bound.vars[ix.mask_token],
            bound.vars[ix.fsu_pos],
            bound.vars[ix.time_pos],
            spec,
        )
    }

    /// Applies the dual-axis blocks. Time-axis attention attends across
    /// valid packets within each FSU column; FSU-axis attention attends
    /// across columns within each packet. Residuals use pre-layer-norm
    /// ordering throughout.
    pub fn forward_encode<E: Real>(
        &self,
        tape: &mut Tape<E>,
        bound: &BoundModel,
        e: Var,
        valid: &Arc<Vec<bool>>,
        batch: usize,
    ) -> Var {
        let (t, n, d, heads) = (
            self.hyper.t,
            self.hyper.n_fsus,
            self.hyper.dim,
            self.hyper.heads,
        );
        let time_mask = KeyMask {
            allowed: valid.clone(),
            entries: batch,
        };
        let attn_params = |bound: &BoundModel, ix: AttnIndex| AttnParams {
            wq: bound.vars[ix.wq],
            bq: bound.vars[ix.bq],
            wk: bound.vars[ix.wk],
            bk: bound.vars[ix.bk],
            wv: bound.vars[ix.wv],
            bv: bound.vars[ix.bv],
            wo: bound.vars[ix.wo],
            bo: bound.vars[ix.bo],
        };

        let mut h = e;
        for block in &self.index.blocks {
            // Time axis: [b, t, n, d] -> [b*n, t, d].
            let x = tape.layer_norm(
                h,
                bound.vars[block.ln_time.gain],
                bound.vars[block.ln_time.bias],
                1e-5,
            );
            let x = tape.transpose12(x);
            let x = tape.reshape(x, &[batch * n, t, d]);
            let a = multihead_attention(
                tape,
                x,
                x,
                x,
                heads,
                &attn_params(bound, block.time_attn),
                Some(&time_mask),
            );
            let a = tape.reshape(a, &[batch, n, t, d]);
            let a = tape.transpose12(a);
            h = tape.add(h, a);

            h = self.ffn(tape, bound, h, block.ln_ffn1, block.ffn1, batch);

            // FSU axis: [b, t, n, d] -> [b*t, n, d]; padded packets attend
            // among themselves only, and nothing downstream reads them.
            let x = tape.layer_norm(
                h,
                bound.vars[block.ln_fsu.gain],
                bound.vars[block.ln_fsu.bias],
                1e-5,
            );
            let x = tape.reshape(x, &[batch * t, n, d]);
            let a = multihead_attention(
                tape,
                x,
                x,
                x,
                heads,
                &attn_params(bound, block.fsu_attn),
                None,
            );
            let a = tape.reshape(a, &[batch, t, n, d]);
            h = tape.add(h, a);

            h = self.ffn(tape, bound, h, block.ln_ffn2, block.ffn2, batch);
        }
        h
    }

    fn ffn<E: Real>(
        &self,
        tape: &mut Tape<E>,
        bound: &BoundModel,
        h: Var,
        ln: LnIndex,
        ffn: FfnIndex,
        batch: usize,
    ) -> Var {
        let (t, n, d) = (self.hyper.t, self.hyper.n_fsus, self.hyper.dim);
        let x = tape.layer_norm(h, bound.vars[ln.gain], bound.vars[ln.bias], 1e-5);
        let x = tape.linear(x, bound.vars[ffn.w1], Some(bound.vars[ffn.b1]));
        let x = tape.gelu(x);
        let x = tape.linear(x, bound.vars[ffn.w2], Some(bound.vars[ffn.b2]));
        let x = tape.reshape(x, &[batch, t, n, d]);
        tape.add(h, x)
    }

    /// Per-FSU reconstruction of the full table from encoder output.
    pub fn forward_reconstruct<E: Real>(
        &self,
        tape: &mut Tape<E>,
        bound: &BoundModel,
        h: Var,
    ) -> Var {
        tape.decode_heads(h, bound.vars[self.index.dec_w], bound.vars[self.index.dec_c])
    }

    /// Mean-pools valid positions and applies the MLP head.
    pub fn forward_classify<E: Real>(
        &self,
        tape: &mut Tape<E>,
        bound: &BoundModel,
        h: Var,
        valid: &Arc<Vec<bool>>,
    ) -> Var {
        let z = tape.mean_pool(h, valid.clone());
        self.forward_head(tape, bound, z)
    }

    /// The MLP head alone, for probing over precomputed pooled features.
    pub fn forward_head<E: Real>(&self, tape: &mut Tape<E>, bound: &BoundModel, z: Var) -> Var {
        let z = tape.linear(
            z,
            bound.vars[self.index.head_w1],
            Some(bound.vars[self.index.head_b1]),
        );
        let z = tape.gelu(z);
        tape.linear(
            z,
            bound.vars[self.index.head_w2],
            Some(bound.vars[self.index.head_b2]),
        )
    }

    /// One optimizer step from the gradients on a bound tape. Parameters
    /// without gradients (not trained, or unused by the loss) are skipped.
    pub fn apply_step(&mut self, opt: &mut AdamW, tape: &Tape<f32>, bound: &BoundModel) {
        opt.begin_step();
        for (i, param) in self.params.iter_mut().enumerate() {
            if let Some(grad) = tape.grad(bound.vars[i]) {
                opt.update(i, &mut param.data, grad, param.decay);
            }
        }
    }

    pub fn optimizer(&self, cfg: crate::autodiff::AdamWConfig) -> AdamW {
        let sizes: Vec<usize> = self.params.iter().map(|p| p.data.len()).collect();
        AdamW::new(cfg, &sizes)
    }

    // -- checkpoints --------------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), ModelError> {
        out.write_all(CHECKPOINT_MAGIC)?;
        let header = CheckpointHeader {
            hyper: self.hyper.clone(),
            schema_hash: hex32(&self.schema_hash),
            seed: self.seed,
            class_names: self.class_names.clone(),
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serializes");
        out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        out.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            out.write_all(&(p.name.len() as u32).to_le_bytes())?;
            out.write_all(p.name.as_bytes())?;
            out.write_all(&(p.shape.len() as u32).to_le_bytes())?;
            for &dim in &p.shape {
                out.write_all(&(dim as u32).to_le_bytes())?;
            }
            let mut data = Vec::with_capacity(p.data.len() * 4);
            for v in &p.data {
                data.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&data)?;
            out.write_all(&crc32(&data).to_le_bytes())?;
        }
        Ok(())
    }

    /// Loads a checkpoint, verifying per-parameter checksums. The schema
    /// hash must match `expected_schema` unless `force` is set.
    pub fn load(
        path: &Path,
        expected_schema: Option<[u8; 32]>,
        force: bool,
    ) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut &bytes[..], expected_schema, force)
    }

    pub fn read<R: Read>(
        input: &mut R,
        expected_schema: Option<[u8; 32]>,
        force: bool,
    ) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::BadCheckpoint("bad magic".into()));
        }
        let header_len = read_u32(input)? as usize;
        let mut header_bytes = vec![0u8; header_len];
        input.read_exact(&mut header_bytes)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| ModelError::BadCheckpoint(format!("header: {e}")))?;
        let schema_hash = parse_hex32(&header.schema_hash)
            .ok_or_else(|| ModelError::BadCheckpoint("bad schema hash".into()))?;
        if let Some(expected) = expected_schema {
            if schema_hash != expected && !force {
                return Err(ModelError::SchemaMismatch {
                    expected: hex32(&expected),
                    found: header.schema_hash.clone(),
                });
            }
        }

        // Rebuild the table skeleton from the hyperparameters, then fill
        // data from the file by name.
        let mut state = ModelState::init(
            header.seed,
            header.hyper.clone(),
            schema_hash,
            header.class_names.clone(),
        )?;
        let n_params = read_u32(input)? as usize;
        if n_params != state.params.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "parameter count {n_params} does not match architecture ({})",
                state.params.len()
            )));
        }
        for i in 0..n_params {
            let name_len = read_u32(input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| ModelError::BadCheckpoint("non-utf8 parameter name".into()))?;
            let ndim = read_u32(input)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(input)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = vec![0u8; len * 4];
            input.read_exact(&mut data)?;
            let stored_crc = read_u32(input)?;
            if crc32(&data) != stored_crc {
                return Err(ModelError::BadCheckpoint(format!(
                    "checksum mismatch for {name}"
                )));
            }
            let slot = &mut state.params[i];
            if slot.name != name || slot.shape != shape {
                return Err(ModelError::BadCheckpoint(format!(
                    "parameter {i} is {name} {shape:?}, expected {} {:?}",
                    slot.name, slot.shape
                )));
            }
            slot.data = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
        }
        Ok(state)
    }
}

enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    hyper: ModelConfig,
    schema_hash: String,
    seed: u64,
    class_names: Vec<String>,
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn parse_hex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16)?;
        let lo = (chunk[1] as char).to_digit(16)?;
        out[i] = (hi * 16 + lo) as u8;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            dim: 8,
            layers: 2,
            heads: 2,
            t: 4,
            n_fsus: 5,
            classes: 3,
            ..ModelConfig::default()
        }
    }

    fn state() -> ModelState {
        ModelState::init(
            7,
            small_config(),
            [0u8; 32],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    fn random_batch(state: &ModelState, batch: usize, seed: u64) -> BatchInput<f32> {
        let (t, n) = (state.hyper.t, state.hyper.n_fsus);
        let mut rng = crate::rng::substream(seed, &[0xBA7C4]);
        let x: Vec<f32> = (0..batch * t * n).map(|_| rng.gen::<f32>()).collect();
        BatchInput {
            x,
            valid: Arc::new(vec![true; batch * t]),
            input_mask: Arc::new(vec![false; batch * t * n]),
            batch,
        }
    }

    fn encode_batch(state: &ModelState, input: &BatchInput<f32>) -> Vec<f32> {
        let mut tape = Tape::<f32>::new();
        let bound = state.bind(&mut tape, Trainable::None);
        let x = tape.leaf(
            input.x.clone(),
            &[input.batch, state.hyper.t, state.hyper.n_fsus],
            false,
        );
        let e = state.forward_embed(&mut tape, &bound, x, input.input_mask.clone(), input.batch);
        let h = state.forward_encode(&mut tape, &bound, e, &input.valid, input.batch);
        tape.value(h).to_vec()
    }

    #[test]
    fn bad_hyper_rejected() {
        let cfg = ModelConfig {
            dim: 65,
            heads: 4,
            ..ModelConfig::default()
        };
        assert!(matches!(
            ModelState::init(1, cfg, [0; 32], vec![]),
            Err(ModelError::BadHyper(_))
        ));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = state();
        let b = state();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data, pb.data, "{}", pa.name);
        }
        let c = ModelState::init(8, small_config(), [0; 32], vec![]).unwrap();
        assert_ne!(a.params()[0].data, c.params()[0].data);
    }

    #[test]
    fn param_count_matches_closed_form() {
        let s = state();
        assert_eq!(s.param_count(), s.hyper.expected_param_count());

        let full = ModelState::init(1, ModelConfig::default(), [0; 32], vec![]).unwrap();
        assert_eq!(full.param_count(), full.hyper.expected_param_count());

        let shared = ModelState::init(
            1,
            ModelConfig {
                shared_embedding: true,
                ..small_config()
            },
            [0; 32],
            vec![],
        )
        .unwrap();
        assert_eq!(shared.param_count(), shared.hyper.expected_param_count());
        assert!(shared.param_count() < s.param_count());
    }

    #[test]
    fn embed_specific_vs_shared() {
        // Isolate the value-embedding component by zeroing the positional
        // tables, then compare cells bitwise through the real forward path.
        let (t, n, d) = (small_config().t, small_config().n_fsus, small_config().dim);
        let value_embed = |state: &ModelState, x: &[f32], col: usize| -> Vec<f32> {
            let mut state = state.clone();
            for p in &mut state.params {
                if p.name == "embed.fsu_pos" || p.name == "embed.time_pos" {
                    p.data.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let mut tape = Tape::<f32>::new();
            let bound = state.bind(&mut tape, Trainable::None);
            let xv = tape.leaf(x.to_vec(), &[1, t, n], false);
            let e = state.forward_embed(&mut tape, &bound, xv, Arc::new(vec![false; t * n]), 1);
            tape.value(e)[col * d..(col + 1) * d].to_vec()
        };

        let mut x = vec![0.0f32; t * n];
        x[0] = 0.5;
        x[1] = 0.5;
        // FSU-specific: same value, different columns, different embeddings.
        let s = state();
        assert_ne!(value_embed(&s, &x, 0), value_embed(&s, &x, 1));

        // Shared mode: identical value embeddings, exactly.
        let shared = ModelState::init(
            7,
            ModelConfig {
                shared_embedding: true,
                ..small_config()
            },
            [0; 32],
            vec![],
        )
        .unwrap();
        assert_eq!(value_embed(&shared, &x, 0), value_embed(&shared, &x, 1));
    }

    #[test]
    fn embed_zero_input_is_bias_plus_positions() {
        let s = state();
        let (t, n, d) = (s.hyper.t, s.hyper.n_fsus, s.hyper.dim);
        let mut tape = Tape::<f32>::new();
        let bound = s.bind(&mut tape, Trainable::None);
        let x = tape.leaf(vec![0.0; t * n], &[1, t, n], false);
        let e = s.forward_embed(&mut tape, &bound, x, Arc::new(vec![false; t * n]), 1);
        let b = &s.params()[s.index.embed_b];
        let p = &s.params()[s.index.fsu_pos];
        let q = &s.params()[s.index.time_pos];
        for ti in 0..t {
            for ni in 0..n {
                for j in 0..d {
                    let got = tape.value(e)[(ti * n + ni) * d + j];
                    let want = b.data[ni * d + j] + p.data[ni * d + j] + q.data[ti * d + j];
                    assert!((got - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn encode_preserves_shape_and_is_identity_with_zeroed_weights() {
        let mut s = state();
        let input = random_batch(&s, 2, 3);
        let out = encode_batch(&s, &input);
        assert_eq!(out.len(), 2 * s.hyper.t * s.hyper.n_fsus * s.hyper.dim);

        // Zero every attention output projection and FFN second layer: each
        // sublayer then contributes nothing and the blocks reduce to the
        // residual identity on the embeddings.
        for p in &mut s.params {
            if p.name.starts_with("block")
                && (p.name.ends_with(".wo")
                    || p.name.ends_with(".bo")
                    || p.name.ends_with(".w2")
                    || p.name.ends_with(".b2"))
            {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::<f32>::new();
        let bound = s.bind(&mut tape, Trainable::None);
        let x = tape.leaf(input.x.clone(), &[2, s.hyper.t, s.hyper.n_fsus], false);
        let e = s.forward_embed(&mut tape, &bound, x, input.input_mask.clone(), 2);
        let h = s.forward_encode(&mut tape, &bound, e, &input.valid, 2);
        assert_eq!(tape.value(e), tape.value(h));
    }

    #[test]
    fn padded_rows_do_not_leak_into_valid_positions() {
        let s = state();
        let (t, n) = (s.hyper.t, s.hyper.n_fsus);
        let valid: Arc<Vec<bool>> = Arc::new(vec![true, true, false, false]);
        let mut x1 = vec![0.25f32; t * n];
        let mut x2 = x1.clone();
        // Scribble different garbage over the two padded rows.
        for ni in 0..n {
            x1[2 * n + ni] = 0.9;
            x2[2 * n + ni] = 0.1;
            x1[3 * n + ni] = 0.7;
            x2[3 * n + ni] = 0.3;
        }
        let make = |x: Vec<f32>| BatchInput {
            x,
            valid: valid.clone(),
            input_mask: Arc::new(vec![false; t * n]),
            batch: 1,
        };
        let h1 = encode_batch(&s, &make(x1));
        let h2 = encode_batch(&s, &make(x2));
        let d = s.hyper.dim;
        for ti in 0..2 {
            for ni in 0..n {
                for j in 0..d {
                    let idx = (ti * n + ni) * d + j;
                    assert_eq!(h1[idx], h2[idx], "valid cell ({ti},{ni},{j}) changed");
                }
            }
        }
    }

    #[test]
    fn time_attention_does_not_mix_columns() {
        // With FSU attention and FFNs silenced, a perturbation in column i
        // must stay in column i.
        let mut s = state();
        for p in &mut s.params {
            let silence = (p.name.contains("fsu_attn")
                && (p.name.ends_with(".wo") || p.name.ends_with(".bo")))
                || (p.name.contains("ffn")
                    && (p.name.ends_with(".w2") || p.name.ends_with(".b2")));
            if silence {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (t, n, d) = (s.hyper.t, s.hyper.n_fsus, s.hyper.dim);
        let base = random_batch(&s, 1, 5);
        let h_base = encode_batch(&s, &base);
        let mut pert = base.x.clone();
        let col = 2;
        for ti in 0..t {
            pert[ti * n + col] += 0.33;
        }
        let h_pert = encode_batch(
            &s,
            &BatchInput {
                x: pert,
                valid: base.valid.clone(),
                input_mask: base.input_mask.clone(),
                batch: 1,
            },
        );
        for ti in 0..t {
            for ni in 0..n {
                let range = ((ti * n + ni) * d)..((ti * n + ni + 1) * d);
                let same = h_base[range.clone()] == h_pert[range];
                if ni == col {
                    assert!(!same, "perturbed column should change at ({ti},{ni})");
                } else {
                    assert!(same, "column {ni} changed though only {col} was perturbed");
                }
            }
        }
    }

    #[test]
    fn fsu_attention_does_not_mix_packets() {
        let mut s = state();
        for p in &mut s.params {
            let silence = (p.name.contains("time_attn")
                && (p.name.ends_with(".wo") || p.name.ends_with(".bo")))
                || (p.name.contains("ffn")
                    && (p.name.ends_with(".w2") || p.name.ends_with(".b2")));
            if silence {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (t, n, d) = (s.hyper.t, s.hyper.n_fsus, s.hyper.dim);
        let base = random_batch(&s, 1, 6);
        let h_base = encode_batch(&s, &base);
        let mut pert = base.x.clone();
        let row = 1;
        for ni in 0..n {
            pert[row * n + ni] += 0.21;
        }
        let h_pert = encode_batch(
            &s,
            &BatchInput {
                x: pert,
                valid: base.valid.clone(),
                input_mask: base.input_mask.clone(),
                batch: 1,
            },
        );
        for ti in 0..t {
            let range = (ti * n * d)..((ti + 1) * n * d);
            if ti == row {
                assert_ne!(h_base[range.clone()], h_pert[range]);
            } else {
                assert_eq!(h_base[range.clone()], h_pert[range], "packet {ti} leaked");
            }
        }
    }

    #[test]
    fn classify_shapes_and_single_packet_pooling() {
        let s = state();
        let (t, n, d) = (s.hyper.t, s.hyper.n_fsus, s.hyper.dim);
        let mut tape = Tape::<f32>::new();
        let bound = s.bind(&mut tape, Trainable::None);
        let input = random_batch(&s, 1, 9);
        let valid: Arc<Vec<bool>> = Arc::new({
            let mut v = vec![false; t];
            v[0] = true;
            v
        });
        let x = tape.leaf(input.x.clone(), &[1, t, n], false);
        let e = s.forward_embed(&mut tape, &bound, x, input.input_mask.clone(), 1);
        let h = s.forward_encode(&mut tape, &bound, e, &valid, 1);
        let logits = s.forward_classify(&mut tape, &bound, h, &valid);
        assert_eq!(tape.shape(logits), &[1, s.hyper.classes]);

        // z equals the mean over the single valid packet's N positions.
        let hvals = tape.value(h).to_vec();
        let mut z = vec![0.0f32; d];
        for ni in 0..n {
            for j in 0..d {
                z[j] += hvals[ni * d + j];
            }
        }
        z.iter_mut().for_each(|v| *v /= n as f32);
        let zvar = tape.mean_pool(h, valid.clone());
        for (a, b) in tape.value(zvar).iter().zip(&z) {
            assert!((a - b).abs() < 1e-5);
        }
        let recon = s.forward_reconstruct(&mut tape, &bound, h);
        assert_eq!(tape.shape(recon), &[1, t, n]);
    }

    #[test]
    fn checkpoint_round_trip_and_schema_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut s = state();
        s.schema_hash = [7u8; 32];
        s.save(&path).unwrap();

        let loaded = ModelState::load(&path, Some([7u8; 32]), false).unwrap();
        assert_eq!(loaded.hyper, s.hyper);
        assert_eq!(loaded.class_names, s.class_names);
        for (a, b) in loaded.params().iter().zip(s.params()) {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
        assert_eq!(loaded.encoder_digest(), s.encoder_digest());

        let err = ModelState::load(&path, Some([8u8; 32]), false);
        assert!(matches!(err, Err(ModelError::SchemaMismatch { .. })));
        assert!(ModelState::load(&path, Some([8u8; 32]), true).is_ok());

        // Corrupt one parameter byte: the checksum must catch it.
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 0xFF;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            ModelState::load(&path, None, false),
            Err(ModelError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn column_zeroing_applies_to_listed_columns() {
        let mut cfg = small_config();
        cfg.zeroed_columns = vec![1, 3];
        let s = ModelState::init(2, cfg, [0; 32], vec![]).unwrap();
        let n = s.hyper.n_fsus;
        let mut x = vec![1.0f32; 2 * s.hyper.t * n];
        s.apply_column_zeroing(&mut x);
        for (i, v) in x.iter().enumerate() {
            if i % n == 1 || i % n == 3 {
                assert_eq!(*v, 0.0);
            } else {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn head_reset_changes_class_count_only() {
        let mut s = state();
        let digest_before = s.encoder_digest();
        s.reset_head(5, 99, vec!["w".into(); 5]);
        assert_eq!(s.hyper.classes, 5);
        assert_eq!(s.encoder_digest(), digest_before);
        assert_eq!(s.params()[s.index.head_w2].shape, vec![s.hyper.dim, 5]);
        assert_eq!(s.param_count(), s.hyper.expected_param_count());
    }
}
