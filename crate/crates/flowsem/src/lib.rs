//! Protocol-native tabular pretraining for encrypted traffic flows.
//!
//! The pipeline turns packet captures into per-flow tables of Flow Semantic
//! Units (FSUs) — one row per packet, one column per protocol field or
//! capture-time metadatum — and pretrains a dual-axis transformer by masked
//! reconstruction over those tables. Downstream quality is measured with
//! frozen-encoder probing, and the learned embedding space is inspected with
//! geometry and gradient-attribution reports.
//!
//! Modules follow the pipeline order:
//!
//! * [`capture`] — pcap/pcapng reading, protocol filtering, IP anonymization,
//!   5-tuple flow assembly.
//! * [`schema`] — the FSU catalog: extraction rules, predictability classes,
//!   type-specific normalization.
//! * [`dataset`] — fixed-shape flow tables, the binary dataset format,
//!   splits, and the synthetic corpus generator.
//! * [`autodiff`] — a small dense-tensor engine with reverse-mode gradients
//!   and an AdamW optimizer.
//! * [`model`] — FSU-specific embeddings, dual-axis transformer blocks,
//!   reconstruction and classification heads, checkpoints.
//! * [`pretrain`] — dual Bernoulli masking and the masked-reconstruction
//!   training loop.
//! * [`evaluate`] — frozen probing, fine-tuning, classification metrics,
//!   label-efficiency sweeps.
//! * [`analysis`] — embedding-space geometry, FSU importance attribution,
//!   the split-gain forest oracle, Spearman correlation.
//! * [`cli`] — the operator-facing command surface used by the `flowsem`
//!   binary and the runnable examples.

pub mod analysis;
pub mod autodiff;
pub mod capture;
pub mod cli;
pub mod dataset;
pub mod evaluate;
pub mod hash;
pub mod model;
pub mod pretrain;
pub mod rng;
pub mod schema;

pub use schema::FsuSchema;
