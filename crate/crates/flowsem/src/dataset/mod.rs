//! Fixed-shape flow tables and dataset files.
//!
//! A flow becomes a `T x N` float32 table: the first `T` packets, parsed and
//! normalized, projected onto the schema's model columns, zero-padded with a
//! prefix validity mask when the flow is shorter. Tables persist in a
//! bit-exact binary format with per-record checksums, and split
//! deterministically for training.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::capture::Flow;
use crate::schema::{normalize_and_project, parse_packet, ColumnSet, FsuSchema, ParseContext};

mod format;
pub mod synth;

pub use synth::{synth_corpus, write_pcap, ClassSpec, Protocol, SynthOutput, SynthSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("flow has no packets")]
    EmptyFlow,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("class {class:?} has only {available} samples, too few for the requested split")]
    ClassTooSmall { class: String, available: usize },
    #[error("bad split ratios: {0}")]
    BadRatios(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One flow as a fixed-shape normalized table.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    /// `t * n` row-major normalized values; padded rows are all zero.
    pub values: Vec<f32>,
    /// Prefix validity mask of length `t`.
    pub valid: Vec<bool>,
    /// Class index, if labeled.
    pub label: Option<u32>,
    pub flow_id: u64,
}

impl FlowTable {
    /// Structural invariants: prefix validity with at least one valid row,
    /// values in `[0, 1]`, zeroed padding.
    pub fn check(&self, t: usize, n: usize) -> Result<(), DatasetError> {
        if self.valid.len() != t || self.values.len() != t * n {
            return Err(DatasetError::ShapeMismatch(format!(
                "table is {}x{} values / {} valid, expected {t}x{n}",
                self.values.len() / n.max(1),
                n,
                self.valid.len()
            )));
        }
        let mut seen_invalid = false;
        for (ti, &v) in self.valid.iter().enumerate() {
            if v && seen_invalid {
                return Err(DatasetError::Corrupt("validity mask is not a prefix".into()));
            }
            if !v {
                seen_invalid = true;
                if self.values[ti * n..(ti + 1) * n].iter().any(|&x| x != 0.0) {
                    return Err(DatasetError::Corrupt("padded row has nonzero values".into()));
                }
            }
        }
        if !self.valid[0] {
            return Err(DatasetError::Corrupt("no valid rows".into()));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DatasetError::Corrupt("value outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// An in-memory dataset: homogeneous tables plus identity metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub version: u32,
    pub t: usize,
    pub n: usize,
    pub schema_hash: [u8; 32],
    pub class_names: Vec<String>,
    pub records: Vec<FlowTable>,
}

impl DatasetFile {
    pub fn new(t: usize, n: usize, schema_hash: [u8; 32], class_names: Vec<String>) -> Self {
        DatasetFile {
            version: 1,
            t,
            n,
            schema_hash,
            class_names,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        format::write(self, path)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        format::to_bytes(self)
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        format::read(path)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        format::from_bytes(bytes)
    }

    /// Bulk view used by training: values `[len, t, n]`, validity
    /// `[len, t]`, labels where present.
    pub fn batch_values(&self, indices: &[usize]) -> (Vec<f32>, Arc<Vec<bool>>, Vec<Option<u32>>) {
        let mut values = Vec::with_capacity(indices.len() * self.t * self.n);
        let mut valid = Vec::with_capacity(indices.len() * self.t);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = &self.records[i];
            values.extend_from_slice(&r.values);
            valid.extend_from_slice(&r.valid);
            labels.push(r.label);
        }
        (values, Arc::new(valid), labels)
    }

    fn with_records(&self, records: Vec<FlowTable>) -> DatasetFile {
        DatasetFile {
            version: self.version,
            t: self.t,
            n: self.n,
            schema_hash: self.schema_hash,
            class_names: self.class_names.clone(),
            records,
        }
    }
}

/// Samples the first `t` packets of a flow into a normalized table.
/// Returns the table and the number of out-of-domain clamps observed.
pub fn sample_flow(
    flow: &Flow,
    schema: &FsuSchema,
    set: ColumnSet,
    t: usize,
) -> Result<(FlowTable, u64), DatasetError> {
    if flow.packets.is_empty() {
        return Err(DatasetError::EmptyFlow);
    }
    let n = schema.indices(set).len();
    let first_ts = flow.packets[0].decoded.timestamp;
    let mut values = vec![0.0f32; t * n];
    let mut valid = vec![false; t];
    let mut clamps = 0u64;
    let mut prev_ts = None;
    for (ti, pkt) in flow.packets.iter().take(t).enumerate() {
        let ctx = ParseContext {
            from_initiator: pkt.from_initiator,
            prev_timestamp: prev_ts,
            first_timestamp: first_ts,
        };
        let raw = parse_packet(&pkt.decoded, &ctx, schema);
        let (row, c) = normalize_and_project(&raw, schema, set);
        clamps += c as u64;
        values[ti * n..(ti + 1) * n].copy_from_slice(&row);
        valid[ti] = true;
        prev_ts = Some(pkt.decoded.timestamp);
    }
    let table = FlowTable {
        values,
        valid,
        label: None,
        flow_id: flow.key.stable_id(),
    };
    debug_assert!(table.check(t, n).is_ok());
    Ok((table, clamps))
}

/// Tables for every flow, in flow order.
pub fn build_dataset(
    flows: &[Flow],
    schema: &FsuSchema,
    set: ColumnSet,
    t: usize,
) -> Result<(DatasetFile, u64), DatasetError> {
    let n = schema.indices(set).len();
    let mut out = DatasetFile::new(t, n, schema.digest(), Vec::new());
    let mut clamps = 0;
    for flow in flows {
        let (table, c) = sample_flow(flow, schema, set, t)?;
        clamps += c;
        out.records.push(table);
    }
    Ok((out, clamps))
}

/// Stratified three-way split with exact largest-remainder sizes per class.
/// Deterministic given the seed. Unlabeled records form their own stratum.
pub fn split(
    dataset: &DatasetFile,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(DatasetFile, DatasetFile, DatasetFile), DatasetError> {
    let (r1, r2, r3) = ratios;
    if r1 <= 0.0 || r2 < 0.0 || r3 < 0.0 || (r1 + r2 + r3 - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(format!(
            "{ratios:?} must be positive and sum to 1"
        )));
    }
    let strata = stratify(dataset);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (label, mut members) in strata {
        let mut rng = crate::rng::substream(seed, &[0x5B11, label_tag(label)]);
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), &[r1, r2, r3]);
        let class_name = class_name(dataset, label);
        for (part, &count) in counts.iter().enumerate() {
            if ratio_at(ratios, part) > 0.0 && count == 0 {
                return Err(DatasetError::ClassTooSmall {
                    class: class_name,
                    available: members.len(),
                });
            }
        }
        let mut offset = 0;
        for (part, &count) in counts.iter().enumerate() {
            parts[part].extend(&members[offset..offset + count]);
            offset += count;
        }
    }
    // Keep original record order inside each part.
    for p in &mut parts {
        p.sort_unstable();
    }
    let take = |idx: &[usize]| {
        dataset.with_records(idx.iter().map(|&i| dataset.records[i].clone()).collect())
    };
    Ok((take(&parts[0]), take(&parts[1]), take(&parts[2])))
}

/// A nested labeled subset: the fraction-`f` subset is contained in every
/// fraction-`f'` subset with `f <= f'` under the same seed, per class, which
/// is what label-efficiency sweeps require.
pub fn label_fraction_subset(
    dataset: &DatasetFile,
    fraction: f64,
    seed: u64,
) -> Result<DatasetFile, DatasetError> {
    if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
        return Err(DatasetError::BadRatios(format!(
            "label fraction {fraction} must be in (0, 1]"
        )));
    }
    let strata = stratify(dataset);
    let mut keep = Vec::new();
    for (label, mut members) in strata {
        let mut rng = crate::rng::substream(seed, &[0x5B12, label_tag(label)]);
        members.shuffle(&mut rng);
        let count = ((members.len() as f64) * fraction).ceil() as usize;
        if count == 0 {
            return Err(DatasetError::ClassTooSmall {
                class: class_name(dataset, label),
                available: members.len(),
            });
        }
        keep.extend(&members[..count.min(members.len())]);
    }
    keep.sort_unstable();
    let records = keep.iter().map(|&i: &usize| dataset.records[i].clone()).collect();
    Ok(dataset.with_records(records))
}

fn stratify(dataset: &DatasetFile) -> Vec<(Option<u32>, Vec<usize>)> {
    let mut strata: std::collections::BTreeMap<Option<u32>, Vec<usize>> = Default::default();
    for (i, r) in dataset.records.iter().enumerate() {
        strata.entry(r.label).or_default().push(i);
    }
    strata.into_iter().collect()
}

fn label_tag(label: Option<u32>) -> u64 {
    match label {
        Some(l) => l as u64 + 1,
        None => 0,
    }
}

fn class_name(dataset: &DatasetFile, label: Option<u32>) -> String {
    match label {
        Some(l) => dataset
            .class_names
            .get(l as usize)
            .cloned()
            .unwrap_or_else(|| format!("class{l}")),
        None => "<unlabeled>".into(),
    }
}

fn ratio_at(ratios: (f64, f64, f64), part: usize) -> f64 {
    match part {
        0 => ratios.0,
        1 => ratios.1,
        _ => ratios.2,
    }
}

/// Integer allocation of `total` across `weights`, exact and deterministic.
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut i = 0;
    while assigned < total {
        counts[order[i % order.len()]] += 1;
        assigned += 1;
        i += 1;
    }
    counts
}
