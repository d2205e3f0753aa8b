//! Embedding-space geometry: per-FSU centroid distances and intra-FSU
//! variance, contrasting trained FSU-specific embedders with a freshly
//! initialized shared-embedding twin.
//!
//!     cargo run --release --example embedding_geometry

use flowsem::analysis::{embedding_geometry, shared_twin};
use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{synth_corpus, SynthSpec};
use flowsem::model::ModelConfig;
use flowsem::pretrain::{pretrain, PretrainConfig};
use flowsem::schema::{default_schema, ColumnSet};

fn main() {
    let schema = default_schema();
    let columns: Vec<String> = schema
        .column_names(ColumnSet::Generalizable)
        .iter()
        .map(|s| s.to_string())
        .collect();
    let data = synth_corpus(
        &SynthSpec::two_class(),
        200,
        7,
        &schema,
        ColumnSet::Generalizable,
        10,
        0xF10E_5E11,
    )
    .unwrap()
    .dataset;

    let result = pretrain(
        &data,
        &schema,
        &ModelConfig {
            dim: 32,
            layers: 1,
            heads: 4,
            ..ModelConfig::default()
        },
        &PretrainConfig {
            epochs: 20,
            batch_size: 48,
            seed: 1,
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            ..PretrainConfig::default()
        },
    )
    .unwrap();

    let trained = embedding_geometry(&result.model, &data, 2000, &columns).unwrap();
    let twin = embedding_geometry(&shared_twin(&result.model), &data, 2000, &columns).unwrap();

    println!(
        "intra-FSU variance ratio (max/min over varying columns):\n  {:<14} {:>12.2}\n  {:<14} {:>12.2}",
        trained.mode, trained.variance_ratio, twin.mode, twin.variance_ratio
    );

    let mut rows: Vec<(usize, f64)> = trained
        .intra_variance
        .iter()
        .cloned()
        .enumerate()
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    println!("\nlargest intra-FSU variances (trained):");
    for (i, v) in rows.iter().take(8) {
        println!("  {:<22} {:>12.3e}  (shared twin: {:.3e})", columns[*i], v, twin.intra_variance[*i]);
    }
}
