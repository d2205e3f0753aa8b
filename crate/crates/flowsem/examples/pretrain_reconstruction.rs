//! Masked-reconstruction pretraining with the per-FSU loss diagnostic:
//! with filtering disabled, random-class fields (checksums, ids) stay at
//! their irreducible noise floor while generalizable fields train down.
//!
//!     cargo run --release --example pretrain_reconstruction

use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{synth_corpus, SynthSpec};
use flowsem::model::ModelConfig;
use flowsem::pretrain::{pretrain, PretrainConfig};
use flowsem::schema::{default_schema, ColumnSet, Predictability};

fn main() {
    let schema = default_schema();
    let data = synth_corpus(
        &SynthSpec::two_class(),
        160,
        9,
        &schema,
        ColumnSet::GeneralizableAndRandom,
        10,
        0xF10E_5E11,
    )
    .unwrap()
    .dataset;
    println!("dataset: {} flows, {} columns (random fields admitted)", data.len(), data.n);

    let model_cfg = ModelConfig {
        dim: 24,
        layers: 1,
        heads: 4,
        ..ModelConfig::default()
    };
    let cfg = PretrainConfig {
        epochs: 15,
        batch_size: 48,
        seed: 9,
        no_filter: true,
        optim: AdamWConfig {
            lr: 3e-3,
            ..AdamWConfig::default()
        },
        ..PretrainConfig::default()
    };
    let result = pretrain(&data, &schema, &model_cfg, &cfg).unwrap();
    for (epoch, loss) in result.epoch_losses.iter().enumerate() {
        println!("epoch {epoch:>2}: loss {loss:.5}");
    }

    let class_of = |name: &str| {
        schema
            .descriptor(name)
            .map(|d| d.predictability)
            .unwrap_or(Predictability::Generalizable)
    };
    let mut rows = result.per_fsu.clone();
    rows.sort_by(|a, b| b.mse.partial_cmp(&a.mse).unwrap());
    println!("\nworst reconstruction losses:");
    for row in rows.iter().take(12) {
        println!(
            "  {:<22} {:>9.5}  ({:?})",
            row.name,
            row.mse,
            class_of(&row.name)
        );
    }
}
