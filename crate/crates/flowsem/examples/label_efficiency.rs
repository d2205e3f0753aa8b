//! Label-efficiency sweep: frozen probes over nested labeled fractions of
//! the training split.
//!
//!     cargo run --release --example label_efficiency

use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{split, synth_corpus, SynthSpec};
use flowsem::evaluate::{label_efficiency, EvalConfig};
use flowsem::model::ModelConfig;
use flowsem::pretrain::{pretrain, PretrainConfig};
use flowsem::schema::{default_schema, ColumnSet};

fn main() {
    let schema = default_schema();
    let data = synth_corpus(
        &SynthSpec::planted_pair(),
        300,
        2,
        &schema,
        ColumnSet::Generalizable,
        10,
        0xF10E_5E11,
    )
    .unwrap()
    .dataset;
    let (train, _, test) = split(&data, (0.7, 0.1, 0.2), 2).unwrap();

    let result = pretrain(
        &train,
        &schema,
        &ModelConfig {
            dim: 32,
            layers: 1,
            heads: 4,
            ..ModelConfig::default()
        },
        &PretrainConfig {
            epochs: 25,
            batch_size: 48,
            seed: 2,
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            ..PretrainConfig::default()
        },
    )
    .unwrap();

    let cfg = EvalConfig {
        epochs: 200,
        seed: 2,
        ..EvalConfig::default()
    };
    let fractions = [0.1, 0.25, 0.5, 1.0];
    let reports = label_efficiency(&result.model, &train, &test, &fractions, &cfg).unwrap();
    println!("{:>9} {:>9} {:>9}", "fraction", "accuracy", "macro_f1");
    for r in &reports {
        println!("{:>9.2} {:>9.4} {:>9.4}", r.labeled_fraction, r.accuracy, r.macro_f1);
    }
}
