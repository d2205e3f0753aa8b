//! Transferability: frozen-encoder probing of a pretrained model against a
//! random-initialized baseline, plus full fine-tuning.
//!
//!     cargo run --release --example frozen_vs_finetune

use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{split, synth_corpus, SynthSpec};
use flowsem::evaluate::{finetune, probe_frozen, EvalConfig};
use flowsem::model::{ModelConfig, ModelState};
use flowsem::pretrain::{pretrain, PretrainConfig};
use flowsem::schema::{default_schema, ColumnSet};

fn main() {
    let schema = default_schema();
    let data = synth_corpus(
        &SynthSpec::planted_pair(),
        300,
        6,
        &schema,
        ColumnSet::Generalizable,
        10,
        0xF10E_5E11,
    )
    .unwrap()
    .dataset;
    let (train, _, test) = split(&data, (0.7, 0.1, 0.2), 6).unwrap();

    let base = ModelConfig {
        dim: 32,
        layers: 1,
        heads: 4,
        ..ModelConfig::default()
    };
    let probe_cfg = EvalConfig {
        epochs: 200,
        seed: 6,
        ..EvalConfig::default()
    };

    // Random-initialized baseline, frozen probe.
    let mut random_cfg = base.clone();
    random_cfg.n_fsus = train.n;
    random_cfg.t = train.t;
    let random = ModelState::init(99, random_cfg, schema.digest(), data.class_names.clone()).unwrap();
    let (_, random_probe) = probe_frozen(&random, &train, &test, &probe_cfg).unwrap();

    // Pretrained encoder, frozen probe.
    let result = pretrain(
        &train,
        &schema,
        &base,
        &PretrainConfig {
            epochs: 30,
            batch_size: 48,
            seed: 6,
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            ..PretrainConfig::default()
        },
    )
    .unwrap();
    let (_, frozen) = probe_frozen(&result.model, &train, &test, &probe_cfg).unwrap();

    // Full fine-tuning of the pretrained model.
    let tune_cfg = EvalConfig {
        epochs: 15,
        batch_size: 32,
        seed: 6,
        optim: AdamWConfig {
            lr: 1e-3,
            ..AdamWConfig::default()
        },
    };
    let (_, unfrozen) = finetune(&result.model, &train, &test, &tune_cfg).unwrap();

    println!("{:<28} {:>9} {:>9}", "protocol", "accuracy", "macro_f1");
    for (name, report) in [
        ("random init, frozen", &random_probe),
        ("pretrained, frozen", &frozen),
        ("pretrained, unfrozen", &unfrozen),
    ] {
        println!("{:<28} {:>9.4} {:>9.4}", name, report.accuracy, report.macro_f1);
    }
}
