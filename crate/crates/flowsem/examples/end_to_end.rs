//! The whole pipeline on a synthetic corpus: generate labeled flows,
//! split, pretrain by masked reconstruction, then probe the frozen encoder.
//!
//!     cargo run --release --example end_to_end

use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{split, synth_corpus, SynthSpec};
use flowsem::evaluate::{probe_frozen, EvalConfig};
use flowsem::model::ModelConfig;
use flowsem::pretrain::{pretrain, PretrainConfig};
use flowsem::schema::{default_schema, ColumnSet};

fn main() {
    let schema = default_schema();
    println!("{schema}");

    let corpus = synth_corpus(
        &SynthSpec::two_class(),
        300,
        7,
        &schema,
        ColumnSet::Generalizable,
        10,
        0xF10E_5E11,
    )
    .expect("synthesis succeeds");
    let (train, val, test) = split(&corpus.dataset, (0.7, 0.1, 0.2), 7).unwrap();
    println!(
        "corpus: {} flows -> {}/{}/{} train/val/test",
        corpus.dataset.len(),
        train.len(),
        val.len(),
        test.len()
    );

    let model_cfg = ModelConfig {
        dim: 32,
        layers: 1,
        heads: 4,
        ..ModelConfig::default()
    };
    let pretrain_cfg = PretrainConfig {
        epochs: 20,
        batch_size: 48,
        seed: 7,
        optim: AdamWConfig {
            lr: 3e-3,
            ..AdamWConfig::default()
        },
        ..PretrainConfig::default()
    };
    let result = pretrain(&train, &schema, &model_cfg, &pretrain_cfg).expect("pretraining runs");
    println!(
        "pretrained {} epochs: loss {:.4} -> {:.4}",
        result.epoch_losses.len(),
        result.epoch_losses.first().unwrap(),
        result.epoch_losses.last().unwrap()
    );

    let eval_cfg = EvalConfig {
        epochs: 200,
        seed: 7,
        ..EvalConfig::default()
    };
    let (_, report) = probe_frozen(&result.model, &train, &test, &eval_cfg).unwrap();
    print!("{}", report.render_text());
}
