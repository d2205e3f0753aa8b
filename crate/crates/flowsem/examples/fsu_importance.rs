//! FSU importance: gradient attribution through the trained model against
//! the split-gain forest oracle, with tie-aware Spearman agreement, on a
//! corpus with two planted discriminative fields.
//!
//!     cargo run --release --example fsu_importance

use flowsem::analysis::{importance_report, Attribution};
use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{split, synth_corpus, SynthSpec};
use flowsem::evaluate::{probe_frozen, EvalConfig};
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
        &SynthSpec::planted_pair(),
        300,
        5,
        &schema,
        ColumnSet::Generalizable,
        10,
        0xF10E_5E11,
    )
    .unwrap()
    .dataset;
    let (train, _, test) = split(&data, (0.7, 0.1, 0.2), 5).unwrap();

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
            seed: 5,
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            ..PretrainConfig::default()
        },
    )
    .unwrap();
    let (probed, eval) = probe_frozen(
        &result.model,
        &train,
        &test,
        &EvalConfig {
            epochs: 200,
            seed: 5,
            ..EvalConfig::default()
        },
    )
    .unwrap();
    println!("probe accuracy: {:.3}", eval.accuracy);

    let report =
        importance_report(&probed, &test, &columns, Attribution::GradientAbs, 5).unwrap();
    println!("spearman rho (model vs oracle): {:.4}\n", report.spearman_rho);
    println!("{:<22} {:>10} {:>10}", "fsu", "model", "oracle");
    let mut order: Vec<usize> = (0..columns.len()).collect();
    order.sort_by(|&a, &b| {
        report.model_importance[b]
            .partial_cmp(&report.model_importance[a])
            .unwrap()
    });
    for &i in order.iter().take(10) {
        println!(
            "{:<22} {:>10.4} {:>10.4}",
            columns[i], report.model_importance[i], report.oracle_importance[i]
        );
    }
}
