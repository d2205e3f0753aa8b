//! Shared training fixtures for the acceptance suite, built once per test
//! process. The planted-pair fixture backs the transfer, frozen-contract,
//! and importance criteria.

use std::sync::OnceLock;

use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{split, synth_corpus, DatasetFile, SynthSpec};
use flowsem::evaluate::{probe_frozen, EvalConfig, EvalReport};
use flowsem::model::{ModelConfig, ModelState};
use flowsem::pretrain::{pretrain, PretrainConfig};
use flowsem::schema::{default_schema, ColumnSet, FsuSchema};

pub struct PlantedFixture {
    pub schema: FsuSchema,
    pub columns: Vec<String>,
    pub train: DatasetFile,
    pub test: DatasetFile,
    pub pretrained: ModelState,
    /// The pretrained encoder with a head probed on `train`.
    pub probed: ModelState,
    pub probe_report: EvalReport,
}

pub fn model_config() -> ModelConfig {
    ModelConfig {
        dim: 32,
        layers: 1,
        heads: 4,
        ..ModelConfig::default()
    }
}

pub fn pretrain_config(seed: u64) -> PretrainConfig {
    PretrainConfig {
        epochs: 30,
        batch_size: 48,
        seed,
        optim: AdamWConfig {
            lr: 3e-3,
            ..AdamWConfig::default()
        },
        ..PretrainConfig::default()
    }
}

pub fn probe_config(seed: u64) -> EvalConfig {
    EvalConfig {
        epochs: 200,
        batch_size: 32,
        seed,
        optim: AdamWConfig::default(),
    }
}

static PLANTED: OnceLock<PlantedFixture> = OnceLock::new();

pub fn planted() -> &'static PlantedFixture {
    PLANTED.get_or_init(|| {
        let schema = default_schema();
        let columns: Vec<String> = schema
            .column_names(ColumnSet::Generalizable)
            .iter()
            .map(|s| s.to_string())
            .collect();
        let data = synth_corpus(
            &SynthSpec::planted_pair(),
            300,
            4,
            &schema,
            ColumnSet::Generalizable,
            10,
            0xF10E_5E11,
        )
        .expect("planted corpus synthesizes")
        .dataset;
        let (train, _, test) = split(&data, (0.7, 0.1, 0.2), 4).expect("split succeeds");

        let result = pretrain(&train, &schema, &model_config(), &pretrain_config(4))
            .expect("pretraining runs");
        let (probed, probe_report) =
            probe_frozen(&result.model, &train, &test, &probe_config(4)).expect("probe runs");

        PlantedFixture {
            schema,
            columns,
            train,
            test,
            pretrained: result.model,
            probed,
            probe_report,
        }
    })
}
