//! The operator-facing command surface: extract, synth, pretrain, probe,
//! analyze. One TOML configuration file feeds every stage; each training or
//! analysis run lands in a run directory together with the resolved config
//! snapshot, so any output can be reproduced by rerunning its snapshot.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, Attribution};
use crate::capture::{ingest_file, CaptureError, Flow, IngestOptions, IngestReport};
use crate::dataset::{self, DatasetError, DatasetFile, SynthSpec};
use crate::evaluate::{self, EvalConfig, EvalError, EvalReport};
use crate::hash::hex32;
use crate::model::{ModelConfig, ModelError, ModelState};
use crate::pretrain::{self, PretrainConfig, PretrainError};
use crate::schema::{default_schema, ColumnSet, FsuSchema, SchemaError};

/// Exit code conventions: 2 config or parse failures, 3 I/O, 4 schema
/// mismatch.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: msg.into(),
        }
    }

    fn io(msg: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: msg.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<CaptureError> for CliError {
    fn from(e: CaptureError) -> Self {
        match e {
            CaptureError::Io(io) => CliError::io(io.to_string()),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::Io(io) => CliError::io(io.to_string()),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(io) => CliError::io(io.to_string()),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(io) => CliError::io(io.to_string()),
            ModelError::SchemaMismatch { .. } => CliError {
                code: 4,
                message: e.to_string(),
            },
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<PretrainError> for CliError {
    fn from(e: PretrainError) -> Self {
        match e {
            PretrainError::SchemaMismatch | PretrainError::ColumnMismatch { .. } => CliError {
                code: 4,
                message: e.to_string(),
            },
            PretrainError::Model(m) => m.into(),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::SchemaMismatch { .. } => CliError {
                code: 4,
                message: e.to_string(),
            },
            EvalError::Model(m) => m.into(),
            EvalError::Dataset(d) => d.into(),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<analysis::AnalysisError> for CliError {
    fn from(e: analysis::AnalysisError) -> Self {
        match e {
            analysis::AnalysisError::Model(m) => m.into(),
            other => CliError::config(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    /// Path to a schema file; the built-in default catalog when absent.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    /// Anonymization salt for addresses.
    pub salt: u64,
    /// Packets sampled per flow.
    pub t: usize,
    /// Keep random-class columns in the tables (filtering-off ablations).
    pub include_random: bool,
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            salt: 0xF10E_5E11,
            t: 10,
            include_random: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Flows generated per corpus.
    pub flows: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { flows: 400 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Cells sampled per FSU for geometry.
    pub sample_n: usize,
    pub attribution: Attribution,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            sample_n: 2000,
            attribution: Attribution::GradientAbs,
        }
    }
}

/// The merged configuration: every stage reads its section, all fields have
/// defaults, unknown keys are rejected. `FLOWSEM_SEED` overrides `seed`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed, propagated into every stage.
    pub seed: u64,
    pub schema: SchemaSection,
    pub extract: ExtractSection,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub probe: EvalConfig,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Ok(seed) = std::env::var("FLOWSEM_SEED") {
            cfg.seed = seed
                .parse()
                .map_err(|_| CliError::config(format!("FLOWSEM_SEED={seed} is not a number")))?;
        }
        // One run seed drives every stage.
        cfg.pretrain.seed = cfg.seed;
        cfg.probe.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load_schema(&self) -> Result<FsuSchema, CliError> {
        Ok(match &self.schema.path {
            Some(p) => FsuSchema::load(p)?,
            None => default_schema(),
        })
    }

    pub fn column_set(&self) -> ColumnSet {
        if self.extract.include_random || self.pretrain.no_filter {
            ColumnSet::GeneralizableAndRandom
        } else {
            ColumnSet::Generalizable
        }
    }
}

// ---------------------------------------------------------------------------
// Command definitions
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "flowsem",
    about = "Protocol-native tabular pretraining for encrypted traffic flows",
    version
)]
pub struct Cli {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse capture files into a flow-table dataset.
    Extract(ExtractArgs),
    /// Generate a labeled synthetic corpus (optionally with a pcap trace).
    Synth(SynthArgs),
    /// Masked-reconstruction pretraining over a dataset.
    Pretrain(PretrainArgs),
    /// Frozen-encoder probing (or full fine-tuning) of a checkpoint.
    Probe(ProbeArgs),
    /// Embedding geometry or FSU importance analysis of a checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input pcap/pcapng files, processed in argument order.
    pub pcaps: Vec<PathBuf>,
    /// Schema file overriding the built-in catalog.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output dataset path; an extraction report lands next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the first N flows.
    #[arg(long)]
    pub max_flows: Option<usize>,
    /// Stop reading each file after this many records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus spec: a TOML file path, or a bundled name
    /// (two_class, timing_pair, planted_pair).
    #[arg(long)]
    pub spec: String,
    /// Number of flows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed override for generation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the synthesized trace as a pcap next to the dataset.
    #[arg(long)]
    pub emit_pcap: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint path; when omitted, `<run-dir>/model.ckpt`.
    #[arg(long)]
    pub out_ckpt: Option<PathBuf>,
    /// Run directory for the config snapshot, loss curves and logs.
    #[arg(long, default_value = "runs/pretrain")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Labeled training split.
    #[arg(long)]
    pub train: PathBuf,
    /// Labeled test split.
    #[arg(long)]
    pub test: PathBuf,
    /// Fine-tune every parameter instead of probing the frozen encoder.
    #[arg(long)]
    pub unfrozen: bool,
    /// Train on a nested labeled fraction of the training split.
    #[arg(long)]
    pub label_fraction: Option<f64>,
    /// Accept a checkpoint whose schema hash differs from the dataset's.
    #[arg(long)]
    pub force: bool,
    /// Run directory for the config snapshot and reports.
    #[arg(long, default_value = "runs/probe")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint to analyze.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset the analysis runs over (labeled for importance).
    #[arg(long)]
    pub data: PathBuf,
    /// Which analysis to run.
    #[arg(value_parser = ["geometry", "importance"])]
    pub kind: String,
    /// Accept a checkpoint whose schema hash differs from the dataset's.
    #[arg(long)]
    pub force: bool,
    /// Run directory for the config snapshot and reports.
    #[arg(long, default_value = "runs/analyze")]
    pub run_dir: PathBuf,
}

/// Entry point used by the binary: returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Extract(args) => cmd_extract(&cfg, args),
        Command::Synth(args) => cmd_synth(&cfg, args),
        Command::Pretrain(args) => cmd_pretrain(&cfg, args),
        Command::Probe(args) => cmd_probe(&cfg, args),
        Command::Analyze(args) => cmd_analyze(&cfg, args),
    }
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ExtractReport {
    files: Vec<FileReport>,
    flows_total: u64,
    flows_written: u64,
    normalization_clamps: u64,
    schema_hash: String,
}

#[derive(Serialize)]
struct FileReport {
    path: String,
    #[serde(flatten)]
    ingest: IngestReport,
}

fn cmd_extract(cfg: &RunConfig, args: ExtractArgs) -> Result<(), CliError> {
    if args.pcaps.is_empty() {
        return Err(CliError::config("no inputs"));
    }
    let schema = match &args.schema {
        Some(p) => FsuSchema::load(p)?,
        None => cfg.load_schema()?,
    };
    let set = cfg.column_set();

    let mut flows: Vec<Flow> = Vec::new();
    let mut files = Vec::new();
    for path in &args.pcaps {
        let opts = IngestOptions {
            salt: cfg.extract.salt,
            limit: args.limit,
        };
        let (mut file_flows, report) = ingest_file(path, &opts)?;
        files.push(FileReport {
            path: path.display().to_string(),
            ingest: report,
        });
        flows.append(&mut file_flows);
    }
    let flows_total = flows.len() as u64;
    if let Some(max) = args.max_flows {
        flows.truncate(max);
    }

    let (ds, clamps) = dataset::build_dataset(&flows, &schema, set, cfg.extract.t)?;
    ds.write(&args.out)?;

    let report = ExtractReport {
        files,
        flows_total,
        flows_written: ds.len() as u64,
        normalization_clamps: clamps,
        schema_hash: hex32(&schema.digest()),
    };
    let report_path = sibling(&args.out, "report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap())?;
    println!(
        "wrote {} flows to {} (report: {})",
        ds.len(),
        args.out.display(),
        report_path.display()
    );
    Ok(())
}

fn builtin_spec(name: &str) -> Option<SynthSpec> {
    match name {
        "two_class" => Some(SynthSpec::two_class()),
        "timing_pair" => Some(SynthSpec::timing_pair()),
        "planted_pair" => Some(SynthSpec::planted_pair()),
        _ => None,
    }
}

fn cmd_synth(cfg: &RunConfig, args: SynthArgs) -> Result<(), CliError> {
    let spec = match builtin_spec(&args.spec) {
        Some(s) => s,
        None => SynthSpec::load(Path::new(&args.spec))?,
    };
    let schema = cfg.load_schema()?;
    let n = args.n.unwrap_or(cfg.synth.flows);
    let seed = args.seed.unwrap_or(cfg.seed);
    let out = dataset::synth_corpus(
        &spec,
        n,
        seed,
        &schema,
        cfg.column_set(),
        cfg.extract.t,
        cfg.extract.salt,
    )?;
    out.dataset.write(&args.out)?;
    println!(
        "wrote {} labeled flows to {}",
        out.dataset.len(),
        args.out.display()
    );
    if args.emit_pcap {
        let pcap_path = sibling(&args.out, "pcap");
        dataset::write_pcap(&out.packets, &pcap_path)?;
        println!("wrote trace to {}", pcap_path.display());
    }
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, args: PretrainArgs) -> Result<(), CliError> {
    let run_dir = prepare_run_dir(&args.run_dir, cfg)?;
    let schema = cfg.load_schema()?;
    let data = DatasetFile::read(&args.data)?;

    let mut log = RunLog::create(run_dir.join("log.jsonl"))?;
    log.event("pretrain_start", &serde_json::json!({ "records": data.len() }))?;

    let result = pretrain::pretrain(&data, &schema, &cfg.model, &cfg.pretrain)?;
    for (epoch, loss) in result.epoch_losses.iter().enumerate() {
        log.event("epoch", &serde_json::json!({ "epoch": epoch, "loss": loss }))?;
    }

    let ckpt = args.out_ckpt.unwrap_or_else(|| run_dir.join("model.ckpt"));
    result.model.save(&ckpt)?;

    let mut curve = String::from("epoch,loss\n");
    for (epoch, loss) in result.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{epoch},{loss}\n"));
    }
    std::fs::write(run_dir.join("loss_curve.csv"), curve)?;

    let mut per_fsu = String::from("fsu,count,mse\n");
    for row in &result.per_fsu {
        per_fsu.push_str(&format!("{},{},{}\n", row.name, row.count, row.mse));
    }
    std::fs::write(run_dir.join("per_fsu_loss.csv"), per_fsu)?;

    log.event(
        "pretrain_done",
        &serde_json::json!({ "checkpoint": ckpt.display().to_string() }),
    )?;
    println!(
        "pretrained {} epochs, final loss {:.6}, checkpoint {}",
        result.epoch_losses.len(),
        result.epoch_losses.last().unwrap_or(&f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn cmd_probe(cfg: &RunConfig, args: ProbeArgs) -> Result<(), CliError> {
    let run_dir = prepare_run_dir(&args.run_dir, cfg)?;
    let train = DatasetFile::read(&args.train)?;
    let test = DatasetFile::read(&args.test)?;
    let model = ModelState::load(&args.ckpt, Some(train.schema_hash), args.force)?;

    let report = if args.unfrozen {
        let (_, report) = evaluate::finetune(&model, &train, &test, &cfg.probe)?;
        report
    } else if let Some(fraction) = args.label_fraction {
        let subset = dataset::label_fraction_subset(&train, fraction, cfg.probe.seed)?;
        let (_, report) =
            evaluate::probe_frozen_with_fraction(&model, &subset, &test, &cfg.probe, fraction)?;
        report
    } else {
        let (_, report) = evaluate::probe_frozen(&model, &train, &test, &cfg.probe)?;
        report
    };

    write_report(&run_dir, &report)?;
    print!("{}", report.render_text());
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, args: AnalyzeArgs) -> Result<(), CliError> {
    let run_dir = prepare_run_dir(&args.run_dir, cfg)?;
    let data = DatasetFile::read(&args.data)?;
    let model = ModelState::load(&args.ckpt, Some(data.schema_hash), args.force)?;
    let schema = cfg.load_schema()?;
    let set = if data.n == schema.n_generalizable() {
        ColumnSet::Generalizable
    } else {
        ColumnSet::GeneralizableAndRandom
    };
    let columns: Vec<String> = schema
        .column_names(set)
        .iter()
        .map(|s| s.to_string())
        .collect();

    match args.kind.as_str() {
        "geometry" => {
            let report =
                analysis::embedding_geometry(&model, &data, cfg.analysis.sample_n, &columns)?;
            let twin = analysis::shared_twin(&model);
            let contrast =
                analysis::embedding_geometry(&twin, &data, cfg.analysis.sample_n, &columns)?;
            std::fs::write(
                run_dir.join("geometry.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "model": report,
                    "shared_twin": contrast,
                }))
                .unwrap(),
            )?;
            std::fs::write(run_dir.join("inter_distance.csv"), report.distance_csv())?;
            std::fs::write(run_dir.join("intra_variance.csv"), report.variance_csv())?;
            println!(
                "geometry: variance ratio {:.3} ({}), shared twin {:.3}",
                report.variance_ratio, report.mode, contrast.variance_ratio
            );
        }
        "importance" => {
            let report = analysis::importance_report(
                &model,
                &data,
                &columns,
                cfg.analysis.attribution,
                cfg.seed,
            )?;
            std::fs::write(
                run_dir.join("importance.json"),
                serde_json::to_string_pretty(&report).unwrap(),
            )?;
            std::fs::write(run_dir.join("importance.csv"), report.ranking_csv())?;
            println!(
                "importance: spearman rho {:.4}; top model FSUs: {}",
                report.spearman_rho,
                report.model_ranking[..report.model_ranking.len().min(5)].join(", ")
            );
        }
        other => return Err(CliError::config(format!("unknown analysis {other:?}"))),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Run-directory plumbing
// ---------------------------------------------------------------------------

fn prepare_run_dir(dir: &Path, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(dir.to_path_buf())
}

fn write_report(run_dir: &Path, report: &EvalReport) -> Result<(), CliError> {
    std::fs::write(
        run_dir.join("report.json"),
        serde_json::to_string_pretty(report).unwrap(),
    )?;
    std::fs::write(run_dir.join("report.txt"), report.render_text())?;
    std::fs::write(run_dir.join("confusion.csv"), report.confusion_csv())?;
    Ok(())
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

struct RunLog {
    out: std::fs::File,
}

impl RunLog {
    fn create(path: PathBuf) -> Result<Self, CliError> {
        Ok(RunLog {
            out: std::fs::File::create(path)?,
        })
    }

    fn event(&mut self, kind: &str, fields: &serde_json::Value) -> Result<(), CliError> {
        use std::io::Write;
        let mut line = serde_json::json!({ "event": kind });
        if let (Some(obj), Some(extra)) = (line.as_object_mut(), fields.as_object()) {
            for (k, v) in extra {
                obj.insert(k.clone(), v.clone());
            }
        }
        writeln!(self.out, "{line}")?;
        Ok(())
    }
}
