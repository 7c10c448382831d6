//! The `metaforge` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{build_task_dataset, write_rejects, SplitOptions, TaskDataset, REJECTS_FILE, TRAIN_FILE};
use crate::error::{Error, Result};
use crate::evalkit::{
    aggregate, encode_task, run_cross_task, run_finetune, run_finetune_pooled, run_pooled, evaluate_trials,
    Protocol, ProtocolConfig, RunReport,
};
use crate::metatrain::{adapt_and_eval, EpochLog, FinetuneConfig, MamlConfig};
use crate::mutenc::{
    encode_enhanced, encode_standard, parse_mutation_list, validate_against_sequence, validate_sequence,
    EncoderMode, TokenSequence, Vocabulary, DEFAULT_MAX_LEN,
};
use crate::net::checkpoint::Checkpoint;
use crate::net::{Net, NetConfig};

pub const SEED_ENV: &str = "METAFORGE_SEED";
pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "metaforge", version, about = "Few-shot meta-learning for protein mutation regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, deduplicate, split and normalise raw records for one task.
    Ingest(IngestArgs),
    /// Meta-train or fine-tune on ingested datasets.
    Train(TrainArgs),
    /// Adapt a checkpoint to a task and report test NMSE.
    Eval(EvalArgs),
    /// Show how a sequence and its mutations are tokenised.
    Encode(EncodeArgs),
    /// Combine report files into one comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV or TSV files with sequence, mutation and target columns.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Task to keep; defaults to the first file's stem.
    #[arg(long)]
    pub task: Option<String>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Split seed (falls back to METAFORGE_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of records assigned to the training split.
    #[arg(long, default_value_t = 0.8)]
    pub train_ratio: f64,
    /// Number of target bins for the stratified split.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainProtocol {
    Maml,
    Finetune,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Directory holding one ingested dataset per task subdirectory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Meta-learning or the supervised baseline.
    #[arg(long, value_enum)]
    pub protocol: Option<TrainProtocol>,
    /// Mutation encoding fed to the network.
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Meta-train on every other task and evaluate on this one.
    #[arg(long)]
    pub exclude_task: Option<String>,
    /// Train on all tasks together.
    #[arg(long)]
    pub pooled: bool,
    /// Fine-tuning target task.
    #[arg(long)]
    pub task: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (falls back to the config file, then METAFORGE_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent trials; trial `i` uses seed `seed + i`.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory for checkpoints, log and report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single-threaded numerics and zeroed wall-clock fields.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Enhanced,
    Standard,
}

impl From<EncoderArg> for EncoderMode {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Enhanced => EncoderMode::Enhanced,
            EncoderArg::Standard => EncoderMode::Standard,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory holding one ingested dataset per task subdirectory.
    #[arg(long)]
    pub data: PathBuf,
    /// Task subdirectory to evaluate on.
    #[arg(long)]
    pub task: String,
    /// Number of adaptation trials.
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Trial `i` uses seed `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML run configuration supplying the adaptation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Protocol recorded in the report; fine-tuning protocols skip adaptation.
    #[arg(long, value_enum, default_value_t = ProtocolArg::CrossTask)]
    pub protocol: ProtocolArg,
    /// Write the report here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    CrossTask,
    PooledMeta,
    Finetune,
    FinetunePooled,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::CrossTask => Protocol::CrossTask,
            ProtocolArg::PooledMeta => Protocol::PooledMeta,
            ProtocolArg::Finetune => Protocol::Finetune,
            ProtocolArg::FinetunePooled => Protocol::FinetunePooled,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncodeMode {
    Enhanced,
    Standard,
    Both,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Wild-type sequence.
    #[arg(long)]
    pub seq: String,
    /// Mutations such as `R10A` or `R10A;K12E`; empty for wild type.
    #[arg(long = "mut", default_value = "")]
    pub mutations: String,
    /// Encoding to show.
    #[arg(long, value_enum, default_value_t = EncodeMode::Both)]
    pub mode: EncodeMode,
    /// Token budget including special tokens.
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report files written by `train` or `eval`.
    pub reports: Vec<PathBuf>,
    /// Write the table as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Every setting of a training run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub protocol: TrainProtocol,
    pub encoder: EncoderMode,
    pub pooled: bool,
    pub exclude_task: Option<String>,
    pub task: Option<String>,
    pub seed: u64,
    pub trials: usize,
    pub maml: MamlConfig,
    pub net: NetConfig,
    pub finetune: FinetuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            out_dir: None,
            protocol: TrainProtocol::Maml,
            encoder: EncoderMode::Enhanced,
            pooled: false,
            exclude_task: None,
            task: None,
            seed: 0,
            trials: 3,
            maml: MamlConfig::default(),
            net: NetConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; reports whether the file sets `seed` itself.
    pub fn from_toml(text: &str) -> Result<(RunConfig, bool)> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let has_seed = table.contains_key("seed");
        let cfg = RunConfig::deserialize(table).map_err(|e| Error::Config(format!("{e}")))?;
        Ok((cfg, has_seed))
    }

    pub fn load(path: &Path) -> Result<(RunConfig, bool)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> Result<String> {
        let canonical = RunConfig {
            out_dir: None,
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&canonical)?)))
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.maml.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies CLI flags over the file settings.
    pub fn resolve(args: &TrainArgs) -> Result<RunConfig> {
        let (mut cfg, file_seed) = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => (RunConfig::default(), false),
        };
        cfg.seed = resolve_seed(args.seed, file_seed.then_some(cfg.seed))?;
        if let Some(d) = &args.data {
            cfg.data_dir = Some(d.clone());
        }
        if let Some(o) = &args.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(p) = args.protocol {
            cfg.protocol = p;
        }
        if let Some(e) = args.encoder {
            cfg.encoder = e.into();
        }
        if args.pooled {
            cfg.pooled = true;
        }
        if args.exclude_task.is_some() {
            cfg.exclude_task = args.exclude_task.clone();
        }
        if args.task.is_some() {
            cfg.task = args.task.clone();
        }
        if let Some(t) = args.trials {
            cfg.trials = t;
        }
        if args.deterministic {
            cfg.maml.parallel = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn protocol_config(&self) -> Result<ProtocolConfig> {
        Ok(ProtocolConfig {
            net: self.net.clone(),
            maml: self.maml.clone(),
            finetune: self.finetune.clone(),
            encoder: self.encoder,
            trials: self.trials,
            seed: self.seed,
            config_hash: self.hash()?,
        })
    }
}

/// Flag, then config file, then `METAFORGE_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads every task subdirectory of `dir`, sorted by name.
pub fn load_datasets(dir: &Path) -> Result<Vec<TaskDataset>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.join(TRAIN_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!("{}: no ingested datasets found", dir.display())));
    }
    dirs.iter().map(|d| TaskDataset::read_dir(d)).collect()
}

/// Returns the summary line.
pub fn cmd_ingest(args: &IngestArgs) -> Result<String> {
    let seed = resolve_seed(args.seed, None)?;
    let task = match &args.task {
        Some(t) => t.clone(),
        None => args.inputs[0]
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Config("cannot infer task name; pass --task".into()))?,
    };
    for p in &args.inputs {
        if !p.is_file() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")));
        }
    }
    let opts = SplitOptions {
        train_ratio: args.train_ratio,
        bins: args.bins,
    };
    let (ds, log) = build_task_dataset(&args.inputs, &task, seed, opts)?;
    ds.write_dir(&args.out)?;
    write_rejects(&args.out.join(REJECTS_FILE), &log)?;
    Ok(format!(
        "task {task}: accepted {} rejected {} (train {}, test {})\n",
        log.accepted(),
        log.rejections.len(),
        ds.train.len(),
        ds.test.len()
    ))
}

#[derive(Serialize)]
struct LogLine<'a, T: Serialize> {
    trial_seed: u64,
    #[serde(flatten)]
    entry: &'a T,
}

#[derive(Serialize)]
struct FinetuneLogEntry {
    epoch: usize,
    loss: f64,
}

fn log_lines<T: Serialize>(seed: u64, entries: &[T], out: &mut String) -> Result<()> {
    for entry in entries {
        out.push_str(&serde_json::to_string(&LogLine { trial_seed: seed, entry })?);
        out.push('\n');
    }
    Ok(())
}

fn maml_log(seed: u64, log: &[EpochLog], deterministic: bool, out: &mut String) -> Result<()> {
    let entries: Vec<EpochLog> = log
        .iter()
        .map(|l| EpochLog {
            wall_ms: if deterministic { 0 } else { l.wall_ms },
            ..l.clone()
        })
        .collect();
    log_lines(seed, &entries, out)
}

fn finetune_log(seed: u64, losses: &[f64], out: &mut String) -> Result<()> {
    let entries: Vec<FinetuneLogEntry> = losses
        .iter()
        .enumerate()
        .map(|(i, &loss)| FinetuneLogEntry { epoch: i + 1, loss })
        .collect();
    log_lines(seed, &entries, out)
}

/// Files written by a training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<RunReport>,
    pub table: String,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutput> {
    let cfg = RunConfig::resolve(args)?;
    let data = cfg
        .data_dir
        .clone()
        .ok_or_else(|| Error::Config("no data directory; pass --data or set data_dir".into()))?;
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory; pass --out or set out_dir".into()))?;
    let all = load_datasets(&data)?;
    let pcfg = cfg.protocol_config()?;
    let seeds = pcfg.trial_seeds();
    let mut log = String::new();
    let mut checkpoints: Vec<(u64, Checkpoint)> = Vec::new();

    let mut reports = match (cfg.protocol, cfg.pooled, &cfg.exclude_task, &cfg.task) {
        (TrainProtocol::Maml, true, None, _) => {
            let (reports, model) = run_pooled(&all, &pcfg)?;
            maml_log(cfg.seed, &model.outcome.log, args.deterministic, &mut log)?;
            checkpoints.push((cfg.seed, model.checkpoint));
            reports
        }
        (TrainProtocol::Maml, false, Some(target), _) => {
            let (report, models) = run_cross_task(&all, target, &pcfg)?;
            for (&s, m) in seeds.iter().zip(models) {
                maml_log(s, &m.outcome.log, args.deterministic, &mut log)?;
                checkpoints.push((s, m.checkpoint));
            }
            vec![report]
        }
        (TrainProtocol::Finetune, true, None, _) => {
            let (reports, models) = run_finetune_pooled(&all, &pcfg)?;
            for (&s, m) in seeds.iter().zip(models) {
                finetune_log(s, &m.epoch_losses, &mut log)?;
                checkpoints.push((s, m.checkpoint));
            }
            reports
        }
        (TrainProtocol::Finetune, false, None, Some(target)) => {
            let (report, models) = run_finetune(&all, target, &pcfg)?;
            for (&s, m) in seeds.iter().zip(models) {
                finetune_log(s, &m.epoch_losses, &mut log)?;
                checkpoints.push((s, m.checkpoint));
            }
            vec![report]
        }
        _ => {
            return Err(Error::Config(
                "choose exactly one of: --protocol maml with --exclude-task or --pooled; \
                 --protocol finetune with --task or --pooled"
                    .into(),
            ))
        }
    };
    if args.deterministic {
        for r in &mut reports {
            r.wall_seconds = 0.0;
        }
    }

    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut paths = Vec::new();
    for (seed, ck) in &checkpoints {
        let path = out.join(format!("checkpoint-{seed}.mfck"));
        ck.save(&path)?;
        paths.push(path);
    }
    let log_path = out.join(LOG_FILE);
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    write_json(&out.join(REPORT_FILE), &reports)?;
    let saved = RunConfig {
        out_dir: None,
        ..cfg
    };
    write_json(&out.join(CONFIG_FILE), &saved)?;
    Ok(TrainOutput {
        table: aggregate(&reports).to_text(),
        dir: out,
        checkpoints: paths,
        reports,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunReport> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (cfg, file_seed) = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => (RunConfig::default(), false),
    };
    if args.config.is_some() && cfg.net != ck.meta.net {
        return Err(Error::Checkpoint(format!(
            "{}: network config does not match {}",
            args.checkpoint.display(),
            args.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        )));
    }
    if args.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let seed = resolve_seed(args.seed, file_seed.then_some(cfg.seed))?;
    let seeds: Vec<u64> = (0..args.trials as u64).map(|i| seed + i).collect();
    let dir = args.data.join(&args.task);
    let ds = TaskDataset::read_dir(&dir)?;
    let net = Net::new(ck.meta.net.clone())?;
    let task = encode_task(&ds, ck.meta.encoder, ck.meta.net.max_len)?;
    let protocol = Protocol::from(args.protocol);
    let stats = match protocol {
        Protocol::CrossTask | Protocol::PooledMeta => adapt_and_eval(&net, &ck.params, &task, &cfg.maml, &seeds)?,
        Protocol::Finetune | Protocol::FinetunePooled => evaluate_trials(&net, &ck.params, &task, &seeds)?,
    };
    let report = RunReport {
        protocol,
        target_task: ds.task.clone(),
        encoder_mode: ck.meta.encoder,
        trial_nmse: stats.values,
        nmse_mean: stats.mean,
        nmse_variance: stats.variance,
        wall_seconds: 0.0,
        train_size: ds.train.len(),
        config_hash: cfg.hash()?,
        seeds: stats.seeds,
        checkpoint_hash: Some(ck.hash()?),
    };
    if let Some(path) = &args.out {
        write_json(path, &vec![report.clone()])?;
    }
    Ok(report)
}

fn encoding_lines(label: &str, seq: &TokenSequence, vocab: &Vocabulary) -> String {
    let ids: Vec<String> = seq.active_ids().iter().map(u32::to_string).collect();
    format!("{label}: {}\n{label} ids: {}\n", seq.render(vocab), ids.join(" "))
}

/// Returns the printed text.
pub fn cmd_encode(args: &EncodeArgs) -> Result<String> {
    let seq = args.seq.trim().to_uppercase();
    validate_sequence(&seq)?;
    let muts = parse_mutation_list(&args.mutations)?;
    validate_against_sequence(&seq, &muts)?;
    let vocab = Vocabulary::default();
    let mut out = String::new();
    if matches!(args.mode, EncodeMode::Enhanced | EncodeMode::Both) {
        let enc = encode_enhanced(&seq, &muts, &vocab, args.max_len)?;
        out += &encoding_lines("enhanced", &enc, &vocab);
    }
    if matches!(args.mode, EncodeMode::Standard | EncodeMode::Both) {
        let enc = encode_standard(&seq, args.mutations.trim(), &vocab, args.max_len)?;
        out += &encoding_lines("standard", &enc, &vocab);
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReportFile {
    Many(Vec<RunReport>),
    One(Box<RunReport>),
}

pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let mut reports = Vec::new();
    for path in &args.reports {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: not a report file: {e}", path.display())))?
        {
            ReportFile::Many(v) => reports.extend(v),
            ReportFile::One(r) => reports.push(*r),
        }
    }
    let table = aggregate(&reports);
    if let Some(path) = &args.json {
        write_json(path, &table)?;
    }
    Ok(table.to_text())
}

/// Runs a command and returns what it prints on success.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a).map(|o| o.table),
        Command::Eval(a) => Ok(serde_json::to_string_pretty(&cmd_eval(a)?)? + "\n"),
        Command::Encode(a) => cmd_encode(a),
        Command::Report(a) => cmd_report(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_table() {
        let c = RunConfig::default();
        assert_eq!(c.maml.inner_lr, 0.01);
        assert_eq!(c.maml.meta_lr, 0.001);
        assert_eq!((c.maml.support_size, c.maml.query_size), (8, 8));
        assert_eq!(c.maml.meta_batch, 4);
        assert_eq!(c.maml.epochs, 50);
        assert_eq!(c.maml.inner_steps, 5);
        assert_eq!(c.net.max_len, 1024);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("seed = 1\nlearning_rate = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::from_toml("[maml]\ninner_lr = 0.1\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let (c, has_seed) = RunConfig::from_toml("[maml]\nepochs = 3\n").unwrap();
        assert!(!has_seed);
        assert_eq!(c.maml.epochs, 3);
        assert_eq!(c.maml.inner_lr, 0.01);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::default();
        let b = RunConfig {
            out_dir: Some("elsewhere".into()),
            ..RunConfig::default()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn flag_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 5\ntrials = 2\n[maml]\nepochs = 4\n").unwrap();
        let args = TrainArgs {
            config: Some(path.clone()),
            ..TrainArgs::default()
        };
        let c = RunConfig::resolve(&args).unwrap();
        assert_eq!((c.seed, c.trials, c.maml.epochs), (5, 2, 4));
        let args = TrainArgs {
            config: Some(path),
            seed: Some(9),
            trials: Some(1),
            ..TrainArgs::default()
        };
        let c = RunConfig::resolve(&args).unwrap();
        assert_eq!((c.seed, c.trials), (9, 1));
    }
}
