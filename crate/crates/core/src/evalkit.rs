//! Metrics, experiment protocols, and report aggregation.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{MutationRecord, SplitOptions, TaskDataset};
use crate::error::{Error, Result};
use crate::metatrain::{
    adapt_and_eval, evaluate, train_finetune, train_maml, AdamState, Batch, FinetuneConfig,
    MamlConfig, MamlOutcome, Task,
};
use crate::mutenc::{
    encode_enhanced, encode_standard, EncoderMode, Mutation, TokenSequence, Vocabulary,
    AMINO_ACIDS,
};
use crate::net::checkpoint::{Checkpoint, CheckpointMeta};
use crate::net::{Net, NetConfig};

/// Mean squared error divided by the population variance of `truth`.
pub fn nmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() < 2 {
        return Err(Error::contract(
            "nmse",
            format!(
                "need equal lengths of at least 2, got {} and {}",
                pred.len(),
                truth.len()
            ),
        ));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::contract("nmse", "truth has zero variance"));
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    Ok(mse / var)
}

/// Per-trial values with their mean and population variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

impl TrialStats {
    pub fn from_trials(seeds: Vec<u64>, values: Vec<f64>) -> Self {
        let (mean, variance) = mean_and_variance(&values);
        TrialStats {
            seeds,
            values,
            mean,
            variance,
        }
    }
}

/// Mean and population variance; both zero for an empty slice.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    CrossTask,
    PooledMeta,
    Finetune,
    FinetunePooled,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::CrossTask => "cross_task",
            Protocol::PooledMeta => "pooled_meta",
            Protocol::Finetune => "finetune",
            Protocol::FinetunePooled => "finetune_pooled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub protocol: Protocol,
    pub target_task: String,
    pub encoder_mode: EncoderMode,
    pub trial_nmse: Vec<f64>,
    pub nmse_mean: f64,
    pub nmse_variance: f64,
    pub wall_seconds: f64,
    pub train_size: usize,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub checkpoint_hash: Option<String>,
}

impl RunReport {
    fn new(
        protocol: Protocol,
        target: &str,
        encoder: EncoderMode,
        stats: TrialStats,
        train_size: usize,
        cfg: &ProtocolConfig,
    ) -> Self {
        RunReport {
            protocol,
            target_task: target.to_string(),
            encoder_mode: encoder,
            trial_nmse: stats.values,
            nmse_mean: stats.mean,
            nmse_variance: stats.variance,
            wall_seconds: 0.0,
            train_size,
            config_hash: cfg.config_hash.clone(),
            seeds: stats.seeds,
            checkpoint_hash: None,
        }
    }
}

/// Everything a protocol run needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub net: NetConfig,
    pub maml: MamlConfig,
    pub finetune: FinetuneConfig,
    pub encoder: EncoderMode,
    pub trials: usize,
    pub seed: u64,
    /// Recorded verbatim in every report.
    pub config_hash: String,
}

impl ProtocolConfig {
    /// Seeds `seed, seed + 1, ...` for each trial.
    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|i| self.seed + i).collect()
    }
}

pub fn encode_record(
    rec: &MutationRecord,
    mode: EncoderMode,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    match mode {
        EncoderMode::Enhanced => encode_enhanced(&rec.sequence, &rec.mutations, vocab, max_len),
        EncoderMode::Standard => encode_standard(&rec.sequence, &rec.mutation_text(), vocab, max_len),
    }
}

fn encode_batch(records: &[MutationRecord], mode: EncoderMode, max_len: usize) -> Result<Batch<TokenSequence>> {
    let vocab = Vocabulary::default();
    let inputs = records
        .iter()
        .map(|r| encode_record(r, mode, &vocab, max_len))
        .collect::<Result<Vec<_>>>()?;
    Batch::new(inputs, records.iter().map(|r| r.target).collect())
}

/// Encodes both splits of a dataset for the network.
pub fn encode_task(ds: &TaskDataset, mode: EncoderMode, max_len: usize) -> Result<Task<TokenSequence>> {
    Ok(Task {
        name: ds.task.clone(),
        train: encode_batch(&ds.train, mode, max_len)?,
        test: encode_batch(&ds.test, mode, max_len)?,
    })
}

fn checkpoint(net: &Net, encoder: EncoderMode, outcome_params: crate::engine::ParamSet, adam: Option<AdamState>) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            net: net.config().clone(),
            encoder,
        },
        params: outcome_params,
        optimizer: adam,
    }
}

/// NMSE without adaptation, once per seed. The values coincide since
/// prediction is deterministic.
pub fn evaluate_trials(net: &Net, params: &crate::engine::ParamSet, task: &Task<TokenSequence>, seeds: &[u64]) -> Result<TrialStats> {
    let value = evaluate(net, params, task)?;
    Ok(TrialStats::from_trials(seeds.to_vec(), vec![value; seeds.len()]))
}

/// Result of a meta-training run with its checkpoint.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub outcome: MamlOutcome,
}

fn meta_train(
    net: &Net,
    tasks: &[Task<TokenSequence>],
    maml: &MamlConfig,
    encoder: EncoderMode,
    seed: u64,
) -> Result<TrainedModel> {
    let cfg = MamlConfig {
        seed,
        ..maml.clone()
    };
    let outcome = train_maml(net, net.init_params(seed), tasks, &cfg)?;
    Ok(TrainedModel {
        checkpoint: checkpoint(net, encoder, outcome.params.clone(), Some(outcome.adam.clone())),
        outcome,
    })
}

fn find<'a>(all: &'a [TaskDataset], name: &str) -> Result<&'a TaskDataset> {
    all.iter()
        .find(|d| d.task == name)
        .ok_or_else(|| Error::Data(format!("unknown task {name:?}")))
}

/// Meta-trains on every task except `target` (once per trial seed), then
/// adapts to and evaluates on the target's test split.
pub fn run_cross_task(
    all: &[TaskDataset],
    target: &str,
    cfg: &ProtocolConfig,
) -> Result<(RunReport, Vec<TrainedModel>)> {
    let started = Instant::now();
    let target_ds = find(all, target)?;
    let sources: Vec<&TaskDataset> = all.iter().filter(|d| d.task != target).collect();
    if sources.len() < 2 {
        return Err(Error::Data(format!(
            "cross-task evaluation of {target:?} needs at least two other tasks, found {}",
            sources.len()
        )));
    }
    for d in &sources {
        if d.train.iter().any(|r| r.task == target) {
            return Err(Error::contract(
                "run_cross_task",
                format!("training task {:?} contains records tagged {target:?}", d.task),
            ));
        }
    }
    let net = Net::new(cfg.net.clone())?;
    let max_len = cfg.net.max_len;
    let tasks = sources
        .iter()
        .map(|d| encode_task(d, cfg.encoder, max_len))
        .collect::<Result<Vec<_>>>()?;
    let target_task = encode_task(target_ds, cfg.encoder, max_len)?;
    let mut models = Vec::with_capacity(cfg.trials);
    let mut values = Vec::with_capacity(cfg.trials);
    let seeds = cfg.trial_seeds();
    for &seed in &seeds {
        let model = meta_train(&net, &tasks, &cfg.maml, cfg.encoder, seed)?;
        if model.outcome.task_draws.contains_key(target) {
            return Err(Error::contract("run_cross_task", "target task was sampled during training"));
        }
        let stats = adapt_and_eval(&net, &model.checkpoint.params, &target_task, &cfg.maml, &[seed])?;
        values.push(stats.values[0]);
        models.push(model);
    }
    let train_size = sources.iter().map(|d| d.train.len()).sum();
    let mut report = RunReport::new(
        Protocol::CrossTask,
        target,
        cfg.encoder,
        TrialStats::from_trials(seeds, values),
        train_size,
        cfg,
    );
    if let Some(m) = models.first() {
        report.checkpoint_hash = Some(m.checkpoint.hash()?);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((report, models))
}

/// Meta-trains once on every task's training split, then adapts to and
/// evaluates each task.
pub fn run_pooled(all: &[TaskDataset], cfg: &ProtocolConfig) -> Result<(Vec<RunReport>, TrainedModel)> {
    let started = Instant::now();
    let net = Net::new(cfg.net.clone())?;
    let tasks = all
        .iter()
        .map(|d| encode_task(d, cfg.encoder, cfg.net.max_len))
        .collect::<Result<Vec<_>>>()?;
    let model = meta_train(&net, &tasks, &cfg.maml, cfg.encoder, cfg.seed)?;
    let hash = model.checkpoint.hash()?;
    let train_size = all.iter().map(|d| d.train.len()).sum();
    let mut reports = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let stats = adapt_and_eval(&net, &model.checkpoint.params, task, &cfg.maml, &cfg.trial_seeds())?;
        let mut r = RunReport::new(Protocol::PooledMeta, &task.name, cfg.encoder, stats, train_size, cfg);
        r.checkpoint_hash = Some(hash.clone());
        reports.push(r);
    }
    let wall = started.elapsed().as_secs_f64();
    for r in &mut reports {
        r.wall_seconds = wall;
    }
    Ok((reports, model))
}

/// Fine-tuning result with its checkpoint.
#[derive(Clone, Debug)]
pub struct FinetunedModel {
    pub checkpoint: Checkpoint,
    pub epoch_losses: Vec<f64>,
}

fn finetune_once(
    net: &Net,
    train: &Batch<TokenSequence>,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<FinetunedModel> {
    let ft = FinetuneConfig {
        seed,
        ..cfg.finetune.clone()
    };
    let out = train_finetune(net, net.init_params(seed), train, &ft)?;
    Ok(FinetunedModel {
        checkpoint: checkpoint(net, cfg.encoder, out.params, Some(out.adam)),
        epoch_losses: out.epoch_losses,
    })
}

/// Supervised baseline trained only on the target's training split.
pub fn run_finetune(
    all: &[TaskDataset],
    target: &str,
    cfg: &ProtocolConfig,
) -> Result<(RunReport, Vec<FinetunedModel>)> {
    let started = Instant::now();
    let ds = find(all, target)?;
    let net = Net::new(cfg.net.clone())?;
    let task = encode_task(ds, cfg.encoder, cfg.net.max_len)?;
    let seeds = cfg.trial_seeds();
    let mut models = Vec::new();
    let mut values = Vec::new();
    for &seed in &seeds {
        let m = finetune_once(&net, &task.train, cfg, seed)?;
        values.push(evaluate(&net, &m.checkpoint.params, &task)?);
        models.push(m);
    }
    let mut report = RunReport::new(
        Protocol::Finetune,
        target,
        cfg.encoder,
        TrialStats::from_trials(seeds, values),
        ds.train.len(),
        cfg,
    );
    if let Some(m) = models.first() {
        report.checkpoint_hash = Some(m.checkpoint.hash()?);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((report, models))
}

/// Supervised baseline trained on the union of all training splits and
/// evaluated on each task's test split.
pub fn run_finetune_pooled(
    all: &[TaskDataset],
    cfg: &ProtocolConfig,
) -> Result<(Vec<RunReport>, Vec<FinetunedModel>)> {
    let started = Instant::now();
    let net = Net::new(cfg.net.clone())?;
    let tasks = all
        .iter()
        .map(|d| encode_task(d, cfg.encoder, cfg.net.max_len))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = Batch {
        inputs: Vec::new(),
        targets: Vec::new(),
    };
    for t in &tasks {
        pooled.inputs.extend(t.train.inputs.iter().cloned());
        pooled.targets.extend(&t.train.targets);
    }
    let seeds = cfg.trial_seeds();
    let mut models = Vec::new();
    let mut per_task: Vec<Vec<f64>> = vec![Vec::new(); tasks.len()];
    for &seed in &seeds {
        let m = finetune_once(&net, &pooled, cfg, seed)?;
        for (vals, task) in per_task.iter_mut().zip(&tasks) {
            vals.push(evaluate(&net, &m.checkpoint.params, task)?);
        }
        models.push(m);
    }
    let hash = match models.first() {
        Some(m) => Some(m.checkpoint.hash()?),
        None => None,
    };
    let wall = started.elapsed().as_secs_f64();
    let reports = tasks
        .iter()
        .zip(per_task)
        .map(|(t, vals)| {
            let mut r = RunReport::new(
                Protocol::FinetunePooled,
                &t.name,
                cfg.encoder,
                TrialStats::from_trials(seeds.clone(), vals),
                pooled.len(),
                cfg,
            );
            r.checkpoint_hash = hash.clone();
            r.wall_seconds = wall;
            r
        })
        .collect();
    Ok((reports, models))
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub task: String,
    pub method: String,
    pub wall_seconds: f64,
    pub train_size: usize,
    pub nmse_mean: f64,
    pub nmse_variance: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
}

/// Builds a task x method table. Mean and variance are recomputed from the
/// per-trial values.
pub fn aggregate(reports: &[RunReport]) -> ComparisonTable {
    let mut rows: Vec<TableRow> = reports
        .iter()
        .map(|r| {
            let (mean, var) = mean_and_variance(&r.trial_nmse);
            TableRow {
                task: r.target_task.clone(),
                method: format!("{}/{}", r.protocol.as_str(), r.encoder_mode),
                wall_seconds: r.wall_seconds,
                train_size: r.train_size,
                nmse_mean: mean,
                nmse_variance: var,
                trials: r.trial_nmse.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.task.cmp(&b.task).then(a.method.cmp(&b.method)));
    ComparisonTable { rows }
}

impl ComparisonTable {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let header = ["task", "method", "time (s)", "train size", "NMSE"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.task.clone(),
                    r.method.clone(),
                    format!("{:.1}", r.wall_seconds),
                    r.train_size.to_string(),
                    format!("{:.2} ± {:.2}", r.nmse_mean, r.nmse_variance),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&mut out, &header.map(String::from));
        line(&mut out, &widths.map(|w| "-".repeat(w)));
        for row in &body {
            line(&mut out, row);
        }
        out
    }
}

/// Kyte-Doolittle hydropathy index, in [`AMINO_ACIDS`] order.
pub const KYTE_DOOLITTLE: [f64; 20] = [
    1.8, 2.5, -3.5, -3.5, 2.8, -0.4, -3.2, 4.5, -3.9, 3.8, 1.9, -3.5, -1.6, -3.5, -4.5, -0.8, -0.7,
    4.2, -0.9, -1.3,
];

pub fn hydropathy(aa: char) -> f64 {
    AMINO_ACIDS
        .iter()
        .position(|&a| a == aa)
        .map_or(0.0, |i| KYTE_DOOLITTLE[i])
}

/// Coefficients of one synthetic task:
/// `y = hydro * dh / 9 + position * f + amplitude * sin(2 pi f + phase) + noise`
/// with `dh` the hydropathy change of the substitution and `f` its relative
/// position in the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCoeffs {
    pub hydro: f64,
    pub position: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl TaskCoeffs {
    pub fn response(&self, seq_len: usize, m: &Mutation) -> f64 {
        let dh = (hydropathy(m.replacement) - hydropathy(m.original)) / 9.0;
        let f = m.position as f64 / seq_len as f64;
        self.hydro * dh + self.position * f + self.amplitude * (2.0 * PI * f + self.phase).sin()
    }
}

/// A family of related regression tasks over single substitutions.
///
/// All tasks mutate one shared random wild type, like several assays on the
/// same protein, and draw their coefficients around a common base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFamily {
    pub seed: u64,
    pub seq_len: usize,
    pub records_per_task: usize,
    pub noise_sd: f64,
    pub base: TaskCoeffs,
    /// Half-width of the uniform perturbation applied to each coefficient.
    pub spread: f64,
}

impl Default for SyntheticFamily {
    fn default() -> Self {
        SyntheticFamily {
            seed: 0,
            seq_len: 24,
            records_per_task: 200,
            noise_sd: 0.05,
            base: TaskCoeffs {
                hydro: 0.5,
                position: 1.0,
                amplitude: 0.6,
                phase: 0.0,
            },
            spread: 0.3,
        }
    }
}

/// How a task's substitutions are drawn.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiteDistribution {
    /// Allowed replacement residues; all twenty when empty.
    pub replacements: Vec<char>,
}

impl SyntheticFamily {
    fn task_rng(&self, index: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 * 4 + stream);
        rng
    }

    pub fn coeffs(&self, index: usize) -> TaskCoeffs {
        let mut rng = self.task_rng(index, 0);
        let mut jitter = |scale: f64| rng.random_range(-1.0..1.0) * self.spread * scale;
        TaskCoeffs {
            hydro: self.base.hydro + jitter(1.0),
            position: self.base.position + jitter(1.0),
            amplitude: self.base.amplitude + jitter(1.0),
            phase: self.base.phase + jitter(PI),
        }
    }

    pub fn wild_type(&self) -> String {
        let mut rng = self.task_rng(0, 1);
        (0..self.seq_len)
            .map(|_| *AMINO_ACIDS.choose(&mut rng).expect("non-empty alphabet"))
            .collect()
    }

    /// Records of task `index` with the default site distribution.
    pub fn records(&self, index: usize, name: &str) -> Vec<MutationRecord> {
        self.records_with(index, name, self.coeffs(index), &SiteDistribution::default())
    }

    /// Distinct single substitutions with noisy responses.
    pub fn records_with(
        &self,
        index: usize,
        name: &str,
        coeffs: TaskCoeffs,
        sites: &SiteDistribution,
    ) -> Vec<MutationRecord> {
        let wt = self.wild_type();
        let wt_bytes = wt.as_bytes();
        let mut rng = self.task_rng(index, 2);
        let noise = Normal::new(0.0, self.noise_sd).expect("valid noise sd");
        let pool: &[char] = if sites.replacements.is_empty() {
            &AMINO_ACIDS
        } else {
            &sites.replacements
        };
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(self.records_per_task);
        let max_distinct = wt
            .chars()
            .map(|o| pool.iter().filter(|&&r| r != o).count())
            .sum::<usize>();
        while out.len() < self.records_per_task && seen.len() < max_distinct {
            let position = rng.random_range(1..=self.seq_len);
            let original = wt_bytes[position - 1] as char;
            let replacement = *pool.choose(&mut rng).expect("non-empty pool");
            if replacement == original || !seen.insert((position, replacement)) {
                continue;
            }
            let m = Mutation {
                original,
                position,
                replacement,
            };
            let target = coeffs.response(self.seq_len, &m) + noise.sample(&mut rng);
            out.push(MutationRecord {
                sequence: wt.clone(),
                mutations: vec![m],
                target,
                source: name.to_string(),
                task: name.to_string(),
            });
        }
        out
    }

    /// Normalised train/test dataset for task `index` named `name`.
    pub fn dataset(&self, index: usize, name: &str, sites: &SiteDistribution) -> Result<TaskDataset> {
        let records = self.records_with(index, name, self.coeffs(index), sites);
        TaskDataset::from_records(name, &records, self.seed ^ index as u64, SplitOptions::default())
    }

    /// Datasets for tasks `indices`, named `{prefix}{index}`.
    pub fn datasets(&self, prefix: &str, indices: impl IntoIterator<Item = usize>) -> Result<Vec<TaskDataset>> {
        indices
            .into_iter()
            .map(|i| self.dataset(i, &format!("{prefix}{i}"), &SiteDistribution::default()))
            .collect()
    }
}
