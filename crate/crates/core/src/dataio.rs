//! Record ingestion and the quality-control pipeline.
//!
//! `read -> QC -> dedup -> stratified split -> per-source scaling`, with every
//! discarded row accounted for in a rejection log.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mutenc::{format_mutation_list, parse_mutation_list, validate_against_sequence, Mutation};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const SCALERS_FILE: &str = "scalers.json";
pub const REJECTS_FILE: &str = "rejects.log";

const REQUIRED_COLUMNS: [&str; 4] = ["sequence", "mutation", "target", "source"];

/// One experimental observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub sequence: String,
    pub mutations: Vec<Mutation>,
    pub target: f64,
    pub source: String,
    pub task: String,
}

impl MutationRecord {
    /// Canonical `;`-joined mutation text.
    pub fn mutation_text(&self) -> String {
        format_mutation_list(&self.mutations)
    }

    /// Identity used for deduplication and split disjointness.
    pub fn key(&self) -> RecordKey {
        RecordKey {
            sequence: self.sequence.clone(),
            mutations: self.mutation_text(),
            source: self.source.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub sequence: String,
    pub mutations: String,
    pub source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Tsv,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("tsv") => FileFormat::Tsv,
            _ => FileFormat::Csv,
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            FileFormat::Csv => b',',
            FileFormat::Tsv => b'\t',
        }
    }
}

/// A row that did not make it into the dataset, and why.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.reason)
    }
}

/// Output of [`read_records`]: accepted records with their line numbers.
#[derive(Clone, Debug, Default)]
pub struct ReadOutcome {
    pub records: Vec<MutationRecord>,
    pub lines: Vec<u64>,
    pub rejections: Vec<Rejection>,
    pub rows: usize,
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads a delimited record file with header
/// `sequence,mutation,target,source[,task]`.
///
/// Missing required columns are fatal. Individual bad rows are returned as
/// rejections.
pub fn read_records(path: &Path, format: FileFormat) -> Result<ReadOutcome> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let task_col = column("task");
    let default_task = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let label = file_label(path);

    let mut out = ReadOutcome::default();
    for row in reader.records() {
        out.rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.rejections.push(Rejection {
                    file: label.clone(),
                    line,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i);
        let fields = [field(idx[0]), field(idx[1]), field(idx[2]), field(idx[3])];
        let parsed = match fields {
            [Some(seq), Some(muts), Some(target), Some(source)] => {
                let task = task_col
                    .and_then(|i| row.get(i))
                    .filter(|t| !t.is_empty())
                    .unwrap_or(&default_task);
                parse_row(seq, muts, target, source, task)
            }
            _ => Err(format!(
                "unreadable row: expected at least {} fields, found {}",
                headers.len(),
                row.len()
            )),
        };
        match parsed {
            Ok(rec) => {
                out.records.push(rec);
                out.lines.push(line);
            }
            Err(reason) => out.rejections.push(Rejection {
                file: label.clone(),
                line,
                reason,
            }),
        }
    }
    Ok(out)
}

fn parse_target(text: &str) -> std::result::Result<f64, String> {
    let t = text.replace('\u{2212}', "-");
    if t.is_empty() || ["nan", "na", "n/a", "null", "none"].contains(&t.to_ascii_lowercase().as_str())
    {
        return Err("missing experimental value".into());
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_nan() => Err("missing experimental value".into()),
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite target {text:?}")),
        Err(_) => Err(format!("unparseable target {text:?}")),
    }
}

/// Validates one row; the error string is the rejection reason.
pub fn parse_row(
    sequence: &str,
    mutation: &str,
    target: &str,
    source: &str,
    task: &str,
) -> std::result::Result<MutationRecord, String> {
    let target = parse_target(target)?;
    if source.is_empty() {
        return Err("missing source".into());
    }
    let mutations = parse_mutation_list(mutation).map_err(|e| e.to_string())?;
    validate_against_sequence(sequence, &mutations).map_err(|e| e.to_string())?;
    Ok(MutationRecord {
        sequence: sequence.to_string(),
        mutations,
        target,
        source: source.to_string(),
        task: task.to_string(),
    })
}

/// Keeps the first occurrence of every record key.
pub fn dedup(records: Vec<MutationRecord>) -> Vec<MutationRecord> {
    let (kept, _) = dedup_indexed(records);
    kept
}

/// Like [`dedup`], also returning `(dropped_index, kept_index)` pairs.
fn dedup_indexed(records: Vec<MutationRecord>) -> (Vec<MutationRecord>, Vec<(usize, usize)>) {
    let mut seen: HashMap<RecordKey, usize> = HashMap::with_capacity(records.len());
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = Vec::new();
    for (i, rec) in records.into_iter().enumerate() {
        match seen.get(&rec.key()) {
            Some(&first) => dropped.push((i, first)),
            None => {
                seen.insert(rec.key(), i);
                kept.push(rec);
            }
        }
    }
    (kept, dropped)
}

/// Per-source standardisation with population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub source: String,
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    pub fn fit(source: &str, values: &[f64]) -> Result<Scaler> {
        if values.len() < 2 {
            return Err(Error::DegenerateSource(source.to_string()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::DegenerateSource(source.to_string()));
        }
        Ok(Scaler {
            source: source.to_string(),
            mean,
            std,
        })
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Fits one scaler per source over the given (training) records.
pub fn fit_scalers(records: &[MutationRecord]) -> Result<BTreeMap<String, Scaler>> {
    let mut by_source: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_source.entry(&r.source).or_default().push(r.target);
    }
    by_source
        .into_iter()
        .map(|(s, v)| Ok((s.to_string(), Scaler::fit(s, &v)?)))
        .collect()
}

/// Applies each record's source scaler to its target.
pub fn normalize(
    records: &[MutationRecord],
    scalers: &BTreeMap<String, Scaler>,
) -> Result<Vec<MutationRecord>> {
    records
        .iter()
        .map(|r| {
            let s = scalers.get(&r.source).ok_or_else(|| {
                Error::Data(format!("no scaler fitted for source {:?}", r.source))
            })?;
            Ok(MutationRecord {
                target: s.transform(r.target),
                ..r.clone()
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitOptions {
    pub train_ratio: f64,
    pub bins: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            train_ratio: 0.8,
            bins: 10,
        }
    }
}

/// Splits records into train/test within equal-frequency target bins.
///
/// The overall train count is `round(ratio * n)`; it is distributed across
/// bins by largest remainder so each bin keeps its share. Both outputs
/// preserve input order.
pub fn stratified_split<T: Clone>(
    items: &[T],
    target: impl Fn(&T) -> f64,
    ratio: f64,
    bins: usize,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let n = items.len();
    if bins == 0 || n < bins {
        return Err(Error::Data(format!(
            "cannot split {n} records into {bins} bins"
        )));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("train ratio {ratio} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| target(&items[a]).total_cmp(&target(&items[b])).then(a.cmp(&b)));
    let bounds: Vec<(usize, usize)> = (0..bins).map(|b| (b * n / bins, (b + 1) * n / bins)).collect();

    let total_train = (ratio * n as f64).round() as usize;
    let exact: Vec<f64> = bounds.iter().map(|(s, e)| ratio * (e - s) as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = total_train.saturating_sub(quota.iter().sum());
    let mut by_remainder: Vec<usize> = (0..bins).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &b in by_remainder.iter().cycle().take(bins * 2) {
        if remaining == 0 {
            break;
        }
        if quota[b] < bounds[b].1 - bounds[b].0 {
            quota[b] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = vec![false; n];
    for (b, &(s, e)) in bounds.iter().enumerate() {
        let mut members = order[s..e].to_vec();
        members.shuffle(&mut rng);
        for &i in &members[..quota[b]] {
            is_train[i] = true;
        }
    }
    let mut train = Vec::with_capacity(total_train);
    let mut test = Vec::with_capacity(n - total_train);
    for (i, item) in items.iter().enumerate() {
        if is_train[i] {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok((train, test))
}

/// A task's normalised train/test split with the scalers fit on train.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task: String,
    pub train: Vec<MutationRecord>,
    pub test: Vec<MutationRecord>,
    pub scalers: BTreeMap<String, Scaler>,
}

/// Accounting for one ingestion run.
#[derive(Clone, Debug, Default)]
pub struct IngestLog {
    pub input_rows: usize,
    pub rejections: Vec<Rejection>,
}

impl IngestLog {
    pub fn accepted(&self) -> usize {
        self.input_rows - self.rejections.len()
    }
}

impl TaskDataset {
    /// Split, fit scalers on the training part, normalise both parts.
    /// `records` must already be deduplicated.
    pub fn from_records(
        task: &str,
        records: &[MutationRecord],
        seed: u64,
        opts: SplitOptions,
    ) -> Result<TaskDataset> {
        if records.is_empty() {
            return Err(Error::Data(format!("task {task:?}: no valid records")));
        }
        let bins = opts.bins.min(records.len()).max(1);
        let (train, test) = stratified_split(records, |r| r.target, opts.train_ratio, bins, seed)?;
        let scalers = fit_scalers(&train)?;
        Ok(TaskDataset {
            task: task.to_string(),
            train: normalize(&train, &scalers)?,
            test: normalize(&test, &scalers)?,
            scalers,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `train.csv`, `test.csv` and `scalers.json` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_records(&dir.join(TRAIN_FILE), &self.train)?;
        write_records(&dir.join(TEST_FILE), &self.test)?;
        let scalers: Vec<&Scaler> = self.scalers.values().collect();
        let json = serde_json::to_string_pretty(&scalers)? + "\n";
        let path = dir.join(SCALERS_FILE);
        fs::write(&path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads a directory written by [`TaskDataset::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<TaskDataset> {
        let train = read_clean(&dir.join(TRAIN_FILE))?;
        let test = read_clean(&dir.join(TEST_FILE))?;
        let path = dir.join(SCALERS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let list: Vec<Scaler> = serde_json::from_str(&text)?;
        let scalers = list.into_iter().map(|s| (s.source.clone(), s)).collect();
        let task = train
            .first()
            .or(test.first())
            .map(|r| r.task.clone())
            .ok_or_else(|| Error::Data(format!("{}: dataset is empty", dir.display())))?;
        Ok(TaskDataset {
            task,
            train,
            test,
            scalers,
        })
    }
}

fn write_records(path: &Path, records: &[MutationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sequence", "mutation", "target", "source", "task"])?;
    for r in records {
        w.write_record([
            r.sequence.as_str(),
            &r.mutation_text(),
            &r.target.to_string(),
            &r.source,
            &r.task,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_clean(path: &Path) -> Result<Vec<MutationRecord>> {
    let out = read_records(path, FileFormat::Csv)?;
    if let Some(r) = out.rejections.first() {
        return Err(Error::Format(format!("dataset file has an invalid row: {r}")));
    }
    Ok(out.records)
}

/// Reads, QCs and deduplicates `files`, keeping rows that belong to `task`.
///
/// Every input row is either accepted or listed in the returned log.
pub fn collect_task_records(
    files: &[PathBuf],
    task: &str,
) -> Result<(Vec<MutationRecord>, IngestLog)> {
    let mut log = IngestLog::default();
    let mut records = Vec::new();
    let mut origin = Vec::new();
    for path in files {
        let out = read_records(path, FileFormat::from_path(path))?;
        log.input_rows += out.rows;
        log.rejections.extend(out.rejections);
        let label = file_label(path);
        for (rec, line) in out.records.into_iter().zip(out.lines) {
            if rec.task == task {
                records.push(rec);
                origin.push((label.clone(), line));
            } else {
                log.rejections.push(Rejection {
                    file: label.clone(),
                    line,
                    reason: format!("belongs to task {:?}, not {task:?}", rec.task),
                });
            }
        }
    }
    let (kept, dropped) = dedup_indexed(records);
    for (i, first) in dropped {
        log.rejections.push(Rejection {
            file: origin[i].0.clone(),
            line: origin[i].1,
            reason: format!("duplicate of {}:{}", origin[first].0, origin[first].1),
        });
    }
    log.rejections
        .sort_by(|a, b| a.file.cmp(&b.file).then(a.line.cmp(&b.line)));
    Ok((kept, log))
}

/// Full ingestion pipeline for one task.
pub fn build_task_dataset(
    files: &[PathBuf],
    task: &str,
    seed: u64,
    opts: SplitOptions,
) -> Result<(TaskDataset, IngestLog)> {
    let (records, log) = collect_task_records(files, task)?;
    if records.is_empty() {
        return Err(Error::Data("no valid records".into()));
    }
    Ok((TaskDataset::from_records(task, &records, seed, opts)?, log))
}

/// Writes the rejection log, one `file:line: reason` entry per line.
pub fn write_rejects(path: &Path, log: &IngestLog) -> Result<()> {
    let text: String = log.rejections.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
