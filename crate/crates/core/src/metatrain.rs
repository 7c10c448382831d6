//! Episodic first-order MAML and the supervised fine-tuning baseline.
//!
//! Both loops are generic over a [`Learner`], so the same machinery drives
//! the transformer regressor and the scalar toy models used in tests.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::evalkit::{nmse, TrialStats};
use crate::mutenc::TokenSequence;
use crate::net::{loss_mse, Mode, Net};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerOptimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MamlConfig {
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub support_size: usize,
    pub query_size: usize,
    pub meta_batch: usize,
    pub epochs: usize,
    /// Meta-steps per epoch.
    pub steps_per_epoch: usize,
    pub inner_steps: usize,
    /// `None` disables clipping.
    pub clip_max_norm: Option<f64>,
    pub inner_optimizer: InnerOptimizer,
    pub seed: u64,
    /// Run the episodes of a meta-batch on the rayon pool. Results are
    /// identical either way.
    pub parallel: bool,
}

impl Default for MamlConfig {
    fn default() -> Self {
        MamlConfig {
            inner_lr: 0.01,
            meta_lr: 0.001,
            support_size: 8,
            query_size: 8,
            meta_batch: 4,
            epochs: 50,
            steps_per_epoch: 1,
            inner_steps: 5,
            clip_max_norm: Some(1.0),
            inner_optimizer: InnerOptimizer::Adam,
            seed: 0,
            parallel: false,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.inner_lr >= 0.0 && self.meta_lr >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if self.support_size == 0 || self.query_size == 0 || self.meta_batch == 0 {
            return bad("support_size, query_size and meta_batch must be positive".into());
        }
        if self.inner_steps == 0 || self.steps_per_epoch == 0 {
            return bad("inner_steps and steps_per_epoch must be at least 1".into());
        }
        if let Some(c) = self.clip_max_norm {
            if !(c > 0.0) {
                return bad(format!("clip_max_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn episode_size(&self) -> usize {
        self.support_size + self.query_size
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One bias-corrected Adam update; returns the new parameters.
    pub fn update(&mut self, params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
        params.check_layout(grads)?;
        let (b1, b2) = (self.beta1, self.beta2);
        self.step += 1;
        self.m = self.m.zip_map(grads, |m, g| b1 * m + (1.0 - b1) * g)?;
        self.v = self.v.zip_map(grads, |v, g| b2 * v + (1.0 - b2) * g * g)?;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let eps = self.eps;
        let step = self.m.zip_map(&self.v, |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps))?;
        params.zip_map(&step, |p, s| p - s)
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_grad(grads: &ParamSet, max_norm: f64) -> Result<ParamSet> {
    if !(max_norm > 0.0) {
        return Err(Error::contract("clip_grad", format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        Ok(grads.scale(max_norm / norm))
    } else {
        Ok(grads.clone())
    }
}

/// Inputs with their regression targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<I> {
    pub inputs: Vec<I>,
    pub targets: Vec<f64>,
}

impl<I: Clone> Batch<I> {
    pub fn new(inputs: Vec<I>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::contract(
                "batch",
                format!("{} inputs for {} targets", inputs.len(), targets.len()),
            ));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Batch<I> {
        Batch {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// An encoded task ready for training.
#[derive(Clone, Debug)]
pub struct Task<I> {
    pub name: String,
    pub train: Batch<I>,
    pub test: Batch<I>,
}

#[derive(Clone, Debug)]
pub struct Episode<I> {
    pub task: String,
    pub support: Batch<I>,
    pub query: Batch<I>,
}

/// A differentiable regressor the training loops can drive.
pub trait Learner: Sync {
    type Input: Clone + Send + Sync;

    /// Mean squared error on the batch and its gradient.
    fn loss_and_grads(
        &self,
        params: &ParamSet,
        batch: &Batch<Self::Input>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, ParamSet)>;

    fn predict(&self, params: &ParamSet, inputs: &[Self::Input]) -> Result<Vec<f64>>;

    fn loss(
        &self,
        params: &ParamSet,
        batch: &Batch<Self::Input>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        Ok(self.loss_and_grads(params, batch, mode, rng)?.0)
    }
}

impl Learner for Net {
    type Input = TokenSequence;

    fn loss_and_grads(
        &self,
        params: &ParamSet,
        batch: &Batch<TokenSequence>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, ParamSet)> {
        Net::loss_and_grads(self, params, &batch.inputs, &batch.targets, mode, rng)
    }

    fn predict(&self, params: &ParamSet, inputs: &[TokenSequence]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(params, inputs, Mode::Eval, &mut rng)
    }

    fn loss(
        &self,
        params: &ParamSet,
        batch: &Batch<TokenSequence>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let preds = self.forward(params, &batch.inputs, mode, rng)?;
        loss_mse(&preds, &batch.targets)
    }
}

/// `f(x) = w * x` with a single parameter `"w"`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalarLinear;

impl ScalarLinear {
    pub fn params(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![w]));
        p
    }
}

impl Learner for ScalarLinear {
    type Input = f64;

    fn loss_and_grads(
        &self,
        params: &ParamSet,
        batch: &Batch<f64>,
        _mode: Mode,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(f64, ParamSet)> {
        let w = params.expect("w")?.data()[0];
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut dw = 0.0;
        for (&x, &y) in batch.inputs.iter().zip(&batch.targets) {
            let r = w * x - y;
            loss += r * r;
            dw += 2.0 * r * x;
        }
        Ok((loss / n, ScalarLinear::params(dw / n)))
    }

    fn predict(&self, params: &ParamSet, inputs: &[f64]) -> Result<Vec<f64>> {
        let w = params.expect("w")?.data()[0];
        Ok(inputs.iter().map(|x| w * x).collect())
    }
}

/// Draws `support_size + query_size` training examples without replacement.
pub fn sample_episode<I: Clone>(
    task: &Task<I>,
    cfg: &MamlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Episode<I>> {
    let need = cfg.episode_size();
    if task.train.len() < need {
        return Err(Error::UndersizedTask {
            task: task.name.clone(),
            have: task.train.len(),
            need,
        });
    }
    let picked = index::sample(rng, task.train.len(), need).into_vec();
    Ok(Episode {
        task: task.name.clone(),
        support: task.train.select(&picked[..cfg.support_size]),
        query: task.train.select(&picked[cfg.support_size..]),
    })
}

/// Adapts a copy of `params` to `support`.
///
/// Returns the adapted parameters and the support loss before each step plus
/// once more after the last step (`inner_steps + 1` values).
pub fn inner_adapt<L: Learner>(
    learner: &L,
    params: &ParamSet,
    support: &Batch<L::Input>,
    cfg: &MamlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamSet, Vec<f64>)> {
    let mut adapted = params.clone();
    let mut adam = AdamState::new(params);
    let mut losses = Vec::with_capacity(cfg.inner_steps + 1);
    for _ in 0..cfg.inner_steps {
        let (loss, grads) = learner.loss_and_grads(&adapted, support, Mode::Train, rng)?;
        losses.push(loss);
        adapted = match cfg.inner_optimizer {
            InnerOptimizer::Sgd => adapted.add_scaled(&grads, -cfg.inner_lr)?,
            InnerOptimizer::Adam => adam.update(&adapted, &grads, cfg.inner_lr)?,
        };
    }
    losses.push(learner.loss(&adapted, support, Mode::Train, rng)?);
    Ok((adapted, losses))
}

/// Summary of one meta-update.
#[derive(Clone, Debug)]
pub struct MetaStepMetrics {
    /// Support loss at the meta-parameters, before adaptation.
    pub support_loss_start: f64,
    /// Support loss after the last inner step.
    pub support_loss_end: f64,
    pub query_loss_before: f64,
    pub query_loss_after: f64,
    pub grad_norm_preclip: f64,
    pub grad_norm_postclip: f64,
    /// Episodes whose support loss did not increase under adaptation.
    pub episodes_improved: usize,
    pub episodes: usize,
    /// The averaged, clipped first-order meta-gradient that was applied.
    pub meta_grad: ParamSet,
}

struct EpisodeResult {
    support_start: f64,
    support_end: f64,
    query_before: f64,
    query_after: f64,
    grad: ParamSet,
}

fn run_episode<L: Learner>(
    learner: &L,
    params: &ParamSet,
    episode: &Episode<L::Input>,
    cfg: &MamlConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query_before = learner.loss(params, &episode.query, Mode::Train, &mut rng)?;
    let (adapted, losses) = inner_adapt(learner, params, &episode.support, cfg, &mut rng)?;
    let (query_after, grad) = learner.loss_and_grads(&adapted, &episode.query, Mode::Train, &mut rng)?;
    Ok(EpisodeResult {
        support_start: losses[0],
        support_end: losses[losses.len() - 1],
        query_before,
        query_after,
        grad,
    })
}

/// One first-order meta-update over a meta-batch of episodes.
///
/// Each episode's query-loss gradient, taken at its adapted parameters, is
/// used directly as that episode's meta-gradient. The average is clipped and
/// applied to `params` with one Adam step at `meta_lr`.
pub fn meta_step<L: Learner>(
    learner: &L,
    params: &ParamSet,
    episodes: &[Episode<L::Input>],
    cfg: &MamlConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamSet, MetaStepMetrics)> {
    if episodes.is_empty() {
        return Err(Error::contract("meta_step", "no episodes"));
    }
    let seeds: Vec<u64> = episodes.iter().map(|_| rng.random()).collect();
    let results: Vec<EpisodeResult> = if cfg.parallel {
        episodes
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(ep, &s)| run_episode(learner, params, ep, cfg, s))
            .collect::<Result<_>>()?
    } else {
        episodes
            .iter()
            .zip(&seeds)
            .map(|(ep, &s)| run_episode(learner, params, ep, cfg, s))
            .collect::<Result<_>>()?
    };

    let n = results.len() as f64;
    let mut sum = params.zeros_like();
    for r in &results {
        sum = sum.add_scaled(&r.grad, 1.0)?;
    }
    let grad = sum.scale(1.0 / n);
    let grad_norm_preclip = grad.global_norm();
    let grad = match cfg.clip_max_norm {
        Some(c) => clip_grad(&grad, c)?,
        None => grad,
    };
    let updated = adam.update(params, &grad, cfg.meta_lr)?;
    let mean = |f: fn(&EpisodeResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let metrics = MetaStepMetrics {
        support_loss_start: mean(|r| r.support_start),
        support_loss_end: mean(|r| r.support_end),
        query_loss_before: mean(|r| r.query_before),
        query_loss_after: mean(|r| r.query_after),
        grad_norm_preclip,
        grad_norm_postclip: grad.global_norm(),
        episodes_improved: results.iter().filter(|r| r.support_end <= r.support_start).count(),
        episodes: results.len(),
        meta_grad: grad,
    };
    Ok((updated, metrics))
}

/// One line of the training progress log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_support_loss: f64,
    pub mean_query_loss: f64,
    pub grad_norm_preclip: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct MamlOutcome {
    pub params: ParamSet,
    pub adam: AdamState,
    pub log: Vec<EpochLog>,
    pub steps: Vec<MetaStepMetrics>,
    /// How many episodes were drawn from each task.
    pub task_draws: BTreeMap<String, usize>,
}

/// Meta-trains from `init` over `tasks`, sampling tasks uniformly with
/// replacement for every meta-batch.
pub fn train_maml<L: Learner>(
    learner: &L,
    init: ParamSet,
    tasks: &[Task<L::Input>],
    cfg: &MamlConfig,
) -> Result<MamlOutcome> {
    cfg.validate()?;
    if tasks.is_empty() && cfg.epochs > 0 {
        return Err(Error::Data("no tasks to meta-train on".into()));
    }
    for t in tasks {
        if t.train.len() < cfg.episode_size() {
            return Err(Error::UndersizedTask {
                task: t.name.clone(),
                have: t.train.len(),
                need: cfg.episode_size(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::with_capacity(cfg.epochs * cfg.steps_per_epoch);
    let mut task_draws = BTreeMap::new();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let (mut support, mut query, mut norm) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.steps_per_epoch {
            let mut episodes = Vec::with_capacity(cfg.meta_batch);
            for _ in 0..cfg.meta_batch {
                let task = &tasks[rng.random_range(0..tasks.len())];
                *task_draws.entry(task.name.clone()).or_insert(0) += 1;
                episodes.push(sample_episode(task, cfg, &mut rng)?);
            }
            let (next, m) = meta_step(learner, &params, &episodes, cfg, &mut adam, &mut rng)?;
            if !next.all_finite() {
                return Err(Error::Data(format!("non-finite parameters at epoch {epoch}")));
            }
            params = next;
            support += m.support_loss_start;
            query += m.query_loss_after;
            norm += m.grad_norm_preclip;
            steps.push(m);
        }
        let k = cfg.steps_per_epoch as f64;
        log.push(EpochLog {
            epoch,
            mean_support_loss: support / k,
            mean_query_loss: query / k,
            grad_norm_preclip: norm / k,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(MamlOutcome {
        params,
        adam,
        log,
        steps,
        task_draws,
    })
}

/// Few-shot adaptation on the target's training split followed by NMSE on
/// its test split, once per seed.
pub fn adapt_and_eval<L: Learner>(
    learner: &L,
    params: &ParamSet,
    target: &Task<L::Input>,
    cfg: &MamlConfig,
    seeds: &[u64],
) -> Result<TrialStats> {
    if target.train.len() < cfg.support_size {
        return Err(Error::UndersizedTask {
            task: target.name.clone(),
            have: target.train.len(),
            need: cfg.support_size,
        });
    }
    let mut values = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = index::sample(&mut rng, target.train.len(), cfg.support_size).into_vec();
        let support = target.train.select(&idx);
        let (adapted, _) = inner_adapt(learner, params, &support, cfg, &mut rng)?;
        let preds = learner.predict(&adapted, &target.test.inputs)?;
        values.push(nmse(&preds, &target.test.targets)?);
    }
    Ok(TrialStats::from_trials(seeds.to_vec(), values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            lr: 1e-4,
            batch_size: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub params: ParamSet,
    pub adam: AdamState,
    /// Mean mini-batch training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: usize,
}

/// Plain mini-batch Adam on MSE over `train`, reshuffled every epoch.
pub fn train_finetune<L: Learner>(
    learner: &L,
    init: ParamSet,
    train: &Batch<L::Input>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::Data("no training records for fine-tuning".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select(chunk);
            let (loss, grads) = learner.loss_and_grads(&params, &batch, Mode::Train, &mut rng)?;
            params = adam.update(&params, &grads, cfg.lr)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(FinetuneOutcome {
        params,
        optimizer_steps: adam.step as usize,
        adam,
        epoch_losses,
    })
}

/// NMSE of `params` on the test split, without adaptation.
pub fn evaluate<L: Learner>(learner: &L, params: &ParamSet, task: &Task<L::Input>) -> Result<f64> {
    let preds = learner.predict(params, &task.test.inputs)?;
    nmse(&preds, &task.test.targets)
}
