//! Transformer regressor over token sequences.
//!
//! Token and learned positional embeddings feed a stack of post-norm encoder
//! blocks. The representation at the `[CLS]` position goes through a
//! `256 -> 128 -> 1` head with ReLU and dropout after the two hidden layers.

pub mod checkpoint;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{NodeId, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::mutenc::{TokenSequence, DEFAULT_MAX_LEN};

/// Hidden and output widths of the regression head.
pub const HEAD_DIMS: [usize; 3] = [256, 128, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub dropout_p: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            vocab_size: 24,
            max_len: DEFAULT_MAX_LEN,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            ff_dim: 64,
            dropout_p: 0.1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.vocab_size == 0 || self.max_len == 0 || self.d_model == 0 || self.ff_dim == 0 {
            return bad(format!("network sizes must be positive: {self:?}"));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Copy)]
struct BuildOpts {
    /// Drop the padding tail before computing.
    trim: bool,
    /// Compute only the `[CLS]` row in the last block.
    cls_only_last: bool,
}

const FAST: BuildOpts = BuildOpts {
    trim: true,
    cls_only_last: true,
};

const FULL: BuildOpts = BuildOpts {
    trim: false,
    cls_only_last: false,
};

/// Squared-error loss averaged over the batch.
pub fn loss_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::contract(
            "loss_mse",
            format!(
                "need equal non-empty lengths, got {} and {}",
                predictions.len(),
                targets.len()
            ),
        ));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok(sum / predictions.len() as f64)
}

#[derive(Clone, Debug)]
pub struct Net {
    config: NetConfig,
}

/// Param handles recorded on a tape, in layout order.
struct Leaves {
    ids: Vec<NodeId>,
    names: Vec<String>,
}

impl Leaves {
    fn get(&self, name: &str) -> NodeId {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .expect("parameter layout checked before building");
        self.ids[i]
    }
}

impl Net {
    pub fn new(config: NetConfig) -> Result<Net> {
        config.validate()?;
        Ok(Net { config })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let c = &self.config;
        let (d, ff) = (c.d_model, c.ff_dim);
        let mut out = vec![
            ("embed.token".to_string(), vec![c.vocab_size, d], Init::Xavier),
            ("embed.position".to_string(), vec![c.max_len, d], Init::Xavier),
        ];
        for l in 0..c.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            for proj in ["q", "k", "v", "o"] {
                out.push((p(&format!("attn.w{proj}")), vec![d, d], Init::Xavier));
                out.push((p(&format!("attn.b{proj}")), vec![d], Init::Zeros));
            }
            out.push((p("ln1.gamma"), vec![d], Init::Ones));
            out.push((p("ln1.beta"), vec![d], Init::Zeros));
            out.push((p("ff.w1"), vec![d, ff], Init::Xavier));
            out.push((p("ff.b1"), vec![ff], Init::Zeros));
            out.push((p("ff.w2"), vec![ff, d], Init::Xavier));
            out.push((p("ff.b2"), vec![d], Init::Zeros));
            out.push((p("ln2.gamma"), vec![d], Init::Ones));
            out.push((p("ln2.beta"), vec![d], Init::Zeros));
        }
        let mut fan_in = d;
        for (name, width) in ["head.fc1", "head.fc2", "head.out"].iter().zip(HEAD_DIMS) {
            out.push((format!("{name}.w"), vec![fan_in, width], Init::Xavier));
            out.push((format!("{name}.b"), vec![width], Init::Zeros));
            fan_in = width;
        }
        out
    }

    /// Names and shapes every parameter set for this network must have.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layout().into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// Xavier-uniform weights, zero biases, unit layer-norm scales.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, init) in self.layout() {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, 1.0),
                Init::Xavier => {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let data = (0..shape[0] * shape[1])
                        .map(|_| rng.random_range(-limit..limit))
                        .collect();
                    Tensor::new(shape, data).expect("layout shape matches data")
                }
            };
            params.insert(name, t);
        }
        params
    }

    /// Errors unless `params` has exactly this network's names and shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let expected = self.param_shapes();
        if params.len() != expected.len() {
            return Err(Error::contract(
                "net",
                format!("expected {} tensors, got {}", expected.len(), params.len()),
            ));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(params.iter()) {
            if name != got_name || shape.as_slice() != got.shape() {
                return Err(Error::contract(
                    "net",
                    format!(
                        "parameter {got_name:?} {:?} does not match expected {name:?} {shape:?}",
                        got.shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[TokenSequence]) -> Result<()> {
        for seq in batch {
            if seq.len() > self.config.max_len || seq.ids.len() != seq.mask.len() {
                return Err(Error::contract(
                    "forward",
                    format!("sequence of length {} exceeds max_len {}", seq.len(), self.config.max_len),
                ));
            }
            if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
                return Err(Error::contract(
                    "forward",
                    format!("token id {id} out of range for vocabulary of {}", self.config.vocab_size),
                ));
            }
            if seq.mask.first() != Some(&1) {
                return Err(Error::contract("forward", "first token must be unmasked"));
            }
        }
        Ok(())
    }

    fn record_params(&self, tape: &mut Tape, params: &ParamSet, trainable: bool) -> Leaves {
        let mut ids = Vec::with_capacity(params.len());
        let mut names = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            ids.push(if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            });
            names.push(name.to_string());
        }
        Leaves { ids, names }
    }

    fn dropout(
        &self,
        tape: &mut Tape,
        x: NodeId,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let p = self.config.dropout_p;
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let n = tape.value(x)?.numel();
        let keep = 1.0 / (1.0 - p);
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        tape.dropout(x, mask)
    }

    fn linear(&self, tape: &mut Tape, leaves: &Leaves, x: NodeId, prefix: &str, w: &str, b: &str) -> Result<NodeId> {
        let h = tape.matmul(x, leaves.get(&format!("{prefix}{w}")))?;
        tape.add(h, leaves.get(&format!("{prefix}{b}")))
    }

    /// Records one example and returns its `[1, 1]` prediction node.
    #[allow(clippy::too_many_arguments)]
    fn build_example(
        &self,
        tape: &mut Tape,
        leaves: &Leaves,
        seq: &TokenSequence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        opts: BuildOpts,
        mut attn: Option<&mut Vec<NodeId>>,
    ) -> Result<NodeId> {
        let c = &self.config;
        let n = if opts.trim {
            seq.mask.iter().rposition(|&m| m == 1).map_or(1, |i| i + 1)
        } else {
            seq.len()
        };
        let ids: Vec<usize> = seq.ids[..n].iter().map(|&i| i as usize).collect();
        let key_mask: Vec<bool> = seq.mask[..n].iter().map(|&m| m == 1).collect();
        let key_mask = (!key_mask.iter().all(|&m| m)).then_some(key_mask);

        let tok = tape.embedding(leaves.get("embed.token"), ids)?;
        let pos = tape.embedding(leaves.get("embed.position"), (0..n).collect())?;
        let mut x = tape.add(tok, pos)?;

        let dh = c.d_model / c.n_heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for l in 0..c.n_layers {
            let p = format!("layers.{l}.");
            let last = l + 1 == c.n_layers;
            let rows = if last && opts.cls_only_last {
                tape.slice(x, 0, 0, 1)?
            } else {
                x
            };
            let q = self.linear(tape, leaves, rows, &p, "attn.wq", "attn.bq")?;
            let k = self.linear(tape, leaves, x, &p, "attn.wk", "attn.bk")?;
            let v = self.linear(tape, leaves, x, &p, "attn.wv", "attn.bv")?;
            let mut heads = Vec::with_capacity(c.n_heads);
            for h in 0..c.n_heads {
                let (s, e) = (h * dh, (h + 1) * dh);
                let qh = tape.slice(q, 1, s, e)?;
                let kh = tape.slice(k, 1, s, e)?;
                let vh = tape.slice(v, 1, s, e)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, inv_sqrt)?;
                let probs = tape.softmax(scores, key_mask.clone())?;
                if let Some(maps) = attn.as_deref_mut() {
                    maps.push(probs);
                }
                heads.push(tape.matmul(probs, vh)?);
            }
            let merged = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat(&heads, 1)?
            };
            let a = self.linear(tape, leaves, merged, &p, "attn.wo", "attn.bo")?;
            let a = self.dropout(tape, a, mode, rng)?;
            let res = tape.add(rows, a)?;
            let h1 = tape.layernorm(
                res,
                leaves.get(&format!("{p}ln1.gamma")),
                leaves.get(&format!("{p}ln1.beta")),
            )?;
            let f = self.linear(tape, leaves, h1, &p, "ff.w1", "ff.b1")?;
            let f = tape.relu(f)?;
            let f = self.linear(tape, leaves, f, &p, "ff.w2", "ff.b2")?;
            let f = self.dropout(tape, f, mode, rng)?;
            let res = tape.add(h1, f)?;
            x = tape.layernorm(
                res,
                leaves.get(&format!("{p}ln2.gamma")),
                leaves.get(&format!("{p}ln2.beta")),
            )?;
        }

        let needs_slice = c.n_layers == 0 || !opts.cls_only_last;
        let mut h = if needs_slice { tape.slice(x, 0, 0, 1)? } else { x };
        for name in ["head.fc1.", "head.fc2."] {
            h = self.linear(tape, leaves, h, name, "w", "b")?;
            h = tape.relu(h)?;
            h = self.dropout(tape, h, mode, rng)?;
        }
        self.linear(tape, leaves, h, "head.out.", "w", "b")
    }

    fn predictions(&self, tape: &Tape, nodes: &[NodeId]) -> Result<Vec<f64>> {
        nodes.iter().map(|&n| tape.value(n)?.item()).collect()
    }

    /// One scalar prediction per sequence.
    pub fn forward(
        &self,
        params: &ParamSet,
        batch: &[TokenSequence],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let leaves = self.record_params(&mut tape, params, false);
        let mut outs = Vec::with_capacity(batch.len());
        for seq in batch {
            outs.push(self.build_example(&mut tape, &leaves, seq, mode, rng, FAST, None)?);
        }
        self.predictions(&tape, &outs)
    }

    /// Predictions computed without any shortcut: full padded length and
    /// every row of every block.
    pub fn forward_reference(&self, params: &ParamSet, batch: &[TokenSequence]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let leaves = self.record_params(&mut tape, params, false);
        let mut outs = Vec::with_capacity(batch.len());
        for seq in batch {
            outs.push(self.build_example(&mut tape, &leaves, seq, Mode::Eval, &mut rng, FULL, None)?);
        }
        self.predictions(&tape, &outs)
    }

    /// Attention weights of every layer and head (`[len, len]` each) for one
    /// sequence in eval mode, over the full padded length.
    pub fn attention_maps(&self, params: &ParamSet, seq: &TokenSequence) -> Result<Vec<Tensor>> {
        self.check_params(params)?;
        self.check_batch(std::slice::from_ref(seq))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let leaves = self.record_params(&mut tape, params, false);
        let mut maps = Vec::new();
        self.build_example(&mut tape, &leaves, seq, Mode::Eval, &mut rng, FULL, Some(&mut maps))?;
        maps.iter().map(|&m| tape.value(m).cloned()).collect()
    }

    /// Mean squared error over the batch and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        params: &ParamSet,
        batch: &[TokenSequence],
        targets: &[f64],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, ParamSet)> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        if batch.is_empty() || batch.len() != targets.len() {
            return Err(Error::contract(
                "loss_mse",
                format!("{} sequences for {} targets", batch.len(), targets.len()),
            ));
        }
        let mut tape = Tape::new();
        let leaves = self.record_params(&mut tape, params, true);
        let mut outs = Vec::with_capacity(batch.len());
        for seq in batch {
            outs.push(self.build_example(&mut tape, &leaves, seq, mode, rng, FAST, None)?);
        }
        let preds = tape.concat(&outs, 0)?;
        let y = tape.constant(Tensor::matrix(targets.len(), 1, targets.to_vec())?);
        let diff = tape.sub(preds, y)?;
        let sq = tape.square(diff)?;
        let loss = tape.mean(sq)?;
        let value = tape.value(loss)?.item()?;
        let mut grads = tape.backward(loss)?;
        let out = leaves
            .names
            .iter()
            .zip(&leaves.ids)
            .map(|(name, &id)| {
                let g = grads
                    .take(id)
                    .ok_or_else(|| Error::MissingProvenance(name.clone()))?;
                Ok((name.clone(), g))
            })
            .collect::<Result<ParamSet>>()?;
        Ok((value, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutenc::{encode_enhanced, parse_mutation_list, Vocabulary};

    fn tiny() -> NetConfig {
        NetConfig {
            max_len: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            ff_dim: 16,
            ..NetConfig::default()
        }
    }

    fn batch() -> Vec<TokenSequence> {
        let v = Vocabulary::default();
        ["M1K", "K2A", "T3W"]
            .iter()
            .map(|m| encode_enhanced("MKTAYI", &parse_mutation_list(m).unwrap(), &v, 16).unwrap())
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig { n_heads: 3, ..tiny() }.validate().is_err());
        assert!(NetConfig { dropout_p: 1.0, ..tiny() }.validate().is_err());
        assert!(tiny().validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let net = Net::new(tiny()).unwrap();
        let a = net.init_params(3);
        assert_eq!(a, net.init_params(3));
        assert_ne!(a, net.init_params(4));
        for (name, t) in a.iter() {
            let last = name.rsplit('.').next().unwrap();
            if last.starts_with('b') {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
            if name.ends_with("gamma") {
                assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let net = Net::new(tiny()).unwrap();
        let p = net.init_params(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = net.forward(&p, &batch(), Mode::Eval, &mut rng).unwrap();
        let b = net.forward(&p, &batch(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn shortcuts_match_reference() {
        let net = Net::new(tiny()).unwrap();
        let p = net.init_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fast = net.forward(&p, &batch(), Mode::Eval, &mut rng).unwrap();
        let slow = net.forward_reference(&p, &batch()).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let net = Net::new(NetConfig { dropout_p: 0.0, ..tiny() }).unwrap();
        let p = net.init_params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = net.forward(&p, &batch(), Mode::Train, &mut rng).unwrap();
        let e = net.forward(&p, &batch(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(t, e);
    }

    #[test]
    fn out_of_range_token_is_rejected() {
        let net = Net::new(tiny()).unwrap();
        let p = net.init_params(0);
        let mut seqs = batch();
        seqs[0].ids[1] = 99;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(net.forward(&p, &seqs, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn mse_loss() {
        assert_eq!(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(loss_mse(&[], &[]).is_err());
        assert!(loss_mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn loss_matches_forward() {
        let net = Net::new(tiny()).unwrap();
        let p = net.init_params(0);
        let targets = [0.5, -0.2, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let preds = net.forward(&p, &batch(), Mode::Eval, &mut rng).unwrap();
        let (loss, grads) = net
            .loss_and_grads(&p, &batch(), &targets, Mode::Eval, &mut rng)
            .unwrap();
        assert!((loss - loss_mse(&preds, &targets).unwrap()).abs() < 1e-14);
        p.check_layout(&grads).unwrap();
    }
}
