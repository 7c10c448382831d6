#![allow(dead_code)]

use std::fs;
use std::path::Path;

use metaforge::engine::{forward_op, vjp, Op, Tensor};
use metaforge::evalkit::SyntheticFamily;
use metaforge::metatrain::{InnerOptimizer, MamlConfig};
use metaforge::net::NetConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PRIMITIVES: [&str; 17] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "softmax_lastdim",
    "layernorm",
    "embedding_lookup",
    "dropout_mask_apply",
    "mean",
    "sum",
    "square",
    "sqrt",
    "transpose_last2",
    "concat",
    "slice",
];

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x = rng.random_range(0.1..2.0);
            if rng.random::<bool>() {
                -x
            } else {
                x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A random instance of the named primitive: the op and its inputs.
pub fn random_case(name: &str, rng: &mut ChaCha8Rng) -> (Op, Vec<Tensor>) {
    let mut dim = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    let (m, k, n) = (dim(1, 5), dim(1, 5), dim(1, 5));
    let shape = [m, n];
    match name {
        "matmul" => (Op::MatMul, vec![random_tensor(rng, &[m, k], -1.0, 1.0), random_tensor(rng, &[k, n], -1.0, 1.0)]),
        "add" => {
            let b = if rng.random::<bool>() { vec![n] } else { shape.to_vec() };
            (Op::Add, vec![random_tensor(rng, &shape, -1.0, 1.0), random_tensor(rng, &b, -1.0, 1.0)])
        }
        "sub" => (Op::Sub, vec![random_tensor(rng, &shape, -1.0, 1.0), random_tensor(rng, &shape, -1.0, 1.0)]),
        "mul" => (Op::Mul, vec![random_tensor(rng, &shape, -1.0, 1.0), random_tensor(rng, &shape, -1.0, 1.0)]),
        "scale" => (Op::Scale(rng.random_range(-2.0..2.0)), vec![random_tensor(rng, &shape, -1.0, 1.0)]),
        "relu" => (Op::Relu, vec![away_from_zero(rng, &shape)]),
        "softmax_lastdim" => {
            let mask = if rng.random::<bool>() {
                let mut m: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
                m[rng.random_range(0..n)] = true;
                Some(m)
            } else {
                None
            };
            (Op::SoftmaxLastDim { key_mask: mask }, vec![random_tensor(rng, &shape, -2.0, 2.0)])
        }
        "layernorm" => {
            let n = n.max(2);
            (
                Op::LayerNorm { eps: 1e-5 },
                vec![
                    random_tensor(rng, &[m, n], -2.0, 2.0),
                    random_tensor(rng, &[n], 0.5, 1.5),
                    random_tensor(rng, &[n], -0.5, 0.5),
                ],
            )
        }
        "embedding_lookup" => {
            let vocab = k + 1;
            let ids = (0..m).map(|_| rng.random_range(0..vocab)).collect();
            (Op::EmbeddingLookup { ids }, vec![random_tensor(rng, &[vocab, n], -1.0, 1.0)])
        }
        "dropout_mask_apply" => {
            let mask = (0..m * n).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { 1.0 / 0.7 }).collect();
            (Op::DropoutMaskApply { mask }, vec![random_tensor(rng, &shape, -1.0, 1.0)])
        }
        "mean" => (Op::Mean, vec![random_tensor(rng, &shape, -1.0, 1.0)]),
        "sum" => (Op::Sum, vec![random_tensor(rng, &shape, -1.0, 1.0)]),
        "square" => (Op::Square, vec![random_tensor(rng, &shape, -1.0, 1.0)]),
        "sqrt" => (Op::Sqrt, vec![random_tensor(rng, &shape, 0.5, 3.0)]),
        "transpose_last2" => (Op::TransposeLast2, vec![random_tensor(rng, &shape, -1.0, 1.0)]),
        "concat" => {
            let axis = rng.random_range(0..2);
            let parts = (0..rng.random_range(2..=3))
                .map(|_| {
                    let mut s = shape;
                    s[axis] = rng.random_range(1..=4);
                    random_tensor(rng, &s, -1.0, 1.0)
                })
                .collect();
            (Op::Concat { axis }, parts)
        }
        "slice" => {
            let axis = rng.random_range(0..2);
            let len = shape[axis];
            let start = rng.random_range(0..len);
            let end = rng.random_range(start + 1..=len);
            (Op::Slice { axis, start, end }, vec![random_tensor(rng, &shape, -1.0, 1.0)])
        }
        other => panic!("unknown primitive {other}"),
    }
}

/// Central-difference check of one VJP on `<g, f(x)>` with a random `g`.
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)`.
pub fn vjp_error(op: &Op, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let out = forward_op(op, &refs).unwrap();
    let g = random_tensor(rng, out.shape(), -1.0, 1.0);
    let needs = vec![true; inputs.len()];
    let grads = vjp(op, &refs, &out, &g, &needs).unwrap();
    let objective = |xs: &[Tensor]| -> f64 {
        let r: Vec<&Tensor> = xs.iter().collect();
        let y = forward_op(op, &r).unwrap();
        y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for (i, grad) in grads.iter().enumerate() {
        let grad = grad.as_ref().expect("gradient for every input");
        assert_eq!(grad.shape(), inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let mut xs = inputs.to_vec();
            let shift = |xs: &mut Vec<Tensor>, d: f64| {
                let mut data = inputs[i].data().to_vec();
                data[j] += d;
                xs[i] = Tensor::new(inputs[i].shape().to_vec(), data).unwrap();
            };
            shift(&mut xs, h);
            let up = objective(&xs);
            shift(&mut xs, -h);
            let down = objective(&xs);
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    worst
}

/// Worst error of `trials` random checks of each primitive.
pub fn primitive_errors(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    PRIMITIVES
        .iter()
        .map(|&name| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let worst = (0..trials)
                .map(|_| {
                    let (op, inputs) = random_case(name, &mut rng);
                    vjp_error(&op, &inputs, &mut rng)
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// Small network used by the protocol tests.
pub fn tiny_net() -> NetConfig {
    NetConfig {
        max_len: 40,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ff_dim: 16,
        dropout_p: 0.0,
        ..NetConfig::default()
    }
}

/// Network and meta-training settings for the synthetic efficacy runs.
pub fn synthetic_net() -> NetConfig {
    NetConfig {
        max_len: 64,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        ff_dim: 32,
        dropout_p: 0.0,
        ..NetConfig::default()
    }
}

pub fn synthetic_maml(epochs: usize, steps_per_epoch: usize) -> MamlConfig {
    MamlConfig {
        epochs,
        steps_per_epoch,
        inner_lr: 0.003,
        meta_lr: 0.002,
        inner_optimizer: InnerOptimizer::Sgd,
        ..MamlConfig::default()
    }
}

/// Writes raw (unnormalised) synthetic records for `task` as CSV.
pub fn write_raw_task(path: &Path, family: &SyntheticFamily, index: usize, task: &str) {
    let mut text = String::from("sequence,mutation,target,source\n");
    for r in family.records(index, task) {
        text += &format!("{},{},{},{}\n", r.sequence, r.mutation_text(), r.target * 3.0 + 1.0, r.source);
    }
    fs::write(path, text).unwrap();
}

/// Reconstructs the wild type from an untruncated enhanced encoding.
pub fn reconstruct_wild_type(ids: &[u32], vocab: &metaforge::mutenc::Vocabulary) -> String {
    use metaforge::mutenc::{CLS, SEP};
    assert_eq!(ids[0], CLS);
    let parts: Vec<&[u32]> = ids[1..].split(|&t| t == SEP).collect();
    assert_eq!(parts.len() % 3, 1, "segment/orig/repl pattern");
    let mut wt = String::new();
    for (i, part) in parts.iter().enumerate() {
        match i % 3 {
            0 | 1 => {
                for &t in *part {
                    wt += vocab.token(t).unwrap();
                }
            }
            _ => assert_eq!(part.len(), 1, "one replacement residue"),
        }
    }
    wt
}
