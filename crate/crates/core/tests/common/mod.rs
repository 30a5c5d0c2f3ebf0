//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::path::PathBuf;

use cca_core::encoder::{EncoderConfig, Family};
use cca_core::{Encoder, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures")
}

pub fn tiny_config(family: Family, vocab_size: usize, max_len: usize) -> EncoderConfig {
    match family {
        Family::Transformer => EncoderConfig {
            family,
            num_layers: 2,
            hidden_size: 8,
            num_heads: 2,
            embed_size: 8,
            vocab_size,
            max_len,
            dropout: 0.1,
        },
        Family::Recurrent => EncoderConfig {
            family,
            num_layers: 2,
            hidden_size: 8,
            num_heads: 1,
            embed_size: 6,
            vocab_size,
            max_len,
            dropout: 0.1,
        },
    }
}

fn get(t: &Tensor, r: usize, c: usize) -> f64 {
    t.data()[r * t.cols() + c]
}

fn p<'a>(enc: &'a Encoder, name: &str) -> &'a Tensor {
    enc.params().get(name).unwrap_or_else(|| panic!("missing {name}"))
}

/// `x · W + b` for each row.
fn affine(x: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| b.data()[j] + (0..w.rows()).map(|i| row[i] * get(w, i, j)).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &[Vec<f64>], g: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g.data()[j] + b.data()[j])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

/// Post-norm transformer written as explicit loops. `visible(i, j)` lets
/// query `i` attend to key `j`.
pub fn naive_transformer(enc: &Encoder, ids: &[usize], visible: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<f64>> {
    let cfg = enc.config();
    let n = ids.len();
    let h = cfg.hidden_size;
    let heads = cfg.num_heads;
    let hd = h / heads;
    let tok = p(enc, "embeddings.token");
    let pos = p(enc, "embeddings.position");
    let x: Vec<Vec<f64>> = (0..n)
        .map(|t| (0..h).map(|j| get(tok, ids[t], j) + get(pos, t, j)).collect())
        .collect();
    let mut x = layer_norm(&x, p(enc, "embeddings.norm.gain"), p(enc, "embeddings.norm.bias"));
    for l in 0..cfg.num_layers {
        let w = |s: &str| p(enc, &format!("layers.{l}.{s}"));
        let q = affine(&x, w("attn.query.weight"), w("attn.query.bias"));
        let k = affine(&x, w("attn.key.weight"), w("attn.key.bias"));
        let v = affine(&x, w("attn.value.weight"), w("attn.value.bias"));
        let mut ctx = vec![vec![0.0; h]; n];
        for head in 0..heads {
            let off = head * hd;
            for i in 0..n {
                let scores: Vec<Option<f64>> = (0..n)
                    .map(|j| {
                        visible(i, j).then(|| {
                            (0..hd).map(|d| q[i][off + d] * k[j][off + d]).sum::<f64>() / (hd as f64).sqrt()
                        })
                    })
                    .collect();
                let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let exps: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - max).exp())).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..n {
                    for d in 0..hd {
                        ctx[i][off + d] += exps[j] / z * v[j][off + d];
                    }
                }
            }
        }
        let attn = affine(&ctx, w("attn.output.weight"), w("attn.output.bias"));
        let x1 = layer_norm(&add(&x, &attn), w("attn_norm.gain"), w("attn_norm.bias"));
        let mut f = affine(&x1, w("ffn.in.weight"), w("ffn.in.bias"));
        f.iter_mut().flatten().for_each(|z| *z = gelu(*z));
        let f = affine(&f, w("ffn.out.weight"), w("ffn.out.bias"));
        x = layer_norm(&add(&x1, &f), w("ffn_norm.gain"), w("ffn_norm.bias"));
    }
    x
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stacked LSTM written step by step; gate blocks are i, f, g, o.
pub fn naive_lstm(enc: &Encoder, ids: &[usize]) -> Vec<Vec<f64>> {
    let cfg = enc.config();
    let tok = p(enc, "embeddings.token");
    let mut x: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| (0..tok.cols()).map(|j| get(tok, id, j)).collect())
        .collect();
    for l in 0..cfg.num_layers {
        let wi = p(enc, &format!("layers.{l}.lstm.input.weight"));
        let wh = p(enc, &format!("layers.{l}.lstm.hidden.weight"));
        let b = p(enc, &format!("layers.{l}.lstm.bias"));
        let width = wh.rows();
        let mut h = vec![0.0; width];
        let mut c = vec![0.0; width];
        let mut out = Vec::with_capacity(x.len());
        for xt in &x {
            let gate = |k: usize| -> f64 {
                b.data()[k]
                    + (0..wi.rows()).map(|i| xt[i] * get(wi, i, k)).sum::<f64>()
                    + (0..width).map(|i| h[i] * get(wh, i, k)).sum::<f64>()
            };
            let pre: Vec<f64> = (0..4 * width).map(gate).collect();
            for u in 0..width {
                let i = sigmoid(pre[u]);
                let f = sigmoid(pre[width + u]);
                let g = pre[2 * width + u].tanh();
                c[u] = f * c[u] + i * g;
            }
            for u in 0..width {
                h[u] = sigmoid(pre[3 * width + u]) * c[u].tanh();
            }
            out.push(h.clone());
        }
        x = out;
    }
    x
}

/// Per-definition metrics from an explicit list of (gold, pred) items.
pub struct BruteMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
}

pub fn brute_metrics(counts: &[Vec<u64>]) -> BruteMetrics {
    let n = counts.len();
    let mut items = Vec::new();
    for (g, row) in counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            for _ in 0..c {
                items.push((g, p));
            }
        }
    }
    let safe = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let (mut precision, mut recall, mut f1) = (vec![], vec![], vec![]);
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    for c in 0..n {
        let tp = items.iter().filter(|&&(g, p)| g == c && p == c).count() as f64;
        let fp = items.iter().filter(|&&(g, p)| g != c && p == c).count() as f64;
        let fneg = items.iter().filter(|&&(g, p)| g == c && p != c).count() as f64;
        let pr = safe(tp, tp + fp);
        let rc = safe(tp, tp + fneg);
        precision.push(pr);
        recall.push(rc);
        f1.push(safe(2.0 * pr * rc, pr + rc));
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let mp = safe(tp_all, tp_all + fp_all);
    let mr = safe(tp_all, tp_all + fn_all);
    BruteMetrics {
        macro_f1: if n == 0 { 0.0 } else { f1.iter().sum::<f64>() / n as f64 },
        micro_f1: safe(2.0 * mp * mr, mp + mr),
        accuracy: safe(items.iter().filter(|(g, p)| g == p).count() as f64, items.len() as f64),
        precision,
        recall,
        f1,
    }
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Random coordinates `(tensor, index)` covering every tensor at least once.
pub fn sample_coords(shapes: &[usize], per_tensor: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (t, &len) in shapes.iter().enumerate() {
        for _ in 0..per_tensor.min(len) {
            out.push((t, rng.gen_range(0..len)));
        }
    }
    out
}

/// Central-difference check of `grads` over sampled coordinates;
/// `perturb(model, tensor, index, delta)` shifts one parameter. Returns the
/// worst relative error.
pub fn check_gradients<M: Clone>(
    model: &M,
    grads: &[Tensor],
    perturb: impl Fn(&mut M, usize, usize, f64),
    loss: impl Fn(&M) -> f64,
    seed: u64,
) -> f64 {
    let shapes: Vec<usize> = grads.iter().map(|t| t.len()).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (t, k) in sample_coords(&shapes, 3, seed) {
        let mut up = model.clone();
        perturb(&mut up, t, k, h);
        let mut down = model.clone();
        perturb(&mut down, t, k, -h);
        let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
        let e = rel_err(grads[t].data()[k], numeric);
        assert!(e.is_finite());
        worst = worst.max(e);
    }
    worst
}

pub fn random_ids(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(5..vocab)).collect()
}
