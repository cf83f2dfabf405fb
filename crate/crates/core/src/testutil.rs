//! Shared fixtures and plain-f64 reference computations for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::config::ModelConfig;
use crate::corpus::{prepare_from_parts, PreparedExample, Vocabulary, RESERVED};
use crate::model::Model;

pub fn vocab(size: usize) -> Vocabulary {
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain((RESERVED.len()..size).map(|i| format!("w{i}")))
        .collect();
    Vocabulary::from_tokens(tokens).unwrap()
}

pub fn config(agents: usize, hidden: usize, embed: usize, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        agents,
        hidden,
        embed,
        vocab_size,
        per_agent_limit: 16,
        init_scale: 0.5,
        ..Default::default()
    }
}

pub fn model(config: ModelConfig, seed: u64) -> Model {
    let v = vocab(config.vocab_size);
    Model::new(config, v, seed).unwrap()
}

/// Random in-vocabulary tokens per agent (lengths from `lens`) plus one OOV
/// token in the first agent; the summary is the first agent's first tokens.
pub fn example(vocab: &Vocabulary, lens: &[usize], summary_len: usize, seed: u64) -> PreparedExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<String>> = lens
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| vocab.tokens()[rng.gen_range(RESERVED.len()..vocab.len())].clone())
                .collect()
        })
        .collect();
    if let Some(first) = parts.first_mut().filter(|p| p.len() > 1) {
        first[1] = "zzoov".to_string();
    }
    let summary: Vec<String> = parts[0].iter().take(summary_len).cloned().collect();
    prepare_from_parts("t", parts, &summary, vocab, 32)
}

pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|r| {
            w.data()[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One LSTM step with gates stacked input, forget, candidate, output.
pub fn lstm(w: &Tensor, b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let xh: Vec<f64> = x.iter().chain(h).copied().collect();
    let z = add(&matvec(w, &xh), b);
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for k in 0..n {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[n + k]);
        let g = z[2 * n + k].tanh();
        let o = sigmoid(z[3 * n + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

/// `v · tanh(W_k key + W_q query + b)` for each key.
pub fn additive(v: &[f64], wk: &Tensor, wq: &Tensor, b: &[f64], keys: &[Vec<f64>], query: &[f64]) -> Vec<f64> {
    let q = add(&matvec(wq, query), b);
    keys.iter()
        .map(|k| {
            let s: Vec<f64> = add(&matvec(wk, k), &q).iter().map(|t| t.tanh()).collect();
            dot(v, &s)
        })
        .collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
