use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_params, Batch, Evaluation, MetricKind, Split, Task, TaskError};
use crate::rng::{rng_for, Stream};

/// Single-head self-attention classifier on synthetic token sequences.
///
/// Tokens are embedded, passed through one scaled dot-product attention
/// layer, mean-pooled over positions and fed to a linear softmax
/// classifier. The label of a sequence is its most frequent token, ties
/// going to the smallest token id.
///
/// Parameters are laid out flat as `[embedding (V x D), W_q, W_k, W_v
/// (D x D each), W_out (V x D), b_out (V)]`, all row-major.
#[derive(Debug, Clone)]
pub struct TinyAttentionTask {
    vocab: usize,
    seq_len: usize,
    d_model: usize,
    sequences: Vec<Vec<usize>>,
    labels: Vec<usize>,
    split: Split,
}

struct Layout {
    emb: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    total: usize,
}

/// Activations kept for the backward pass of one sequence.
struct Forward {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    pooled: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

/// Most frequent token, smallest id on ties.
pub(crate) fn majority_label(seq: &[usize], vocab: usize) -> usize {
    let mut counts = vec![0usize; vocab];
    seq.iter().for_each(|&t| counts[t] += 1);
    let best = *counts.iter().max().expect("vocab is non-empty");
    counts.iter().position(|&c| c == best).expect("max is present")
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for r in row.iter_mut() {
        *r = (*r - max).exp();
        sum += *r;
    }
    row.iter_mut().for_each(|r| *r /= sum);
}

impl TinyAttentionTask {
    pub fn new(vocab: usize, seq_len: usize, d_model: usize, n_samples: usize, seed: u64) -> Result<Self, TaskError> {
        if vocab < 2 || seq_len == 0 || d_model == 0 {
            return Err(TaskError::InvalidConfig(
                "attention task needs vocab_size >= 2, seq_len >= 1, d_model >= 1".into(),
            ));
        }
        if n_samples < 5 {
            return Err(TaskError::InvalidConfig("attention task needs at least 5 samples".into()));
        }
        let mut rng = rng_for(seed, Stream::Dataset, 0);
        let sequences: Vec<Vec<usize>> =
            (0..n_samples).map(|_| (0..seq_len).map(|_| rng.random_range(0..vocab)).collect()).collect();
        let labels = sequences.iter().map(|s| majority_label(s, vocab)).collect();
        let split = Split::new(n_samples, seed);
        Ok(Self { vocab, seq_len, d_model, sequences, labels, split })
    }

    fn layout(&self) -> Layout {
        let (v, d) = (self.vocab, self.d_model);
        let emb = 0;
        let wq = emb + v * d;
        let wk = wq + d * d;
        let wv = wk + d * d;
        let wo = wv + d * d;
        let bo = wo + v * d;
        Layout { emb, wq, wk, wv, wo, bo, total: bo + v }
    }

    pub fn sequence(&self, i: usize) -> (&[usize], usize) {
        (&self.sequences[i], self.labels[i])
    }

    /// Attention weights (`T x T`, row-major) for an arbitrary token sequence.
    pub fn attention_weights(&self, params: &[f64], tokens: &[usize]) -> Result<Vec<f64>, TaskError> {
        check_params(params, self.param_dim())?;
        Ok(self.forward(params, tokens).attn)
    }

    /// Classifier output distribution for an arbitrary token sequence.
    pub fn class_probabilities(&self, params: &[f64], tokens: &[usize]) -> Result<Vec<f64>, TaskError> {
        check_params(params, self.param_dim())?;
        Ok(self.forward(params, tokens).probs)
    }

    fn forward(&self, params: &[f64], tokens: &[usize]) -> Forward {
        let lay = self.layout();
        let (d, t_len, nv) = (self.d_model, tokens.len(), self.vocab);
        let mut x = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            x[t * d..(t + 1) * d].copy_from_slice(&params[lay.emb + tok * d..lay.emb + (tok + 1) * d]);
        }
        let project = |w: usize| {
            let mut out = vec![0.0; t_len * d];
            for t in 0..t_len {
                for i in 0..d {
                    let xi = x[t * d + i];
                    for j in 0..d {
                        out[t * d + j] += xi * params[w + i * d + j];
                    }
                }
            }
            out
        };
        let q = project(lay.wq);
        let k = project(lay.wk);
        let v = project(lay.wv);

        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = vec![0.0; t_len * t_len];
        for t in 0..t_len {
            let row = &mut attn[t * t_len..(t + 1) * t_len];
            for (s, r) in row.iter_mut().enumerate() {
                *r = scale * (0..d).map(|j| q[t * d + j] * k[s * d + j]).sum::<f64>();
            }
            softmax_in_place(row);
        }

        // mean over t of (A V)_t == (column means of A) V
        let mut pooled = vec![0.0; d];
        for t in 0..t_len {
            for s in 0..t_len {
                let a = attn[t * t_len + s] / t_len as f64;
                for j in 0..d {
                    pooled[j] += a * v[s * d + j];
                }
            }
        }

        let mut logits: Vec<f64> = (0..nv)
            .map(|c| params[lay.bo + c] + (0..d).map(|j| params[lay.wo + c * d + j] * pooled[j]).sum::<f64>())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        softmax_in_place(&mut logits);
        Forward { x, q, k, v, attn, pooled, probs: logits, log_probs }
    }

    /// Adds the gradient of `-log p(label) / n` to `grad`; returns the unscaled loss.
    fn backward(&self, params: &[f64], tokens: &[usize], label: usize, n: f64, grad: &mut [f64]) -> f64 {
        let lay = self.layout();
        let (d, t_len, nv) = (self.d_model, tokens.len(), self.vocab);
        let f = self.forward(params, tokens);

        let mut dz = f.probs.clone();
        dz[label] -= 1.0;
        let mut d_pooled = vec![0.0; d];
        for c in 0..nv {
            let dzc = dz[c] / n;
            grad[lay.bo + c] += dzc;
            for j in 0..d {
                grad[lay.wo + c * d + j] += dzc * f.pooled[j];
                d_pooled[j] += params[lay.wo + c * d + j] * dzc;
            }
        }

        // dH_t = d_pooled / T for every position t
        let dh: Vec<f64> = d_pooled.iter().map(|g| g / t_len as f64).collect();
        let mut d_v = vec![0.0; t_len * d];
        let mut d_scores = vec![0.0; t_len * t_len];
        for t in 0..t_len {
            let row = &f.attn[t * t_len..(t + 1) * t_len];
            let d_attn: Vec<f64> = (0..t_len).map(|s| (0..d).map(|j| dh[j] * f.v[s * d + j]).sum()).collect();
            let dot: f64 = row.iter().zip(&d_attn).map(|(a, g)| a * g).sum();
            for s in 0..t_len {
                d_scores[t * t_len + s] = row[s] * (d_attn[s] - dot);
                for j in 0..d {
                    d_v[s * d + j] += row[s] * dh[j];
                }
            }
        }

        let scale = 1.0 / (d as f64).sqrt();
        let mut d_q = vec![0.0; t_len * d];
        let mut d_k = vec![0.0; t_len * d];
        for t in 0..t_len {
            for s in 0..t_len {
                let g = scale * d_scores[t * t_len + s];
                for j in 0..d {
                    d_q[t * d + j] += g * f.k[s * d + j];
                    d_k[s * d + j] += g * f.q[t * d + j];
                }
            }
        }

        let mut d_x = vec![0.0; t_len * d];
        for (w, dy) in [(lay.wq, &d_q), (lay.wk, &d_k), (lay.wv, &d_v)] {
            for t in 0..t_len {
                for i in 0..d {
                    let xi = f.x[t * d + i];
                    for j in 0..d {
                        grad[w + i * d + j] += xi * dy[t * d + j];
                        d_x[t * d + i] += dy[t * d + j] * params[w + i * d + j];
                    }
                }
            }
        }
        for (t, &tok) in tokens.iter().enumerate() {
            for i in 0..d {
                grad[lay.emb + tok * d + i] += d_x[t * d + i];
            }
        }
        -f.log_probs[label]
    }
}

impl Task for TinyAttentionTask {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn param_dim(&self) -> usize {
        self.layout().total
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        let lay = self.layout();
        let mut rng = rng_for(seed, Stream::Init, 0);
        let w_scale = 1.0 / (self.d_model as f64).sqrt();
        (0..lay.total)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if i < lay.wq {
                    z
                } else if i < lay.bo {
                    z * w_scale
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn train_size(&self) -> Option<usize> {
        Some(self.split.train.len())
    }

    fn sample_batch(&self, seed: u64, batch_size: usize) -> Batch {
        self.split.sample(seed, batch_size)
    }

    fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64, TaskError> {
        check_params(params, self.param_dim())?;
        let idx = self.split.resolve(batch);
        let total: f64 = idx.iter().map(|&i| -self.forward(params, &self.sequences[i]).log_probs[self.labels[i]]).sum();
        Ok(total / idx.len() as f64)
    }

    fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), TaskError> {
        check_params(params, self.param_dim())?;
        let idx = self.split.resolve(batch);
        let n = idx.len() as f64;
        let mut grad = vec![0.0; self.param_dim()];
        let total: f64 =
            idx.iter().map(|&i| self.backward(params, &self.sequences[i], self.labels[i], n, &mut grad)).sum();
        Ok((total / n, grad))
    }

    fn evaluate(&self, params: &[f64]) -> Result<Evaluation, TaskError> {
        check_params(params, self.param_dim())?;
        let val = &self.split.val;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for &i in val {
            let f = self.forward(params, &self.sequences[i]);
            loss -= f.log_probs[self.labels[i]];
            let pred = f
                .probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
                .0;
            correct += usize::from(pred == self.labels[i]);
        }
        let n = val.len() as f64;
        Ok(Evaluation { loss: loss / n, metric: correct as f64 / n })
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::Accuracy
    }

    fn metadata(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("vocab_size", self.vocab as f64),
            ("seq_len", self.seq_len as f64),
            ("d_model", self.d_model as f64),
            ("bayes_accuracy", 1.0),
        ])
    }
}
