//! The selector network and its exact gradients.
//!
//! Each candidate `c` is scored independently through a shared one-hidden-
//! layer network: `logit_c = w2 . tanh(W1 u_c + b1) + b2`, where `u_c` is
//! the sparse query/candidate/product input. Candidate probabilities are a
//! softmax over the set's logits and training minimizes cross-entropy
//! against the gold index.
//!
//! `W1` lives in memory column-major (`w1[j * hidden + i]` for input column
//! `j`, hidden row `i`) so a sparse input touches contiguous runs; the
//! checkpoint file stores it row-major, see `checkpoint.rs`.

use rand::Rng;

use super::featurizer::{ModelConfig, SparseVec};
use crate::seeds;

/// All learnable state plus the shape and init provenance needed to use it.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SelectorParams {
    pub config: ModelConfig,
    /// Seed the initialization was drawn from; carried for provenance.
    pub seed: u64,
    /// Column-major `[input_dim * hidden_dim]`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl SelectorParams {
    /// Uniform init on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer,
    /// biases included, from the run seed's `"init"` stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = seeds::rng_for(seed, "init", 0);
        let input_dim = config.input_dim();
        let bound1 = 1.0 / (input_dim as f64).sqrt();
        let w1: Vec<f64> = (0..input_dim * config.hidden_dim)
            .map(|_| rng.gen_range(-bound1..=bound1))
            .collect();
        let b1: Vec<f64> = (0..config.hidden_dim)
            .map(|_| rng.gen_range(-bound1..=bound1))
            .collect();
        let bound2 = 1.0 / (config.hidden_dim as f64).sqrt();
        let w2: Vec<f64> = (0..config.hidden_dim)
            .map(|_| rng.gen_range(-bound2..=bound2))
            .collect();
        let b2 = rng.gen_range(-bound2..=bound2);
        Self {
            config: *config,
            seed,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Hidden activations for one sparse input.
    pub fn hidden_for(&self, input: &SparseVec) -> Vec<f64> {
        let hidden = self.config.hidden_dim;
        let mut z = self.b1.clone();
        for (j, v) in input.iter() {
            let col = &self.w1[j as usize * hidden..(j as usize + 1) * hidden];
            for (zi, wi) in z.iter_mut().zip(col) {
                *zi += wi * v;
            }
        }
        for zi in &mut z {
            *zi = zi.tanh();
        }
        z
    }

    pub fn logit_for(&self, hidden: &[f64]) -> f64 {
        self.w2
            .iter()
            .zip(hidden)
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + self.b2
    }
}

/// Gradient accumulator with the same shapes as [`SelectorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            w1: vec![0.0; config.input_dim() * config.hidden_dim],
            b1: vec![0.0; config.hidden_dim],
            w2: vec![0.0; config.hidden_dim],
            b2: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        self.b2 += other.b2;
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.w1 {
            *a *= factor;
        }
        for a in &mut self.b1 {
            *a *= factor;
        }
        for a in &mut self.w2 {
            *a *= factor;
        }
        self.b2 *= factor;
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Forward pass over one candidate set, keeping what backward needs.
pub struct ForwardPass {
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

pub fn forward(params: &SelectorParams, inputs: &[SparseVec]) -> ForwardPass {
    let hidden: Vec<Vec<f64>> = inputs.iter().map(|u| params.hidden_for(u)).collect();
    let logits: Vec<f64> = hidden.iter().map(|h| params.logit_for(h)).collect();
    ForwardPass { hidden, logits }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `-log p_gold` via log-sum-exp.
pub fn loss_from_logits(logits: &[f64], gold: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    lse - logits[gold]
}

pub fn loss_only(params: &SelectorParams, inputs: &[SparseVec], gold: usize) -> f64 {
    loss_from_logits(&forward(params, inputs).logits, gold)
}

/// Argmax with ties resolved to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// Loss and exact gradients for one task.
///
/// With `p = softmax(logits)` the logit gradient is `p_c - [c == gold]`,
/// which backpropagates through the shared network once per candidate.
/// `d_b2` is the sum of logit gradients, identically zero in exact
/// arithmetic because softmax is shift-invariant.
pub fn loss_and_grad(
    params: &SelectorParams,
    inputs: &[SparseVec],
    gold: usize,
) -> (f64, Gradients) {
    assert!(gold < inputs.len(), "gold index out of range");
    let hidden_dim = params.config.hidden_dim;
    let pass = forward(params, inputs);
    let loss = loss_from_logits(&pass.logits, gold);
    let probs = softmax(&pass.logits);

    let mut grads = Gradients::zeros(&params.config);
    let mut dz = vec![0.0f64; hidden_dim];
    for (c, input) in inputs.iter().enumerate() {
        let dlogit = probs[c] - if c == gold { 1.0 } else { 0.0 };
        let h = &pass.hidden[c];
        for i in 0..hidden_dim {
            grads.w2[i] += dlogit * h[i];
            dz[i] = dlogit * params.w2[i] * (1.0 - h[i] * h[i]);
            grads.b1[i] += dz[i];
        }
        grads.b2 += dlogit;
        for (j, v) in input.iter() {
            let col = &mut grads.w1[j as usize * hidden_dim..(j as usize + 1) * hidden_dim];
            for (gi, dzi) in col.iter_mut().zip(&dz) {
                *gi += dzi * v;
            }
        }
    }
    (loss, grads)
}

/// Gradients smaller than this are below what central differences can
/// measure: the loss is O(1) in f64, so the difference quotient carries
/// absolute noise around `ulp(loss) / (2 eps)` (~1e-10 at eps = 1e-5),
/// which swamps the 1e-4 relative-error budget once the true gradient
/// drops under a few 1e-6. The clearest case is `b2`, whose true gradient
/// is identically zero by softmax shift invariance.
const GRAD_NOISE_FLOOR: f64 = 1e-6;

/// The comparison [`grad_check`] applies per coordinate:
/// `|ga - gn| / max(1e-12, |ga| + |gn|)`, flushed to zero when both sides
/// sit under [`GRAD_NOISE_FLOOR`] (the probe cannot resolve them).
pub fn relative_error(ga: f64, gn: f64) -> f64 {
    if ga.abs() < GRAD_NOISE_FLOOR && gn.abs() < GRAD_NOISE_FLOOR {
        return 0.0;
    }
    (ga - gn).abs() / f64::max(1e-12, ga.abs() + gn.abs())
}

/// Worst relative error between analytic and central-difference gradients.
///
/// Checks every `b1`, `w2`, and `b2` coordinate plus `w1_samples` random
/// `W1` coordinates drawn from columns the inputs actually touch (inactive
/// columns have exactly zero gradient on both sides). Relative error is
/// `|ga - gn| / max(1e-12, |ga| + |gn|)`; coordinates where both sides sit
/// below [`GRAD_NOISE_FLOOR`] count as matching, since the probe cannot
/// resolve them.
pub fn grad_check(
    params: &SelectorParams,
    inputs: &[SparseVec],
    gold: usize,
    eps: f64,
    w1_samples: usize,
    sample_seed: u64,
) -> f64 {
    let (_, analytic) = loss_and_grad(params, inputs, gold);
    let mut probe = params.clone();
    let hidden_dim = params.config.hidden_dim;

    let rel_err = relative_error;
    let central = |probe: &mut SelectorParams, read: &dyn Fn(&SelectorParams) -> f64, write: &dyn Fn(&mut SelectorParams, f64)| {
        let orig = read(probe);
        write(probe, orig + eps);
        let up = loss_only(probe, inputs, gold);
        write(probe, orig - eps);
        let down = loss_only(probe, inputs, gold);
        write(probe, orig);
        (up - down) / (2.0 * eps)
    };

    let mut worst = 0.0f64;
    let mut active_cols: Vec<u32> = inputs
        .iter()
        .flat_map(|u| u.iter().map(|(j, _)| j))
        .collect();
    active_cols.sort_unstable();
    active_cols.dedup();

    if !active_cols.is_empty() && w1_samples > 0 {
        let mut rng = seeds::rng_for(sample_seed, "grad-check", 0);
        for _ in 0..w1_samples {
            let j = active_cols[rng.gen_range(0..active_cols.len())] as usize;
            let i = rng.gen_range(0..hidden_dim);
            let flat = j * hidden_dim + i;
            let gn = central(&mut probe, &|p| p.w1[flat], &move |p, v| p.w1[flat] = v);
            worst = worst.max(rel_err(analytic.w1[flat], gn));
        }
    }
    for i in 0..hidden_dim {
        let gn = central(&mut probe, &|p| p.b1[i], &move |p, v| p.b1[i] = v);
        worst = worst.max(rel_err(analytic.b1[i], gn));
        let gn = central(&mut probe, &|p| p.w2[i], &move |p, v| p.w2[i] = v);
        worst = worst.max(rel_err(analytic.w2[i], gn));
    }
    let gn = central(&mut probe, &|p| p.b2, &|p, v| p.b2 = v);
    worst = worst.max(rel_err(analytic.b2, gn));

    worst
}
