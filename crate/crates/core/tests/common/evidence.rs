//! Importance-sampling estimate of the evidence of one cell, computed from
//! hand-evaluated densities, next to the model's ELBO estimate.

use cradle_core::data::CONTROL_NAME;
use cradle_core::model::{encode, ModelConfig, Sampling};
use cradle_core::numerics::Matrix;
use cradle_core::train::{elbo, ObjectiveConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, Discrete, NegativeBinomial, Normal};

use super::fixtures::{tiny, Tiny};

/// d_z = 2, five genes, one treated artifact cell.
pub fn tiny_cell(seed: u64) -> Tiny {
    let cfg = ModelConfig {
        d_z: 2,
        mask_prior_prob: 0.3,
        emb_hidden: vec![3],
        enc_hidden: vec![4],
        ..ModelConfig::default()
    };
    tiny(cfg, 5, &["A", CONTROL_NAME], &[vec![0]], &[1], 0.3, seed)
}

fn normal_ln(x: &Matrix, mean: &Matrix, scale: &Matrix) -> f64 {
    (0..x.len())
        .map(|k| Normal::new(mean.data()[k], scale.data()[k]).unwrap().ln_pdf(x.data()[k]))
        .sum()
}

fn standard_ln(x: &Matrix, scale: f64) -> f64 {
    let d = Normal::new(0.0, scale).unwrap();
    x.data().iter().map(|&v| d.ln_pdf(v)).sum()
}

fn bernoulli_ln(m: &Matrix, prob: impl Fn(usize) -> f64) -> f64 {
    (0..m.len())
        .map(|k| if m.data()[k] > 0.5 { prob(k).ln() } else { (1.0 - prob(k)).ln() })
        .sum()
}

/// Decoder with no hidden layer: log-softmax of `[z_b, z_p, z_a] W + b`.
fn log_likelihood(t: &Tiny, z: &[f64], counts: &[u32], library: f64) -> f64 {
    let w = t.params.store.get("dec.log_freq.weight").unwrap();
    let b = t.params.store.get("dec.log_freq.bias").unwrap();
    let g = counts.len();
    let logits: Vec<f64> = (0..g)
        .map(|j| b.data()[j] + z.iter().enumerate().map(|(i, zi)| zi * w.get(i, j)).sum::<f64>())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let theta = t.params.theta();
    (0..g)
        .map(|j| {
            let mu = (logits[j] - lse).exp() * library;
            NegativeBinomial::new(theta, theta / (theta + mu)).unwrap().ln_pmf(u64::from(counts[j]))
        })
        .sum()
}

pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// `log p̂(x)` from `n` draws of the encoder with hard masks as proposal,
/// and the mean log weight, which is the hard-mask ELBO.
pub fn is_evidence(t: &Tiny, n: usize, seed: u64) -> (Estimate, Estimate) {
    assert!(t.params.config.dec_hidden.is_empty());
    let batch = t.prep.batch(&[0]);
    let counts = t.data.expr.row(0).to_vec();
    let library: f64 = counts.iter().map(|&c| f64::from(c)).sum();
    let logits = t.params.store.get("mask_logits").unwrap();
    let q_prob = |k: usize| 1.0 / (1.0 + (-logits.data()[k]).exp());
    let prior = t.params.config.mask_prior_prob;
    let e_scale = t.params.config.embedding_prior_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_w: Vec<f64> = (0..n)
        .map(|_| {
            let s = encode(&t.params, &batch, Sampling::Hard, &mut rng).unwrap();
            let z: Vec<f64> = s.z_b.row(0).iter().chain(s.z_p.row(0)).chain(s.z_a.row(0)).copied().collect();
            let log_p = log_likelihood(t, &z, &counts, library)
                + bernoulli_ln(&s.masks, |_| prior)
                + standard_ln(&s.e, e_scale)
                + standard_ln(&s.u, 1.0)
                + standard_ln(&s.z_b, 1.0);
            let log_q = bernoulli_ln(&s.masks, q_prob)
                + normal_ln(&s.e, &s.embedding.mean, &s.embedding.scale)
                + normal_ln(&s.u, &s.artifact.mean, &s.artifact.scale)
                + normal_ln(&s.z_b, &s.basal.mean, &s.basal.scale);
            log_p - log_q
        })
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let m = w.iter().sum::<f64>() / n as f64;
    let var = w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let evidence = Estimate {
        mean: max + m.ln(),
        se: (var / n as f64).sqrt() / m,
    };
    let lm = log_w.iter().sum::<f64>() / n as f64;
    let lvar = log_w.iter().map(|v| (v - lm).powi(2)).sum::<f64>() / (n - 1) as f64;
    (
        evidence,
        Estimate {
            mean: lm,
            se: (lvar / n as f64).sqrt(),
        },
    )
}

/// The model's `J1` for the cell with β = 1 and no minibatch scaling,
/// averaged over `chunks × per_chunk` particles.
pub fn elbo_estimate(t: &Tiny, chunks: usize, per_chunk: usize, temperature: f64, seed: u64) -> Estimate {
    let batch = t.prep.batch(&[0]);
    let cfg = ObjectiveConfig {
        alpha: 0.0,
        beta: 1.0,
        particles: per_chunk,
        temperature,
        n_total: 1,
        stop_gradient_reference: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..chunks).map(|_| elbo(&t.params, &batch, &cfg, &mut rng).unwrap()).collect();
    let m = means.iter().sum::<f64>() / chunks as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (chunks - 1) as f64;
    Estimate {
        mean: m,
        se: (var / chunks as f64).sqrt(),
    }
}
