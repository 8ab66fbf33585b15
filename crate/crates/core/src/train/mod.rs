//! Training objective and loop.
//!
//! `J1` is the β-weighted ELBO estimated with reparameterized particles,
//! `J2` the negative KL between each eligible cell's basal posterior and that
//! of its QC-failed reference, both encoded with the artifact switched on.
//! Training minimizes `−(J1 + α·J2)`.

mod checkpoint;
mod history;
mod trainer;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    decoder_log_freq_graph, encode_graph, Batch, EncodeNoise, ModelParams, Sampling, Variant, THETA_RAW,
};
use crate::numerics::distributions::{graph_bernoulli_kl, graph_gamma_poisson_log_prob, graph_normal_kl};
use crate::numerics::{Graph, Matrix, ParamVars, Var};

pub use checkpoint::{load_checkpoint, manifest_path, read_manifest, save_checkpoint, Checkpoint, ModelManifest};
pub use history::{write_timings, EpochRecord, TrainHistory};
pub use trainer::{train, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::Config(format!("unknown precision '{other}' (expected f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub particles: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Treat the counterfactual reference posterior as a constant.
    pub stop_gradient_reference: bool,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// `f32` rounds every parameter to single precision after each update.
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            particles: 5,
            epochs: 2000,
            batch_size: 512,
            lr: 3e-4,
            clip_norm: 100.0,
            seed: 0,
            temperature_start: 1.0,
            temperature_end: 0.5,
            stop_gradient_reference: false,
            checkpoint_every: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    /// Settings for the frozen synthetic benchmark.
    pub fn benchmark() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            lr: 3e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.particles == 0 {
            return bad("particles must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be nonnegative");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if !(self.lr >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("lr must be nonnegative and clip_norm positive");
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return bad("temperatures must be positive");
        }
        Ok(())
    }

    /// Linearly annealed mask temperature for a 0-based epoch.
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_start;
        }
        let f = (epoch.min(self.epochs - 1)) as f64 / (self.epochs - 1) as f64;
        self.temperature_start + f * (self.temperature_end - self.temperature_start)
    }
}

/// Settings of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub particles: usize,
    pub temperature: f64,
    /// Number of training cells; global KLs are divided by it.
    pub n_total: usize,
    pub stop_gradient_reference: bool,
}

impl ObjectiveConfig {
    pub fn from_train(cfg: &TrainConfig, temperature: f64, n_total: usize) -> Self {
        Self {
            alpha: cfg.alpha,
            beta: cfg.beta,
            particles: cfg.particles,
            temperature,
            n_total,
            stop_gradient_reference: cfg.stop_gradient_reference,
        }
    }
}

/// Particle-averaged objective terms. `total = −(j1 + α·j2)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub j1: f64,
    pub j2: f64,
    /// Per-cell mean reconstruction log-likelihood.
    pub recon: f64,
    /// Per-cell mean basal KL.
    pub kl_zb: f64,
    pub kl_e: f64,
    pub kl_m: f64,
    pub kl_u: f64,
    pub n_cf: usize,
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={} j1={} j2={} recon={} kl_zb={} kl_e={} kl_m={} kl_u={}",
            self.total, self.j1, self.j2, self.recon, self.kl_zb, self.kl_e, self.kl_m, self.kl_u
        )
    }
}

fn alpha_for(params: &ModelParams, alpha: f64) -> f64 {
    if params.config.variant == Variant::NoCf {
        0.0
    } else {
        alpha
    }
}

/// Build the objective on `g`; returns the loss node (to minimize) and the
/// particle-averaged breakdown. Noise is drawn from `rng` in particle order.
pub fn objective_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    params: &ModelParams,
    vars: &ParamVars,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    let n = batch.n_cells();
    if n == 0 {
        return Err(Error::validation("empty batch"));
    }
    if cfg.particles == 0 || cfg.n_total == 0 {
        return Err(Error::Config("need at least one particle and one training cell".into()));
    }
    let (t, d) = (params.n_treatments(), params.d_z());
    let alpha = alpha_for(params, cfg.alpha);
    let with_cf = alpha > 0.0 && !batch.cf_cells.is_empty();
    let inv_p = 1.0 / cfg.particles as f64;

    let counts = g.constant(batch.counts.clone());
    let lgamma = g.constant(batch.lgamma_counts_plus_one.clone());
    let log_lib = g.constant(batch.log_library.clone());
    let theta_raw = vars.get(THETA_RAW);
    let theta = g.softplus(theta_raw);
    let zero = g.constant(Matrix::scalar(0.0));
    let one = g.constant(Matrix::scalar(1.0));
    let prior_scale = g.constant(Matrix::scalar(params.config.embedding_prior_scale));

    let mut loss_terms = Vec::with_capacity(cfg.particles);
    let mut out = LossBreakdown::default();
    for _ in 0..cfg.particles {
        let noise = EncodeNoise::draw(rng, t, d, n);
        let lat = encode_graph(
            g,
            params,
            vars,
            batch,
            &noise,
            Sampling::Relaxed {
                temperature: cfg.temperature,
            },
        )?;
        let log_freq = decoder_log_freq_graph(g, params, vars, lat.z_b, lat.z_p, lat.z_a);
        let log_mean = g.add(log_freq, log_lib);
        let lp = graph_gamma_poisson_log_prob(g, counts, lgamma, log_mean, theta);
        let recon = g.sum(lp);
        let recon = g.scale(recon, 1.0 / n as f64);

        let kl_zb = graph_normal_kl(g, lat.zb_mean, lat.zb_scale, zero, one);
        let kl_zb = g.scale(kl_zb, 1.0 / n as f64);
        let kl_e = graph_normal_kl(g, lat.e_mean, lat.e_scale, zero, prior_scale);
        let kl_m = graph_bernoulli_kl(g, lat.mask_logits, params.config.mask_prior_prob);
        let mut global = g.add(kl_e, kl_m);
        let kl_u = lat.u_scale.map(|s| graph_normal_kl(g, lat.u_mean, s, zero, one));
        if let Some(k) = kl_u {
            global = g.add(global, k);
        }
        let global = g.scale(global, 1.0 / cfg.n_total as f64);
        let kl = g.add(kl_zb, global);
        let kl = g.scale(kl, cfg.beta);
        let j1 = g.sub(recon, kl);

        let mut objective = j1;
        let mut j2_value = 0.0;
        if with_cf {
            let [m1, s1, mut m2, mut s2] =
                crate::model::cf_posteriors_graph(g, params, vars, batch, &lat).expect("eligible cells");
            if cfg.stop_gradient_reference {
                m2 = g.detach(m2);
                s2 = g.detach(s2);
            }
            let kl_cf = graph_normal_kl(g, m1, s1, m2, s2);
            let j2 = g.scale(kl_cf, -1.0 / batch.cf_cells.len() as f64);
            j2_value = g.value(j2).item();
            let weighted = g.scale(j2, alpha);
            objective = g.add(j1, weighted);
        }
        loss_terms.push(objective);

        out.j1 += g.value(j1).item() * inv_p;
        out.j2 += j2_value * inv_p;
        out.recon += g.value(recon).item() * inv_p;
        out.kl_zb += g.value(kl_zb).item() * inv_p;
        out.kl_e += g.value(kl_e).item() * inv_p;
        out.kl_m += g.value(kl_m).item() * inv_p;
        out.kl_u += kl_u.map_or(0.0, |k| g.value(k).item()) * inv_p;
    }
    let mut sum = loss_terms[0];
    for &l in &loss_terms[1..] {
        sum = g.add(sum, l);
    }
    let loss = g.scale(sum, -inv_p);
    out.total = g.value(loss).item();
    out.n_cf = if with_cf { batch.cf_cells.len() } else { 0 };
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss: {out}")));
    }
    Ok((loss, out))
}

/// Objective value without gradients.
pub fn total_loss<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let vars = params.store.register_constant(&mut g);
    Ok(objective_graph(&mut g, params, &vars, batch, cfg, rng)?.1)
}

/// Particle-averaged ELBO estimate `J1`.
pub fn elbo<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<f64> {
    let cfg = ObjectiveConfig { alpha: 0.0, ..*cfg };
    Ok(total_loss(params, batch, &cfg, rng)?.j1)
}

/// Particle-averaged counterfactual alignment term `J2` (0 when no cell of
/// the batch is eligible).
pub fn cf_alignment_loss<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut cfg = *cfg;
    if cfg.alpha == 0.0 {
        cfg.alpha = 1.0;
    }
    Ok(total_loss(params, batch, &cfg, rng)?.j2)
}

/// Objective value and gradients of the loss for every parameter.
pub fn loss_and_grads<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, BTreeMap<String, Matrix>)> {
    let mut g = Graph::new();
    let vars = params.store.register(&mut g);
    let (loss, parts) = objective_graph(&mut g, params, &vars, batch, cfg, rng)?;
    let mut grads = g.backward(loss);
    let out = vars
        .iter()
        .map(|(name, &v)| {
            let shape = g.value(v).shape();
            (name.clone(), grads.take(v).unwrap_or_else(|| Matrix::zeros(shape.0, shape.1)))
        })
        .collect();
    Ok((parts, out))
}
