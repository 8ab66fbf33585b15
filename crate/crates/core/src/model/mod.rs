//! The causal VAE: parameters, encoder with counterfactual branch, decoder,
//! generator and counterfactual reference pools.
//!
//! Latent layout per cell is `[z_b ⊕ z_p ⊕ z_a]`, each block `d_z` wide.
//! `z_p = Σ_t p_t (e_t ⊙ m_t)` composes global per-treatment embeddings gated by
//! sparse masks; `z_a = a · u` switches a global artifact embedding on for
//! QC-failed cells.

mod cf;
mod encode;
mod generate;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ExpressionMatrix, GeneFlags};
use crate::error::{Error, Result};
use crate::numerics::special::{logit, softplus_inv};
use crate::numerics::{Activation, HeadSpec, HeadTransform, Matrix, MlpSpec, ParamStore};

pub use cf::{cf_reference_lookup, CfReferencePool};
pub use encode::{
    cf_posteriors_graph, decode, decoder_log_freq_graph, encode, encode_counterfactual, encode_graph,
    perturbation_effect, Batch, CfPair, DecodeOutput, EffectMode, EncodeNoise, GraphLatents, LatentSample, PreparedData,
    Sampling,
};
pub use generate::{generate, GenerateOptions, LibraryPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Artifact posterior plus counterfactual alignment.
    Full,
    /// No counterfactual alignment term.
    NoCf,
    /// Artifact embedding is a fixed learnable vector instead of a distribution.
    NoCausal,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_cf" => Ok(Self::NoCf),
            "no_causal" => Ok(Self::NoCausal),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected full, no_cf or no_causal)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoCf => "no_cf",
            Self::NoCausal => "no_causal",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_z: usize,
    pub mask_prior_prob: f64,
    pub embedding_prior_scale: f64,
    pub emb_hidden: Vec<usize>,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub activation: Activation,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_z: 200,
            mask_prior_prob: 0.01,
            embedding_prior_scale: 1.0,
            emb_hidden: vec![400; 4],
            enc_hidden: vec![400; 4],
            dec_hidden: Vec::new(),
            activation: Activation::Relu,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Small networks sized for the synthetic benchmark; the mask prior
    /// matches the benchmark generator's mask density.
    pub fn benchmark() -> Self {
        Self {
            d_z: 8,
            mask_prior_prob: 0.5,
            emb_hidden: vec![64],
            enc_hidden: vec![64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 {
            return Err(Error::Config("d_z must be positive".into()));
        }
        if !(self.mask_prior_prob > 0.0 && self.mask_prior_prob < 1.0) {
            return Err(Error::Config("mask_prior_prob must lie in (0, 1)".into()));
        }
        if !(self.embedding_prior_scale > 0.0) {
            return Err(Error::Config("embedding_prior_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn emb_spec(&self, n_treatments: usize) -> MlpSpec {
        MlpSpec {
            input: self.d_z + n_treatments,
            hidden: self.emb_hidden.clone(),
            activation: self.activation,
            heads: vec![
                HeadSpec::new("mean", self.d_z, HeadTransform::Identity),
                HeadSpec::new("scale", self.d_z, HeadTransform::Softplus),
            ],
        }
    }

    pub fn enc_spec(&self, n_genes: usize) -> MlpSpec {
        MlpSpec {
            input: n_genes + 2 * self.d_z,
            hidden: self.enc_hidden.clone(),
            activation: self.activation,
            heads: vec![
                HeadSpec::new("mean", self.d_z, HeadTransform::Identity),
                HeadSpec::new("scale", self.d_z, HeadTransform::Softplus),
            ],
        }
    }

    pub fn dec_spec(&self, n_genes: usize) -> MlpSpec {
        MlpSpec {
            input: 3 * self.d_z,
            hidden: self.dec_hidden.clone(),
            activation: self.activation,
            heads: vec![HeadSpec::new("log_freq", n_genes, HeadTransform::LogSoftmax)],
        }
    }
}

/// Per-gene mean and standard deviation of `log1p(counts)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fit on the given cells; genes with zero spread get unit scale.
    pub fn fit(x: &ExpressionMatrix, cells: &[usize]) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::validation("cannot fit normalization on zero cells"));
        }
        let d = x.n_genes();
        let n = cells.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in cells {
            for (m, &c) in mean.iter_mut().zip(x.row(i)) {
                *m += f64::from(c).ln_1p();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in cells {
            for ((v, &c), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *v += (f64::from(c).ln_1p() - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-8 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(n_genes: usize) -> Self {
        Self {
            mean: vec![0.0; n_genes],
            std: vec![1.0; n_genes],
        }
    }

    /// Normalize a row of (possibly fractional) counts.
    pub fn apply_row(&self, counts: impl IntoIterator<Item = f64>) -> Vec<f64> {
        counts
            .into_iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(c, (m, s))| (c.ln_1p() - m) / s)
            .collect()
    }
}

/// Everything needed to run the model: configuration, data dimensions and
/// labels, normalization statistics and the learnable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub gene_ids: Vec<String>,
    pub gene_flags: Vec<GeneFlags>,
    pub treatment_names: Vec<String>,
    pub normalizer: Normalizer,
    pub store: ParamStore,
}

pub const MASK_LOGITS: &str = "mask_logits";
pub const ARTIFACT_MEAN: &str = "artifact.mean";
pub const ARTIFACT_SCALE_RAW: &str = "artifact.scale_raw";
pub const THETA_RAW: &str = "theta_raw";
pub const EMB: &str = "emb";
pub const ENC: &str = "enc";
pub const DEC: &str = "dec";

impl ModelParams {
    /// Fresh parameters: fan-in uniform network weights, mask logits at the
    /// prior logit, artifact mean 0 and unit scales.
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        gene_ids: Vec<String>,
        gene_flags: Vec<GeneFlags>,
        treatment_names: Vec<String>,
        normalizer: Normalizer,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (d, t, g) = (config.d_z, treatment_names.len(), gene_ids.len());
        if t == 0 || g == 0 {
            return Err(Error::Config("model needs at least one treatment and one gene".into()));
        }
        if normalizer.mean.len() != g || gene_flags.len() != g {
            return Err(Error::shape("normalizer / gene flags do not match gene count"));
        }
        let mut store = ParamStore::new();
        config.emb_spec(t).init_params(EMB, rng, &mut store);
        config.enc_spec(g).init_params(ENC, rng, &mut store);
        config.dec_spec(g).init_params(DEC, rng, &mut store);
        store.insert(MASK_LOGITS, Matrix::filled(t, d, logit(config.mask_prior_prob)));
        store.insert(ARTIFACT_MEAN, Matrix::zeros(1, d));
        store.insert(ARTIFACT_SCALE_RAW, Matrix::filled(1, d, softplus_inv(1.0)));
        store.insert(THETA_RAW, Matrix::scalar(softplus_inv(1.0)));
        Ok(Self {
            config,
            gene_ids,
            gene_flags,
            treatment_names,
            normalizer,
            store,
        })
    }

    pub fn d_z(&self) -> usize {
        self.config.d_z
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.treatment_names.len()
    }

    pub fn treatment_index(&self, name: &str) -> Result<usize> {
        self.treatment_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::validation(format!("unknown treatment '{name}'")))
    }

    /// Parse a `+`-joined combination into sorted treatment indices.
    pub fn parse_pattern(&self, key: &str) -> Result<Vec<usize>> {
        let mut p = key
            .split('+')
            .map(|s| self.treatment_index(s.trim()))
            .collect::<Result<Vec<_>>>()?;
        p.sort_unstable();
        p.dedup();
        Ok(p)
    }

    pub fn theta(&self) -> f64 {
        crate::numerics::special::softplus(self.store.get(THETA_RAW).map_or(0.0, Matrix::item))
    }

    pub fn mask_probs(&self) -> Matrix {
        self.store
            .get(MASK_LOGITS)
            .expect("mask logits present")
            .map(crate::numerics::special::sigmoid)
    }
}
