use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use super::encode::{decode, EncodeNoise, Sampling};
use super::{ModelParams, Variant, ARTIFACT_MEAN, ARTIFACT_SCALE_RAW, EMB, MASK_LOGITS};
use crate::data::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::numerics::distributions::{gamma_poisson_sample, hard_bernoulli_sample, relaxed_bernoulli_rsample};
use crate::numerics::special::{sigmoid, softplus};
use crate::numerics::{mlp_forward, Matrix};

/// Library sizes attached to generated cells.
#[derive(Clone, Debug, PartialEq)]
pub enum LibraryPolicy {
    Fixed(f64),
    /// Resample uniformly from observed library sizes.
    Empirical(Vec<f64>),
    LogNormal { mu: f64, sigma: f64 },
}

impl LibraryPolicy {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            Self::Fixed(l) => Ok(*l),
            Self::Empirical(v) => {
                if v.is_empty() {
                    return Err(Error::validation("empirical library pool is empty"));
                }
                Ok(v[rng.random_range(0..v.len())])
            }
            Self::LogNormal { mu, sigma } => Ok(LogNormal::new(*mu, *sigma)
                .map_err(|e| Error::validation(format!("library distribution: {e}")))?
                .sample(rng)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    /// Value of the artifact indicator for every generated cell.
    pub artifact: u8,
    pub sampling: Sampling,
    pub library: LibraryPolicy,
}

impl GenerateOptions {
    /// Artifact-free cells with hard masks.
    pub fn new(library: LibraryPolicy) -> Self {
        Self {
            artifact: 0,
            sampling: Sampling::Hard,
            library,
        }
    }
}

/// Sample count profiles for cells with the given treatment patterns.
///
/// Masks, embeddings and the artifact embedding are drawn once for the whole
/// call; basal states are drawn from the standard normal prior per cell.
pub fn generate<R: Rng + ?Sized>(
    params: &ModelParams,
    patterns: &[Vec<usize>],
    opts: &GenerateOptions,
    rng: &mut R,
) -> Result<ExpressionMatrix> {
    if opts.artifact > 1 {
        return Err(Error::validation("artifact indicator must be 0 or 1"));
    }
    let (t, d, g) = (params.n_treatments(), params.d_z(), params.n_genes());
    let n = patterns.len();
    for p in patterns {
        if let Some(&bad) = p.iter().find(|&&k| k >= t) {
            return Err(Error::validation(format!("treatment index {bad} out of range (T = {t})")));
        }
    }
    let noise = EncodeNoise::draw(rng, t, d, n);
    let logits = params.store.require(MASK_LOGITS)?;
    let masks = match opts.sampling {
        Sampling::Hard => hard_bernoulli_sample(logits, &noise.mask_u)?,
        Sampling::Relaxed { temperature } => relaxed_bernoulli_rsample(logits, temperature, &noise.mask_u)?,
        Sampling::Mean => logits.map(sigmoid),
    };
    let eye = Matrix::from_fn(t, t, |i, j| f64::from(u8::from(i == j)));
    let emb = mlp_forward(&params.config.emb_spec(t), EMB, &params.store, &Matrix::hconcat(&[&masks, &eye]))?;
    let e = if opts.sampling == Sampling::Mean {
        emb["mean"].clone()
    } else {
        let scaled = emb["scale"].zip_map(&noise.e_eps, |s, z| s * z);
        emb["mean"].zip_map(&scaled, |m, v| m + v)
    };
    let gated = e.zip_map(&masks, |a, b| a * b);

    let u_mean = params.store.require(ARTIFACT_MEAN)?;
    let u = if params.config.variant == Variant::NoCausal || opts.sampling == Sampling::Mean {
        u_mean.clone()
    } else {
        let scale = params.store.require(ARTIFACT_SCALE_RAW)?.map(softplus);
        let noisy = scale.zip_map(&noise.u_eps, |s, z| s * z);
        u_mean.zip_map(&noisy, |m, v| m + v)
    };

    let mut z_p = Matrix::zeros(n, d);
    for (i, p) in patterns.iter().enumerate() {
        for &k in p {
            for (dst, &v) in z_p.row_mut(i).iter_mut().zip(gated.row(k)) {
                *dst += v;
            }
        }
    }
    let a = f64::from(opts.artifact);
    let z_a = Matrix::from_fn(n, d, |_, k| a * u.get(0, k));
    let z_b = if opts.sampling == Sampling::Mean {
        Matrix::zeros(n, d)
    } else {
        noise.zb_eps
    };
    let library = (0..n).map(|_| opts.library.draw(rng)).collect::<Result<Vec<_>>>()?;
    let out = decode(params, &z_b, &z_p, &z_a, &library)?;
    if !out.mean.all_finite() {
        return Err(Error::Numerical("generated means are not finite".into()));
    }
    let theta = params.theta();
    let counts: Vec<u32> = out
        .mean
        .data()
        .iter()
        .map(|&mu| gamma_poisson_sample(rng, mu, theta))
        .collect();
    let mut expr = ExpressionMatrix::from_counts(n, g, counts)?;
    expr.gene_ids = params.gene_ids.clone();
    expr.gene_flags = params.gene_flags.clone();
    Ok(expr)
}
