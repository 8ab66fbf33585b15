//! Normal, relaxed-Bernoulli and Gamma-Poisson distributions.
//!
//! Each density has a plain `f64` evaluation and a graph-node counterpart used
//! inside the training objective. The two share formulas but not code paths,
//! and the tests compare them.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01, Poisson, StandardNormal};

use super::autodiff::{Graph, Var};
use super::matrix::Matrix;
use super::special::{ln_gamma, sigmoid};
use crate::error::{Error, Result};

/// Diagonal Gaussian parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Matrix,
    pub scale: Matrix,
}

impl GaussianParams {
    pub fn new(mean: Matrix, scale: Matrix) -> Result<Self> {
        if mean.shape() != scale.shape() {
            return Err(Error::shape(format!(
                "gaussian mean {:?} vs scale {:?}",
                mean.shape(),
                scale.shape()
            )));
        }
        Ok(Self { mean, scale })
    }

    pub fn standard(rows: usize, cols: usize) -> Self {
        Self {
            mean: Matrix::zeros(rows, cols),
            scale: Matrix::filled(rows, cols, 1.0),
        }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Uniform draws on the open interval (0, 1).
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| Open01.sample(rng))
}

/// `mean + scale ⊙ noise`.
pub fn normal_rsample(params: &GaussianParams, noise: &Matrix) -> Result<Matrix> {
    if noise.shape() != params.mean.shape() {
        return Err(Error::shape("noise must be shaped like the mean"));
    }
    let scaled = params.scale.zip_map(noise, |s, e| s * e);
    Ok(params.mean.zip_map(&scaled, |m, v| m + v))
}

/// KL(q ‖ p) between diagonal Gaussians, summed over all entries.
pub fn normal_kl(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.mean.shape() != p.mean.shape() || q.scale.shape() != p.scale.shape() {
        return Err(Error::shape("normal_kl arguments differ in shape"));
    }
    let mut total = 0.0;
    for k in 0..q.mean.len() {
        let (mq, sq) = (q.mean.data()[k], q.scale.data()[k]);
        let (mp, sp) = (p.mean.data()[k], p.scale.data()[k]);
        if !(sq > 0.0 && sp > 0.0) {
            return Err(Error::validation(format!(
                "normal_kl requires positive scales, got {sq} and {sp}"
            )));
        }
        total += (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
    }
    Ok(total)
}

/// Concrete / relaxed Bernoulli sample `σ((logit + ln u − ln(1−u)) / τ)`.
pub fn relaxed_bernoulli_rsample(
    logits: &Matrix,
    temperature: f64,
    uniform_noise: &Matrix,
) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::validation("temperature must be positive"));
    }
    if logits.shape() != uniform_noise.shape() {
        return Err(Error::shape("uniform noise must be shaped like the logits"));
    }
    if uniform_noise.data().iter().any(|&u| !(u > 0.0 && u < 1.0)) {
        return Err(Error::validation("uniform noise must lie in (0, 1)"));
    }
    Ok(logits.zip_map(uniform_noise, |l, u| {
        sigmoid((l + u.ln() - (-u).ln_1p()) / temperature)
    }))
}

/// Hard (straight-through forward) sample: the relaxed sample rounded at 1/2.
pub fn hard_bernoulli_sample(logits: &Matrix, uniform_noise: &Matrix) -> Result<Matrix> {
    Ok(relaxed_bernoulli_rsample(logits, 1.0, uniform_noise)?
        .map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
}

/// KL(Bernoulli(q) ‖ Bernoulli(p)) summed elementwise.
pub fn bernoulli_kl(q_prob: &[f64], p_prob: &[f64]) -> Result<f64> {
    if q_prob.len() != p_prob.len() {
        return Err(Error::shape("bernoulli_kl arguments differ in length"));
    }
    let mut total = 0.0;
    for (&q, &p) in q_prob.iter().zip(p_prob) {
        if !(q > 0.0 && q < 1.0 && p > 0.0 && p < 1.0) {
            return Err(Error::validation(format!(
                "bernoulli_kl requires probabilities in (0,1), got q={q}, p={p}"
            )));
        }
        total += q * (q / p).ln() + (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
    }
    Ok(total)
}

fn check_count(x: f64) -> Result<()> {
    if x < 0.0 || x.fract() != 0.0 || !x.is_finite() {
        return Err(Error::validation(format!(
            "count {x} is not a nonnegative integer"
        )));
    }
    Ok(())
}

/// Negative-binomial log-pmf of one count with mean `mu` and inverse dispersion `theta`.
#[inline]
pub fn gamma_poisson_log_pmf(x: f64, mu: f64, theta: f64) -> f64 {
    let log_denom = (theta + mu).ln();
    ln_gamma(x + theta) - ln_gamma(theta) - ln_gamma(x + 1.0) + theta * (theta.ln() - log_denom)
        + if x > 0.0 { x * (mu.ln() - log_denom) } else { 0.0 }
}

/// Sum of Gamma-Poisson log-probabilities.
pub fn gamma_poisson_log_prob(x: &[f64], mean: &[f64], inverse_dispersion: f64) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::shape("counts and means differ in length"));
    }
    if !(inverse_dispersion > 0.0) {
        return Err(Error::validation("inverse dispersion must be positive"));
    }
    let mut total = 0.0;
    for (&xv, &mu) in x.iter().zip(mean) {
        check_count(xv)?;
        if !(mu > 0.0) {
            return Err(Error::validation(format!("mean {mu} must be positive")));
        }
        total += gamma_poisson_log_pmf(xv, mu, inverse_dispersion);
    }
    Ok(total)
}

/// Draw a count from Poisson(λ), λ ~ Gamma(shape θ, mean μ).
pub fn gamma_poisson_sample<R: Rng + ?Sized>(rng: &mut R, mu: f64, theta: f64) -> u32 {
    if !(mu > 0.0) {
        return 0;
    }
    let rate = if theta.is_finite() {
        Gamma::new(theta, mu / theta)
            .expect("validated gamma parameters")
            .sample(rng)
    } else {
        mu
    };
    if !(rate > 0.0) {
        return 0;
    }
    let x: f64 = Poisson::new(rate).expect("positive rate").sample(rng);
    x.min(u32::MAX as f64) as u32
}

// ---- graph-node versions ----

/// KL between diagonal Gaussians given as graph nodes, summed over entries.
/// `p_mean` / `p_scale` broadcast against the `q` shapes.
pub fn graph_normal_kl(g: &mut Graph, q_mean: Var, q_scale: Var, p_mean: Var, p_scale: Var) -> Var {
    let log_sq = g.log(q_scale);
    let log_sp = g.log(p_scale);
    let log_ratio = g.sub(log_sp, log_sq);
    let var_q = g.mul(q_scale, q_scale);
    let diff = g.sub(q_mean, p_mean);
    let diff_sq = g.mul(diff, diff);
    let num = g.add(var_q, diff_sq);
    let m2 = g.scale(log_sp, -2.0);
    let inv_var_p = g.exp(m2);
    let frac = g.mul(num, inv_var_p);
    let half = g.scale(frac, 0.5);
    let per = g.add(log_ratio, half);
    let per = g.add_scalar(per, -0.5);
    g.sum(per)
}

/// KL(Bernoulli(σ(logits)) ‖ Bernoulli(prior_prob)) summed over entries,
/// using log-sigmoid identities so saturated logits stay finite.
pub fn graph_bernoulli_kl(g: &mut Graph, logits: Var, prior_prob: f64) -> Var {
    let q = g.sigmoid(logits);
    let neg_logits = g.neg(logits);
    let sp_neg = g.softplus(neg_logits); // -ln q
    let sp_pos = g.softplus(logits); // -ln(1-q)
    let ln_q = g.neg(sp_neg);
    let ln_q = g.add_scalar(ln_q, -prior_prob.ln());
    let ln_1mq = g.neg(sp_pos);
    let ln_1mq = g.add_scalar(ln_1mq, -(-prior_prob).ln_1p());
    let t1 = g.mul(q, ln_q);
    let one_minus_q = g.neg(q);
    let one_minus_q = g.add_scalar(one_minus_q, 1.0);
    let t2 = g.mul(one_minus_q, ln_1mq);
    let per = g.add(t1, t2);
    g.sum(per)
}

/// Elementwise Gamma-Poisson log-pmf as a graph node (same shape as `log_mean`).
///
/// `counts` is constant data; `lgamma_counts_plus_one` is `lnΓ(x+1)`
/// precomputed by the caller. `theta` is a `1 × 1` node.
pub fn graph_gamma_poisson_log_prob(
    g: &mut Graph,
    counts: Var,
    lgamma_counts_plus_one: Var,
    log_mean: Var,
    theta: Var,
) -> Var {
    let mean = g.exp(log_mean);
    let theta_plus_mean = g.add(mean, theta);
    let log_denom = g.log(theta_plus_mean);
    let x_plus_theta = g.add(counts, theta);
    let lg_xt = g.lgamma(x_plus_theta);
    let lg_t = g.lgamma(theta);
    let log_theta = g.log(theta);
    // θ (ln θ − ln(θ+μ))
    let a = g.sub(log_theta, log_denom);
    let a = g.mul(theta, a);
    // x (ln μ − ln(θ+μ))
    let b = g.sub(log_mean, log_denom);
    let b = g.mul(counts, b);
    let t = g.sub(lg_xt, lg_t);
    let t = g.sub(t, lgamma_counts_plus_one);
    let t = g.add(t, a);
    g.add(t, b)
}
