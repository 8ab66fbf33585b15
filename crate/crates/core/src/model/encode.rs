use rand::Rng;

use super::cf::CfReferencePool;
use super::{ModelParams, Variant, ARTIFACT_MEAN, ARTIFACT_SCALE_RAW, DEC, EMB, ENC, MASK_LOGITS};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::distributions::{hard_bernoulli_sample, standard_normal, uniform_open};
use crate::numerics::special::{ln_gamma, sigmoid};
use crate::numerics::{GaussianParams, Graph, Matrix, ParamVars, Var};

/// How the global and per-cell latents are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Reparameterized samples with relaxed masks at the given temperature.
    Relaxed { temperature: f64 },
    /// Reparameterized samples with hard 0/1 masks.
    Hard,
    /// Posterior means: mask probabilities, embedding means, no noise.
    Mean,
}

/// Standard noise behind one forward pass, drawn in a fixed order:
/// mask uniforms, embedding noise, artifact noise, then basal noise.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeNoise {
    pub mask_u: Matrix,
    pub e_eps: Matrix,
    pub u_eps: Matrix,
    pub zb_eps: Matrix,
}

impl EncodeNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, n_treatments: usize, d_z: usize, n_cells: usize) -> Self {
        let mask_u = uniform_open(rng, n_treatments, d_z);
        let e_eps = standard_normal(rng, n_treatments, d_z);
        let u_eps = standard_normal(rng, 1, d_z);
        let zb_eps = standard_normal(rng, n_cells, d_z);
        Self {
            mask_u,
            e_eps,
            u_eps,
            zb_eps,
        }
    }
}

/// Model-ready view of a dataset: normalized inputs, counts, library sizes,
/// treatment and artifact indicators, and each cell's counterfactual reference.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub x_norm: Matrix,
    pub counts: Matrix,
    pub lgamma_counts_plus_one: Matrix,
    pub log_library: Vec<f64>,
    pub treatments: Matrix,
    pub artifact: Vec<f64>,
    /// Normalized reference rows, one per pool entry.
    pub cf_rows: Matrix,
    /// Row of `cf_rows` for cells eligible for the counterfactual term.
    pub cf_index: Vec<Option<usize>>,
}

impl PreparedData {
    pub fn new(
        params: &ModelParams,
        data: &Dataset,
        labels: &[u8],
        pool: &CfReferencePool,
    ) -> Result<Self> {
        let (n, g, t) = (data.n_cells(), params.n_genes(), params.n_treatments());
        if data.expr.n_genes() != g || data.perts.n_treatments() != t {
            return Err(Error::shape(format!(
                "dataset has {} genes / {} treatments, model expects {g} / {t}",
                data.expr.n_genes(),
                data.perts.n_treatments()
            )));
        }
        if labels.len() != n {
            return Err(Error::validation(format!("{} artifact labels for {n} cells", labels.len())));
        }
        let libs = crate::data::library_sizes(&data.expr)?;
        let counts = Matrix::from_vec(n, g, data.expr.counts().iter().map(|&c| f64::from(c)).collect());
        let lgamma_counts_plus_one = counts.map(|c| ln_gamma(c + 1.0));
        let mut x_norm = Matrix::zeros(n, g);
        for i in 0..n {
            let row = params.normalizer.apply_row(counts.row(i).iter().copied());
            x_norm.row_mut(i).copy_from_slice(&row);
        }
        let treatments = Matrix::from_vec(
            n,
            t,
            data.perts.assignments().iter().map(|&v| f64::from(v)).collect(),
        );
        let mut keys: Vec<&Vec<usize>> = Vec::new();
        let mut cf_data = Vec::new();
        let mut cf_index = vec![None; n];
        for i in 0..n {
            if labels[i] != 0 {
                continue;
            }
            let pattern = data.perts.pattern(i);
            if let Some((key, reference)) = pool.get_key_value(&pattern) {
                let k = match keys.iter().position(|&p| p == key) {
                    Some(k) => k,
                    None => {
                        keys.push(key);
                        cf_data.extend(params.normalizer.apply_row(reference.iter().copied()));
                        keys.len() - 1
                    }
                };
                cf_index[i] = Some(k);
            }
        }
        Ok(Self {
            x_norm,
            counts,
            lgamma_counts_plus_one,
            log_library: libs.iter().map(|&l| (l as f64).ln()).collect(),
            treatments,
            artifact: labels.iter().map(|&a| f64::from(a)).collect(),
            cf_rows: Matrix::from_vec(keys.len(), g, cf_data),
            cf_index,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.x_norm.rows()
    }

    pub fn batch(&self, cells: &[usize]) -> Batch {
        let mut cf_cells = Vec::new();
        let mut cf_refs = Vec::new();
        for (pos, &i) in cells.iter().enumerate() {
            if let Some(k) = self.cf_index[i] {
                cf_cells.push(pos);
                cf_refs.push(k);
            }
        }
        Batch {
            x_norm: self.x_norm.select_rows(cells),
            counts: self.counts.select_rows(cells),
            lgamma_counts_plus_one: self.lgamma_counts_plus_one.select_rows(cells),
            log_library: Matrix::col_vector(cells.iter().map(|&i| self.log_library[i]).collect()),
            treatments: self.treatments.select_rows(cells),
            artifact: Matrix::col_vector(cells.iter().map(|&i| self.artifact[i]).collect()),
            cf_x_norm: self.cf_rows.select_rows(&cf_refs),
            cf_cells,
        }
    }
}

/// Rows of [`PreparedData`] for one minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x_norm: Matrix,
    pub counts: Matrix,
    pub lgamma_counts_plus_one: Matrix,
    pub log_library: Matrix,
    pub treatments: Matrix,
    pub artifact: Matrix,
    /// Batch positions eligible for the counterfactual term.
    pub cf_cells: Vec<usize>,
    pub cf_x_norm: Matrix,
}

impl Batch {
    pub fn n_cells(&self) -> usize {
        self.x_norm.rows()
    }
}

/// Graph nodes produced by one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct GraphLatents {
    pub mask_logits: Var,
    pub masks: Var,
    pub e_mean: Var,
    pub e_scale: Var,
    pub e: Var,
    pub u_mean: Var,
    /// `None` when the artifact embedding is a point estimate.
    pub u_scale: Option<Var>,
    pub u: Var,
    pub z_p: Var,
    pub z_a: Var,
    pub zb_mean: Var,
    pub zb_scale: Var,
    pub z_b: Var,
}

fn reparam(g: &mut Graph, mean: Var, scale: Var, eps: &Matrix) -> Var {
    let eps = g.constant(eps.clone());
    let noise = g.mul(scale, eps);
    g.add(mean, noise)
}

fn basal_posterior(
    g: &mut Graph,
    params: &ModelParams,
    vars: &ParamVars,
    x_norm: Var,
    z_p: Var,
    z_a: Var,
) -> (Var, Var) {
    let input = g.concat_cols(&[x_norm, z_p, z_a]);
    let heads = params.config.enc_spec(params.n_genes()).forward(g, ENC, vars, input);
    (heads[0], heads[1])
}

/// Encode a batch on `g`.
pub fn encode_graph(
    g: &mut Graph,
    params: &ModelParams,
    vars: &ParamVars,
    batch: &Batch,
    noise: &EncodeNoise,
    sampling: Sampling,
) -> Result<GraphLatents> {
    let (t, d) = (params.n_treatments(), params.d_z());
    let n = batch.n_cells();
    if noise.mask_u.shape() != (t, d) || noise.zb_eps.shape() != (n, d) {
        return Err(Error::shape("encoder noise does not match model / batch"));
    }
    let mask_logits = vars.get(MASK_LOGITS);
    let masks = match sampling {
        Sampling::Relaxed { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::validation("temperature must be positive"));
            }
            let logistic = g.constant(noise.mask_u.map(|u| u.ln() - (-u).ln_1p()));
            let shifted = g.add(mask_logits, logistic);
            let scaled = g.scale(shifted, 1.0 / temperature);
            g.sigmoid(scaled)
        }
        Sampling::Hard => {
            let hard = hard_bernoulli_sample(g.value(mask_logits), &noise.mask_u)?;
            g.constant(hard)
        }
        Sampling::Mean => g.sigmoid(mask_logits),
    };
    let eye = g.constant(Matrix::from_fn(t, t, |i, j| f64::from(u8::from(i == j))));
    let emb_in = g.concat_cols(&[masks, eye]);
    let heads = params.config.emb_spec(t).forward(g, EMB, vars, emb_in);
    let (e_mean, e_scale) = (heads[0], heads[1]);
    let e = match sampling {
        Sampling::Mean => e_mean,
        _ => reparam(g, e_mean, e_scale, &noise.e_eps),
    };
    let gated = g.mul(e, masks);
    let p = g.constant(batch.treatments.clone());
    let z_p = g.matmul(p, gated);

    let u_mean = vars.get(ARTIFACT_MEAN);
    let (u_scale, u) = if params.config.variant == Variant::NoCausal {
        (None, u_mean)
    } else {
        let raw = vars.get(ARTIFACT_SCALE_RAW);
        let scale = g.softplus(raw);
        let u = match sampling {
            Sampling::Mean => u_mean,
            _ => reparam(g, u_mean, scale, &noise.u_eps),
        };
        (Some(scale), u)
    };
    let a = g.constant(batch.artifact.clone());
    let z_a = g.matmul(a, u);

    let x = g.constant(batch.x_norm.clone());
    let (zb_mean, zb_scale) = basal_posterior(g, params, vars, x, z_p, z_a);
    let z_b = match sampling {
        Sampling::Mean => zb_mean,
        _ => reparam(g, zb_mean, zb_scale, &noise.zb_eps),
    };
    Ok(GraphLatents {
        mask_logits,
        masks,
        e_mean,
        e_scale,
        e,
        u_mean,
        u_scale,
        u,
        z_p,
        z_a,
        zb_mean,
        zb_scale,
        z_b,
    })
}

/// Factual and counterfactual basal posteriors for the eligible cells of a
/// batch, both computed with the artifact switched on. Returns `None` when no
/// cell is eligible.
pub fn cf_posteriors_graph(
    g: &mut Graph,
    params: &ModelParams,
    vars: &ParamVars,
    batch: &Batch,
    lat: &GraphLatents,
) -> Option<[Var; 4]> {
    if batch.cf_cells.is_empty() {
        return None;
    }
    let n_e = batch.cf_cells.len();
    let z_p = g.gather_rows(lat.z_p, &batch.cf_cells);
    let ones = g.constant(Matrix::filled(n_e, 1, 1.0));
    let z_a = g.matmul(ones, lat.u);
    let x = g.constant(batch.x_norm.select_rows(&batch.cf_cells));
    let x_ref = g.constant(batch.cf_x_norm.clone());
    let (m1, s1) = basal_posterior(g, params, vars, x, z_p, z_a);
    let (m2, s2) = basal_posterior(g, params, vars, x_ref, z_p, z_a);
    Some([m1, s1, m2, s2])
}

/// Log gene frequencies from the decoder.
pub fn decoder_log_freq_graph(
    g: &mut Graph,
    params: &ModelParams,
    vars: &ParamVars,
    z_b: Var,
    z_p: Var,
    z_a: Var,
) -> Var {
    let z = g.concat_cols(&[z_b, z_p, z_a]);
    params.config.dec_spec(params.n_genes()).forward(g, DEC, vars, z)[0]
}

/// Plain-matrix copy of one encoder pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub masks: Matrix,
    pub embedding: GaussianParams,
    pub e: Matrix,
    /// Artifact posterior; the scale is zero for a point estimate.
    pub artifact: GaussianParams,
    pub u: Matrix,
    pub z_p: Matrix,
    pub z_a: Matrix,
    pub basal: GaussianParams,
    pub z_b: Matrix,
}

fn check_batch(params: &ModelParams, batch: &Batch) -> Result<()> {
    if batch.x_norm.cols() != params.n_genes() || batch.treatments.cols() != params.n_treatments() {
        return Err(Error::shape("batch does not match model dimensions"));
    }
    Ok(())
}

/// Run the encoder without gradients.
pub fn encode<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch,
    sampling: Sampling,
    rng: &mut R,
) -> Result<LatentSample> {
    check_batch(params, batch)?;
    let noise = EncodeNoise::draw(rng, params.n_treatments(), params.d_z(), batch.n_cells());
    let mut g = Graph::new();
    let vars = params.store.register_constant(&mut g);
    let lat = encode_graph(&mut g, params, &vars, batch, &noise, sampling)?;
    let v = |x: Var| g.value(x).clone();
    let u_scale = lat.u_scale.map_or_else(|| Matrix::zeros(1, params.d_z()), v);
    Ok(LatentSample {
        masks: v(lat.masks),
        embedding: GaussianParams::new(v(lat.e_mean), v(lat.e_scale))?,
        e: v(lat.e),
        artifact: GaussianParams::new(v(lat.u_mean), u_scale)?,
        u: v(lat.u),
        z_p: v(lat.z_p),
        z_a: v(lat.z_a),
        basal: GaussianParams::new(v(lat.zb_mean), v(lat.zb_scale))?,
        z_b: v(lat.z_b),
    })
}

/// Factual and counterfactual basal posteriors for the eligible cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CfPair {
    /// Batch positions of the eligible cells.
    pub cells: Vec<usize>,
    pub factual: GaussianParams,
    pub counterfactual: GaussianParams,
}

/// Run the counterfactual branch without gradients.
pub fn encode_counterfactual<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch,
    sampling: Sampling,
    rng: &mut R,
) -> Result<Option<CfPair>> {
    check_batch(params, batch)?;
    let noise = EncodeNoise::draw(rng, params.n_treatments(), params.d_z(), batch.n_cells());
    let mut g = Graph::new();
    let vars = params.store.register_constant(&mut g);
    let lat = encode_graph(&mut g, params, &vars, batch, &noise, sampling)?;
    let Some([m1, s1, m2, s2]) = cf_posteriors_graph(&mut g, params, &vars, batch, &lat) else {
        return Ok(None);
    };
    Ok(Some(CfPair {
        cells: batch.cf_cells.clone(),
        factual: GaussianParams::new(g.value(m1).clone(), g.value(s1).clone())?,
        counterfactual: GaussianParams::new(g.value(m2).clone(), g.value(s2).clone())?,
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub log_freq: Matrix,
    /// Gamma-Poisson means `library × frequency`.
    pub mean: Matrix,
}

/// Decode latents into gene frequencies and expected counts.
pub fn decode(
    params: &ModelParams,
    z_b: &Matrix,
    z_p: &Matrix,
    z_a: &Matrix,
    library: &[f64],
) -> Result<DecodeOutput> {
    let d = params.d_z();
    let n = z_b.rows();
    if z_b.shape() != (n, d) || z_p.shape() != (n, d) || z_a.shape() != (n, d) || library.len() != n {
        return Err(Error::shape(format!("decode expects three {n}×{d} latents and {n} library sizes")));
    }
    let mut g = Graph::new();
    let vars = params.store.register_constant(&mut g);
    let (b, p, a) = (g.constant(z_b.clone()), g.constant(z_p.clone()), g.constant(z_a.clone()));
    let lf = decoder_log_freq_graph(&mut g, params, &vars, b, p, a);
    let log_freq = g.value(lf).clone();
    let mut mean = log_freq.map(f64::exp);
    for (i, &l) in library.iter().enumerate() {
        mean.row_mut(i).iter_mut().for_each(|m| *m *= l);
    }
    Ok(DecodeOutput { log_freq, mean })
}

/// How a treatment's mask enters its latent effect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EffectMode {
    /// Mask probabilities.
    Expected,
    /// Masks thresholded at probability 1/2.
    Hard,
}

/// Latent shift `m_t ⊙ E[e_t]` of treatment `t` alone.
pub fn perturbation_effect(params: &ModelParams, t: usize, mode: EffectMode) -> Result<Vec<f64>> {
    let n_t = params.n_treatments();
    if t >= n_t {
        return Err(Error::validation(format!("treatment index {t} out of range (T = {n_t})")));
    }
    let logits = params.store.require(MASK_LOGITS)?;
    let mask: Vec<f64> = logits
        .row(t)
        .iter()
        .map(|&w| {
            let p = sigmoid(w);
            match mode {
                EffectMode::Expected => p,
                EffectMode::Hard => f64::from(u8::from(p > 0.5)),
            }
        })
        .collect();
    let mut input = mask.clone();
    input.extend((0..n_t).map(|j| f64::from(u8::from(j == t))));
    let out = crate::numerics::mlp_forward(
        &params.config.emb_spec(n_t),
        EMB,
        &params.store,
        &Matrix::row_vector(input),
    )?;
    let mean = &out["mean"];
    Ok(mask.iter().zip(mean.data()).map(|(m, e)| m * e).collect())
}
