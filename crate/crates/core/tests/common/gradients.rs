//! Finite-difference checks of every term of the training objective.

use std::collections::BTreeMap;

use cradle_core::model::{
    cf_posteriors_graph, decoder_log_freq_graph, encode_graph, Batch, EncodeNoise, ModelParams, Sampling,
    ARTIFACT_MEAN, ARTIFACT_SCALE_RAW, THETA_RAW,
};
use cradle_core::numerics::distributions::{graph_bernoulli_kl, graph_gamma_poisson_log_prob, graph_normal_kl};
use cradle_core::numerics::{Graph, Matrix, ParamVars, Var};
use cradle_core::train::{total_loss, ObjectiveConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Recon,
    KlBasal,
    KlEmbedding,
    KlMask,
    KlArtifact,
    CfAlignment,
}

pub const COMPONENTS: [Component; 6] = [
    Component::Recon,
    Component::KlBasal,
    Component::KlEmbedding,
    Component::KlMask,
    Component::KlArtifact,
    Component::CfAlignment,
];

pub const TEMPERATURE: f64 = 0.7;

/// One term of the objective rebuilt from the public graph pieces, with the
/// same per-cell and per-eligible-cell normalizations as the trainer.
pub fn component_graph(
    g: &mut Graph,
    params: &ModelParams,
    vars: &ParamVars,
    batch: &Batch,
    noise: &EncodeNoise,
    c: Component,
) -> Var {
    let n = batch.n_cells() as f64;
    let lat = encode_graph(
        g,
        params,
        vars,
        batch,
        noise,
        Sampling::Relaxed {
            temperature: TEMPERATURE,
        },
    )
    .unwrap();
    let zero = g.constant(Matrix::scalar(0.0));
    let one = g.constant(Matrix::scalar(1.0));
    match c {
        Component::Recon => {
            let lf = decoder_log_freq_graph(g, params, vars, lat.z_b, lat.z_p, lat.z_a);
            let log_lib = g.constant(batch.log_library.clone());
            let log_mean = g.add(lf, log_lib);
            let counts = g.constant(batch.counts.clone());
            let lgamma = g.constant(batch.lgamma_counts_plus_one.clone());
            let raw = vars.get(THETA_RAW);
            let theta = g.softplus(raw);
            let lp = graph_gamma_poisson_log_prob(g, counts, lgamma, log_mean, theta);
            let s = g.sum(lp);
            g.scale(s, 1.0 / n)
        }
        Component::KlBasal => {
            let kl = graph_normal_kl(g, lat.zb_mean, lat.zb_scale, zero, one);
            g.scale(kl, 1.0 / n)
        }
        Component::KlEmbedding => {
            let s = g.constant(Matrix::scalar(params.config.embedding_prior_scale));
            graph_normal_kl(g, lat.e_mean, lat.e_scale, zero, s)
        }
        Component::KlMask => graph_bernoulli_kl(g, lat.mask_logits, params.config.mask_prior_prob),
        Component::KlArtifact => {
            let scale = lat.u_scale.expect("stochastic artifact embedding");
            graph_normal_kl(g, lat.u_mean, scale, zero, one)
        }
        Component::CfAlignment => {
            let [m1, s1, m2, s2] = cf_posteriors_graph(g, params, vars, batch, &lat).expect("eligible cells");
            let kl = graph_normal_kl(g, m1, s1, m2, s2);
            g.scale(kl, -1.0 / batch.cf_cells.len() as f64)
        }
    }
}

fn value(params: &ModelParams, batch: &Batch, noise: &EncodeNoise, c: Component) -> f64 {
    let mut g = Graph::new();
    let vars = params.store.register_constant(&mut g);
    let v = component_graph(&mut g, params, &vars, batch, noise, c);
    g.value(v).item()
}

fn analytic(params: &ModelParams, batch: &Batch, noise: &EncodeNoise, c: Component) -> BTreeMap<String, Matrix> {
    let mut g = Graph::new();
    let vars = params.store.register(&mut g);
    let v = component_graph(&mut g, params, &vars, batch, noise, c);
    let mut grads = g.backward(v);
    vars.iter()
        .map(|(name, &var)| {
            let (r, c) = g.value(var).shape();
            (name.clone(), grads.take(var).unwrap_or_else(|| Matrix::zeros(r, c)))
        })
        .collect()
}

/// Relative error with a floor on the denominator so that entries whose
/// gradient is zero up to rounding do not dominate.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub component: Component,
    pub n_checked: usize,
    pub n_nonzero: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Compare autodiff gradients of one component with central differences
/// over every parameter entry, holding the noise fixed.
pub fn check_component(params: &ModelParams, batch: &Batch, noise: &EncodeNoise, c: Component, h: f64, floor: f64) -> GradCheck {
    let grads = analytic(params, batch, noise, c);
    let mut p = params.clone();
    let mut out = GradCheck {
        component: c,
        n_checked: 0,
        n_nonzero: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    for (name, grad) in &grads {
        for k in 0..grad.len() {
            let orig = params.store.get(name).unwrap().data()[k];
            p.store.get_mut(name).unwrap().data_mut()[k] = orig + h;
            let up = value(&p, batch, noise, c);
            p.store.get_mut(name).unwrap().data_mut()[k] = orig - h;
            let down = value(&p, batch, noise, c);
            p.store.get_mut(name).unwrap().data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            out.n_checked += 1;
            if a != 0.0 {
                out.n_nonzero += 1;
            }
            let rel = relative_error(a, fd, floor);
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{name}[{k}]: autodiff {a:e}, finite difference {fd:e}");
            }
        }
    }
    out
}

/// Objective assembled from the components equals the trainer's objective
/// under the same noise; returns the absolute difference.
pub fn assembly_gap(params: &ModelParams, batch: &Batch, alpha: f64, beta: f64, n_total: usize, seed: u64) -> f64 {
    let cfg = ObjectiveConfig {
        alpha,
        beta,
        particles: 1,
        temperature: TEMPERATURE,
        n_total,
        stop_gradient_reference: false,
    };
    let parts = total_loss(params, batch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let noise = EncodeNoise::draw(
        &mut ChaCha8Rng::seed_from_u64(seed),
        params.n_treatments(),
        params.d_z(),
        batch.n_cells(),
    );
    let v = |c| value(params, batch, &noise, c);
    let global = v(Component::KlEmbedding) + v(Component::KlMask) + v(Component::KlArtifact);
    let j1 = v(Component::Recon) - beta * (v(Component::KlBasal) + global / n_total as f64);
    let total = -(j1 + alpha * v(Component::CfAlignment));
    (total - parts.total).abs()
}

/// Sanity check that the parameters touched by each term are the expected ones.
pub fn touched(params: &ModelParams, batch: &Batch, noise: &EncodeNoise, c: Component) -> Vec<String> {
    analytic(params, batch, noise, c)
        .into_iter()
        .filter(|(_, g)| g.sq_norm() > 0.0)
        .map(|(n, _)| n)
        .collect()
}

pub const ARTIFACT_PARAMS: [&str; 2] = [ARTIFACT_MEAN, ARTIFACT_SCALE_RAW];
