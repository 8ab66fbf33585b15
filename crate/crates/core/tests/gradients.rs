mod common;

use common::fixtures::small_instance;
use common::gradients::{assembly_gap, check_component, touched, Component, ARTIFACT_PARAMS, COMPONENTS};
use cradle_core::model::{EncodeNoise, ModelConfig};
use cradle_core::numerics::Activation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-5;

fn config(activation: Activation) -> ModelConfig {
    ModelConfig {
        d_z: 2,
        mask_prior_prob: 0.2,
        emb_hidden: vec![3],
        enc_hidden: vec![4],
        dec_hidden: vec![3],
        activation,
        ..ModelConfig::default()
    }
}

fn run(activation: Activation, seed: u64) {
    let t = small_instance(config(activation), seed);
    let batch = t.prep.batch(&t.all_cells());
    assert!(!batch.cf_cells.is_empty());
    let noise = EncodeNoise::draw(&mut ChaCha8Rng::seed_from_u64(seed + 100), 3, 2, batch.n_cells());
    for c in COMPONENTS {
        let r = check_component(&t.params, &batch, &noise, c, H, FLOOR);
        println!("{activation:?} seed {seed} {c:?}: {} entries, {} nonzero, max rel {:.2e}", r.n_checked, r.n_nonzero, r.max_rel);
        assert!(r.n_nonzero > 0, "{c:?} has no gradient");
        assert!(r.max_rel < TOL, "{c:?}: {}", r.worst);
    }
}

#[test]
fn every_component_matches_finite_differences_softplus() {
    for seed in 0..3 {
        run(Activation::Softplus, seed);
    }
}

#[test]
fn every_component_matches_finite_differences_relu() {
    run(Activation::Relu, 11);
}

#[test]
fn components_reassemble_the_objective() {
    let t = small_instance(config(Activation::Softplus), 4);
    let batch = t.prep.batch(&t.all_cells());
    for (alpha, beta, n_total) in [(1.0, 0.5, 9), (0.0, 1.0, 100), (2.5, 0.1, 1)] {
        let gap = assembly_gap(&t.params, &batch, alpha, beta, n_total, 5);
        assert!(gap < 1e-12, "gap {gap:e}");
    }
}

#[test]
fn components_touch_the_expected_parameters() {
    let t = small_instance(config(Activation::Softplus), 6);
    let batch = t.prep.batch(&t.all_cells());
    let noise = EncodeNoise::draw(&mut ChaCha8Rng::seed_from_u64(1), 3, 2, batch.n_cells());
    let kl_u = touched(&t.params, &batch, &noise, Component::KlArtifact);
    assert_eq!(kl_u, ARTIFACT_PARAMS.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let kl_m = touched(&t.params, &batch, &noise, Component::KlMask);
    assert_eq!(kl_m, vec!["mask_logits".to_string()]);
    let j2 = touched(&t.params, &batch, &noise, Component::CfAlignment);
    assert!(j2.iter().any(|n| n.starts_with("enc.")));
    assert!(j2.iter().all(|n| !n.starts_with("dec.") && n != "theta_raw"));
    let recon = touched(&t.params, &batch, &noise, Component::Recon);
    assert!(recon.iter().any(|n| n == "theta_raw"));
}
