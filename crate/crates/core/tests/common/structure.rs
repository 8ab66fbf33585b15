//! Exact identities of the latent composition and the decoder.

use cradle_core::data::CONTROL_NAME;
use cradle_core::model::{decode, encode, generate, GenerateOptions, LibraryPolicy, ModelConfig, Sampling};
use cradle_core::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixtures::{tiny, Tiny};

/// Random model over three treatments with every single, pair and triple
/// pattern present, half of the cells flagged as artifacts.
pub fn random_model(seed: u64) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_z = rng.random_range(2..=6);
    let cfg = ModelConfig {
        d_z,
        mask_prior_prob: rng.random_range(0.2..0.8),
        emb_hidden: vec![rng.random_range(2..=6)],
        enc_hidden: vec![rng.random_range(2..=6)],
        ..ModelConfig::default()
    };
    let patterns = vec![vec![0], vec![1], vec![2], vec![0, 1], vec![1, 2], vec![0, 1, 2], vec![3], vec![0], vec![3]];
    let labels = [0, 1, 0, 1, 0, 1, 0, 1, 1];
    tiny(cfg, 7, &["A", "B", "C", CONTROL_NAME], &patterns, &labels, 0.5, seed)
}

pub const SAMPLINGS: [Sampling; 3] = [Sampling::Relaxed { temperature: 0.6 }, Sampling::Hard, Sampling::Mean];

/// Entries of `z_a` on artifact-free cells that are not exactly zero.
pub fn artifact_shift_violations(t: &Tiny, seed: u64) -> usize {
    let batch = t.prep.batch(&t.all_cells());
    let mut bad = 0;
    for s in SAMPLINGS {
        let lat = encode(&t.params, &batch, s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (i, &a) in t.labels.iter().enumerate() {
            if a == 0 {
                bad += lat.z_a.row(i).iter().filter(|&&v| v != 0.0).count();
            }
            if a == 1 {
                assert_eq!(lat.z_a.row(i), lat.u.row(0));
            }
        }
    }
    bad
}

/// Entries where a combination's shift differs from the sum of its parts.
pub fn superposition_violations(t: &Tiny, seed: u64) -> usize {
    let batch = t.prep.batch(&t.all_cells());
    let mut bad = 0;
    for s in SAMPLINGS {
        let lat = encode(&t.params, &batch, s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let single = |k: usize| lat.z_p.row(k).to_vec();
        let (a, b, c) = (single(0), single(1), single(2));
        for (row, parts) in [(3, vec![&a, &b]), (4, vec![&b, &c]), (5, vec![&a, &b, &c])] {
            for j in 0..lat.z_p.cols() {
                let sum = parts.iter().fold(0.0, |acc, p| acc + p[j]);
                bad += usize::from(lat.z_p.get(row, j) != sum);
            }
        }
    }
    bad
}

/// Largest relative gap between a decoded row's total mean and its library.
pub fn library_gap(t: &Tiny, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (16, t.params.d_z());
    let z = |rng: &mut ChaCha8Rng| Matrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
    let (zb, zp, za) = (z(&mut rng), z(&mut rng), z(&mut rng));
    let libs: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(0.0..6.0))).collect();
    let out = decode(&t.params, &zb, &zp, &za, &libs).unwrap();
    (0..n)
        .map(|i| (out.mean.row(i).iter().sum::<f64>() - libs[i]).abs() / libs[i])
        .fold(0.0, f64::max)
}

/// Generation with default options equals generation with the artifact
/// indicator explicitly off.
pub fn default_generation_is_artifact_free(t: &Tiny, seed: u64) -> bool {
    let opts = GenerateOptions::new(LibraryPolicy::Fixed(500.0));
    if opts.artifact != 0 {
        return false;
    }
    let patterns = vec![vec![0], vec![1, 2], vec![3]];
    let run = |o: &GenerateOptions| generate(&t.params, &patterns, o, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let explicit = GenerateOptions {
        artifact: 0,
        sampling: Sampling::Hard,
        library: LibraryPolicy::Fixed(500.0),
    };
    run(&opts) == run(&explicit)
}
