use cradle_core::data::{Dataset, ExpressionMatrix, GeneFlags, PerturbationSet, CONTROL_NAME};
use cradle_core::model::{CfReferencePool, ModelConfig, ModelParams, Normalizer, PreparedData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A small model with its dataset, labels and prepared inputs.
pub struct Tiny {
    pub params: ModelParams,
    pub data: Dataset,
    pub labels: Vec<u8>,
    pub prep: PreparedData,
}

impl Tiny {
    pub fn all_cells(&self) -> Vec<usize> {
        (0..self.data.n_cells()).collect()
    }
}

/// Build a model over `patterns` (indices into `names`, the last of which is
/// the control) with random counts, then jitter every parameter so no
/// tensor sits at its initialization.
pub fn tiny(
    cfg: ModelConfig,
    n_genes: usize,
    names: &[&str],
    patterns: &[Vec<usize>],
    labels: &[u8],
    jitter: f64,
    seed: u64,
) -> Tiny {
    assert_eq!(names.last(), Some(&CONTROL_NAME));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<u32>> = patterns
        .iter()
        .map(|_| {
            let mut r: Vec<u32> = (0..n_genes).map(|_| rng.random_range(0..12)).collect();
            r[0] += 1;
            r
        })
        .collect();
    let expr = ExpressionMatrix::from_rows(&rows).unwrap();
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let perts = PerturbationSet::from_patterns(patterns, names.clone()).unwrap();
    let data = Dataset::new(expr, perts, vec![false; patterns.len()]).unwrap();
    let cells: Vec<usize> = (0..patterns.len()).collect();
    let mut params = ModelParams::init(
        cfg,
        data.expr.gene_ids.clone(),
        vec![GeneFlags::default(); n_genes],
        names,
        Normalizer::fit(&data.expr, &cells).unwrap(),
        &mut rng,
    )
    .unwrap();
    let noise = Normal::new(0.0, jitter).unwrap();
    for (_, m) in params.store.iter_mut() {
        m.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    let pool = CfReferencePool::build(&data, labels, &cells).unwrap();
    let prep = PreparedData::new(&params, &data, labels, &pool).unwrap();
    Tiny {
        params,
        data,
        labels: labels.to_vec(),
        prep,
    }
}

/// Two treatments, their combination and controls, with two artifact cells.
pub fn small_instance(cfg: ModelConfig, seed: u64) -> Tiny {
    let patterns = vec![
        vec![0],
        vec![1],
        vec![0, 1],
        vec![2],
        vec![2],
        vec![0],
        vec![1],
        vec![0, 1],
        vec![2],
    ];
    let labels = [0, 0, 0, 0, 1, 1, 0, 0, 0];
    tiny(cfg, 6, &["A", "B", CONTROL_NAME], &patterns, &labels, 0.3, seed)
}
