//! Ground-truth synthetic Perturb-seq data.
//!
//! Cells follow the model's own generative family: a standard-normal basal
//! state plus a sparse, additive treatment shift is mapped through a fixed
//! random linear map and softmax to gene frequencies, scaled by a log-normal
//! library size and sampled as Gamma-Poisson counts. Artifact cells get a
//! boosted hemoglobin share and a shrunken library; doublets sum two cells.
//!
//! Every cell draws from its own ChaCha stream (`seed`, cell index + 1), so
//! output does not depend on generation order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, ExpressionMatrix, GeneFlags, PerturbationSet, CONTROL_NAME};
use crate::error::{Error, Result};
use crate::eval::log_cpm_row;
use crate::numerics::distributions::gamma_poisson_sample;
use crate::qc::{qc_evaluate, QcConfig};

pub const TRUTH_FILE: &str = "truth.json";

/// Generator settings. Treatment indices in `combinations` refer to the
/// `n_treatments − 1` non-control treatments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_cells: usize,
    pub n_genes: usize,
    /// Including the control.
    pub n_treatments: usize,
    pub d_z: usize,
    pub mask_density: f64,
    pub effect_scale: f64,
    /// Standard deviation of the latent-to-logit weights.
    pub weight_scale: f64,
    pub artifact_prevalence: f64,
    /// Multiplier on hemoglobin-gene frequencies of artifact cells.
    pub artifact_hb_factor: f64,
    /// Multiplier on the library size of artifact cells.
    pub artifact_library_factor: f64,
    pub doublet_rate: f64,
    pub library_log_mean: f64,
    pub library_log_sd: f64,
    pub theta: f64,
    pub control_fraction: f64,
    pub combinations: Vec<Vec<usize>>,
    pub n_mito: usize,
    pub n_hemoglobin: usize,
    pub n_ribosomal: usize,
    /// Cells per condition for the Monte Carlo truth ATE.
    pub truth_cells: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl SynthConfig {
    /// The frozen desk-scale benchmark.
    pub fn benchmark() -> Self {
        Self {
            n_cells: 2000,
            n_genes: 50,
            n_treatments: 6,
            d_z: 8,
            mask_density: 0.5,
            effect_scale: 1.5,
            weight_scale: 0.4,
            artifact_prevalence: 0.3,
            artifact_hb_factor: 20.0,
            artifact_library_factor: 0.2,
            doublet_rate: 0.05,
            library_log_mean: 2000f64.ln(),
            library_log_sd: 0.3,
            theta: 2.0,
            control_fraction: 0.2,
            combinations: vec![vec![0, 1], vec![2, 3], vec![1, 4]],
            n_mito: 3,
            n_hemoglobin: 4,
            n_ribosomal: 5,
            truth_cells: 20_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let n_flagged = self.n_mito + self.n_hemoglobin + self.n_ribosomal;
        if self.n_genes < 10 || n_flagged >= self.n_genes {
            return bad("n_genes must be at least 10 and exceed the number of flagged genes");
        }
        if self.n_mito == 0 || self.n_hemoglobin == 0 || self.n_ribosomal == 0 {
            return bad("every flag class needs at least one gene");
        }
        if self.n_treatments < 2 || self.d_z == 0 || self.n_cells == 0 {
            return bad("need n_cells > 0, d_z > 0 and at least one treatment besides control");
        }
        for (name, r) in [
            ("mask_density", self.mask_density),
            ("artifact_prevalence", self.artifact_prevalence),
            ("doublet_rate", self.doublet_rate),
            ("control_fraction", self.control_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.effect_scale >= 0.0 && self.weight_scale >= 0.0) {
            return bad("effect_scale and weight_scale must be nonnegative");
        }
        if !(self.artifact_hb_factor > 0.0 && self.artifact_library_factor > 0.0) {
            return bad("artifact factors must be positive");
        }
        if !(self.theta > 0.0 && self.library_log_sd >= 0.0) {
            return bad("theta must be positive and library_log_sd nonnegative");
        }
        if self.truth_cells == 0 {
            return bad("truth_cells must be positive");
        }
        let n_perturb = self.n_treatments - 1;
        for c in &self.combinations {
            if c.len() < 2 || c.iter().any(|&t| t >= n_perturb) {
                return Err(Error::Config(format!(
                    "combination {c:?} must list at least two of the {n_perturb} non-control treatments"
                )));
            }
        }
        let expected_controls = self.control_fraction * self.n_cells as f64;
        if self.control_fraction > 0.0 && expected_controls < 1.0 {
            return Err(Error::Config(format!(
                "control_fraction {} yields no control cells at n_cells = {}",
                self.control_fraction, self.n_cells
            )));
        }
        Ok(())
    }

    fn control_index(&self) -> usize {
        self.n_treatments - 1
    }

    /// Treatment patterns cells may receive, control last.
    pub fn conditions(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = (0..self.n_treatments - 1).map(|t| vec![t]).collect();
        for c in &self.combinations {
            let mut c = c.clone();
            c.sort_unstable();
            c.dedup();
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out.push(vec![self.control_index()]);
        out
    }

    pub fn treatment_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..self.n_treatments).map(|k| format!("GENE{k}")).collect();
        names.push(CONTROL_NAME.to_string());
        names
    }

    fn gene_layout(&self) -> (Vec<String>, Vec<GeneFlags>) {
        let mut ids = Vec::with_capacity(self.n_genes);
        let mut flags = Vec::with_capacity(self.n_genes);
        for k in 0..self.n_mito {
            ids.push(format!("MT-{}", k + 1));
            flags.push(GeneFlags { is_mito: true, ..GeneFlags::default() });
        }
        for k in 0..self.n_hemoglobin {
            ids.push(format!("HB{}", k + 1));
            flags.push(GeneFlags { is_hemoglobin: true, ..GeneFlags::default() });
        }
        for k in 0..self.n_ribosomal {
            ids.push(format!("RPL{}", k + 1));
            flags.push(GeneFlags { is_ribosomal: true, ..GeneFlags::default() });
        }
        let rest = self.n_genes - ids.len();
        for k in 0..rest {
            ids.push(format!("G{:03}", k + 1));
            flags.push(GeneFlags::default());
        }
        (ids, flags)
    }
}

/// Known quantities behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub treatment_names: Vec<String>,
    pub gene_ids: Vec<String>,
    /// `T × d_z` binary masks (control row all zero).
    pub masks: Vec<Vec<u8>>,
    /// `T × d_z` embeddings.
    pub embeddings: Vec<Vec<f64>>,
    /// Per-gene logit bias and `d_z × D_x` weights of the frequency map.
    pub gene_bias: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    /// Per-gene log-scale frequency shift of artifact cells.
    pub artifact_log_shift: Vec<f64>,
    pub artifact_log_library_shift: f64,
    pub artifact: Vec<u8>,
    pub doublet: Vec<u8>,
    /// Condition key → per-gene ATE on the evaluation scale (Monte Carlo over
    /// clean cells, count noise included).
    pub ate: BTreeMap<String, Vec<f64>>,
    /// Condition key → per-gene difference of `log1p(10⁴ × frequency)`
    /// averaged over basal states, without count noise.
    pub ate_noiseless: BTreeMap<String, Vec<f64>>,
    /// Condition key → latent shift `Σ_t m_t ⊙ e_t`.
    pub latent_effects: BTreeMap<String, Vec<f64>>,
}

impl SynthTruth {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fixed generator state shared by every cell.
struct Globals {
    masks: Vec<Vec<u8>>,
    embeddings: Vec<Vec<f64>>,
    bias: Vec<f64>,
    weights: Vec<Vec<f64>>,
    hb_genes: Vec<bool>,
}

impl Globals {
    fn draw(cfg: &SynthConfig, flags: &[GeneFlags]) -> Self {
        let mut rng = stream(cfg.seed, 0);
        let (t, d) = (cfg.n_treatments, cfg.d_z);
        let mut masks = vec![vec![0u8; d]; t];
        for row in masks.iter_mut().take(t - 1) {
            for m in row.iter_mut() {
                *m = u8::from(rng.random::<f64>() < cfg.mask_density);
            }
        }
        let effect = Normal::new(0.0, cfg.effect_scale.max(0.0)).expect("valid normal");
        let mut embeddings = vec![vec![0.0; d]; t];
        for row in embeddings.iter_mut().take(t - 1) {
            for e in row.iter_mut() {
                *e = effect.sample(&mut rng);
            }
        }
        let bias = flags
            .iter()
            .map(|f| {
                let base: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
                if f.is_hemoglobin {
                    base - 2.0
                } else if f.is_ribosomal {
                    base + 1.0
                } else {
                    base
                }
            })
            .collect();
        let w = Normal::new(0.0, cfg.weight_scale).expect("valid normal");
        // QC-flagged genes carry no latent loading, so their shares move only
        // with the artifact shift and count noise.
        let weights = (0..d)
            .map(|_| {
                flags
                    .iter()
                    .map(|f| {
                        let v = w.sample(&mut rng);
                        if f.is_mito || f.is_hemoglobin || f.is_ribosomal {
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            masks,
            embeddings,
            bias,
            weights,
            hb_genes: flags.iter().map(|f| f.is_hemoglobin).collect(),
        }
    }

    fn latent_shift(&self, pattern: &[usize]) -> Vec<f64> {
        let d = self.weights.len();
        let mut z = vec![0.0; d];
        for &t in pattern {
            for k in 0..d {
                z[k] += f64::from(self.masks[t][k]) * self.embeddings[t][k];
            }
        }
        z
    }

    /// Gene frequencies for latent `z`, optionally with the artifact shift.
    fn frequencies(&self, z: &[f64], artifact_hb_factor: Option<f64>) -> Vec<f64> {
        let mut logits = self.bias.clone();
        for (zk, wk) in z.iter().zip(&self.weights) {
            for (l, w) in logits.iter_mut().zip(wk) {
                *l += zk * w;
            }
        }
        if let Some(f) = artifact_hb_factor {
            let shift = f.ln();
            for (l, &hb) in logits.iter_mut().zip(&self.hb_genes) {
                if hb {
                    *l += shift;
                }
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One clean or artifact cell; redraws until the count vector is nonzero.
fn draw_cell<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    globals: &Globals,
    shift: &[f64],
    artifact: bool,
    rng: &mut R,
) -> Vec<u32> {
    let library = LogNormal::new(cfg.library_log_mean, cfg.library_log_sd).expect("valid log-normal");
    loop {
        let z: Vec<f64> = shift
            .iter()
            .map(|s| s + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let freq = globals.frequencies(&z, artifact.then_some(cfg.artifact_hb_factor));
        let mut l: f64 = library.sample(rng);
        if artifact {
            l *= cfg.artifact_library_factor;
        }
        let counts: Vec<u32> = freq
            .iter()
            .map(|&f| gamma_poisson_sample(rng, f * l, cfg.theta))
            .collect();
        if counts.iter().any(|&c| c > 0) {
            return counts;
        }
    }
}

/// Draw a synthetic dataset and its ground truth.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, SynthTruth)> {
    cfg.validate()?;
    let (gene_ids, gene_flags) = cfg.gene_layout();
    let globals = Globals::draw(cfg, &gene_flags);
    let conditions = cfg.conditions();
    let names = cfg.treatment_names();
    let control = conditions.len() - 1;
    let shifts: Vec<Vec<f64>> = conditions.iter().map(|c| globals.latent_shift(c)).collect();

    let n = cfg.n_cells;
    let mut patterns = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n * cfg.n_genes);
    let mut artifact = Vec::with_capacity(n);
    let mut doublet = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(cfg.seed, i as u64 + 1);
        let c = if rng.random::<f64>() < cfg.control_fraction {
            control
        } else {
            rng.random_range(0..control)
        };
        let is_artifact = rng.random::<f64>() < cfg.artifact_prevalence;
        let is_doublet = rng.random::<f64>() < cfg.doublet_rate;
        let mut row = draw_cell(cfg, &globals, &shifts[c], is_artifact, &mut rng);
        if is_doublet {
            let partner = draw_cell(cfg, &globals, &shifts[c], false, &mut rng);
            for (a, b) in row.iter_mut().zip(partner) {
                *a = a.saturating_add(b);
            }
        }
        patterns.push(conditions[c].clone());
        counts.extend(row);
        artifact.push(u8::from(is_artifact));
        doublet.push(u8::from(is_doublet));
    }
    if cfg.control_fraction > 0.0 && !patterns.iter().any(|p| p == &conditions[control]) {
        return Err(Error::Config(format!(
            "no control cells drawn at n_cells = {n}; raise n_cells or control_fraction"
        )));
    }

    let expr = ExpressionMatrix::new(
        n,
        cfg.n_genes,
        counts,
        gene_ids.clone(),
        gene_flags,
        (0..n).map(|i| format!("cell{i:05}")).collect(),
    )?;
    let perts = PerturbationSet::from_patterns(&patterns, names.clone())?;
    let dataset = Dataset::new(expr, perts, doublet.iter().map(|&d| d == 1).collect())?;

    // Monte Carlo truth on the evaluation scale. Every condition replays the
    // same stream, so basal states and noise are shared across conditions.
    let truth_stream = u64::MAX;
    let mut mean_log_cpm = Vec::with_capacity(conditions.len());
    let mut mean_log_freq = Vec::with_capacity(conditions.len());
    for shift in &shifts {
        let mut rng = stream(cfg.seed, truth_stream);
        let mut acc = vec![0.0; cfg.n_genes];
        let mut acc_freq = vec![0.0; cfg.n_genes];
        for _ in 0..cfg.truth_cells {
            let row = draw_cell(cfg, &globals, shift, false, &mut rng);
            for (a, v) in acc.iter_mut().zip(log_cpm_row(&row)) {
                *a += v;
            }
            let z: Vec<f64> = shift
                .iter()
                .map(|s| s + rng.sample::<f64, _>(StandardNormal))
                .collect();
            for (a, f) in acc_freq.iter_mut().zip(globals.frequencies(&z, None)) {
                *a += (f * 1e4).ln_1p();
            }
        }
        let m = cfg.truth_cells as f64;
        mean_log_cpm.push(acc.into_iter().map(|v| v / m).collect::<Vec<f64>>());
        mean_log_freq.push(acc_freq.into_iter().map(|v| v / m).collect::<Vec<f64>>());
    }
    let key = |p: &[usize]| dataset.perts.key_of(p);
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let mut ate = BTreeMap::new();
    let mut ate_noiseless = BTreeMap::new();
    let mut latent_effects = BTreeMap::new();
    for (k, c) in conditions.iter().enumerate().take(control) {
        ate.insert(key(c), diff(&mean_log_cpm[k], &mean_log_cpm[control]));
        ate_noiseless.insert(key(c), diff(&mean_log_freq[k], &mean_log_freq[control]));
        latent_effects.insert(key(c), shifts[k].clone());
    }

    let hb_shift = cfg.artifact_hb_factor.ln();
    let truth = SynthTruth {
        treatment_names: names,
        gene_ids,
        masks: globals.masks.clone(),
        embeddings: globals.embeddings.clone(),
        gene_bias: globals.bias.clone(),
        weights: globals.weights.clone(),
        artifact_log_shift: globals
            .hb_genes
            .iter()
            .map(|&hb| if hb { hb_shift } else { 0.0 })
            .collect(),
        artifact_log_library_shift: cfg.artifact_library_factor.ln(),
        artifact,
        doublet,
        ate,
        ate_noiseless,
        latent_effects,
    };
    Ok((dataset, truth))
}

/// Write the dataset files plus `truth.json` into `dir`.
pub fn write_synth(dir: &Path, dataset: &Dataset, truth: &SynthTruth) -> Result<()> {
    data::write_dataset(dir, dataset)?;
    truth.write(&dir.join(TRUTH_FILE))
}

/// Agreement between injected artifacts and QC labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QcConfusion {
    pub artifact_fail: usize,
    pub artifact_pass: usize,
    pub clean_fail: usize,
    pub clean_pass: usize,
}

impl QcConfusion {
    /// Fraction of injected artifacts (incl. doublets) flagged by QC.
    pub fn recall(&self) -> f64 {
        let pos = self.artifact_fail + self.artifact_pass;
        if pos == 0 {
            return f64::NAN;
        }
        self.artifact_fail as f64 / pos as f64
    }

    pub fn false_positive_rate(&self) -> f64 {
        let neg = self.clean_fail + self.clean_pass;
        if neg == 0 {
            return f64::NAN;
        }
        self.clean_fail as f64 / neg as f64
    }
}

/// Run QC on synthetic data and cross-tabulate against the injected truth.
/// A cell counts as a true artifact if it was shifted or is a doublet.
pub fn synth_qc_consistency(dataset: &Dataset, truth: &SynthTruth, qc: &QcConfig) -> Result<QcConfusion> {
    if truth.artifact.len() != dataset.n_cells() {
        return Err(Error::shape("truth does not match dataset"));
    }
    let report = qc_evaluate(&dataset.expr, &dataset.doublets, qc)?;
    let mut out = QcConfusion::default();
    for i in 0..dataset.n_cells() {
        let is_art = truth.artifact[i] == 1 || truth.doublet[i] == 1;
        match (is_art, report.labels[i] == 1) {
            (true, true) => out.artifact_fail += 1,
            (true, false) => out.artifact_pass += 1,
            (false, true) => out.clean_fail += 1,
            (false, false) => out.clean_pass += 1,
        }
    }
    Ok(out)
}
