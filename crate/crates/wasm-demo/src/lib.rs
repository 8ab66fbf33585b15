//! Browser bindings for three small views of the model: the Gamma-Poisson
//! count distribution, QC thresholds on a synthetic dataset, and relaxed
//! Bernoulli mask samples as the temperature is annealed.
//!
//! Each exported function wraps a plain Rust function so the logic can be
//! tested natively.

use cradle_core::data::Dataset;
use cradle_core::numerics::distributions::{gamma_poisson_log_pmf, uniform_open};
use cradle_core::numerics::{relaxed_bernoulli_rsample, Matrix};
use cradle_core::qc::{compute_stats, fit_thresholds, qc_pass_rate, apply_thresholds, QcConfig, CRITERIA, N_MAD_CRITERIA};
use cradle_core::synth::{synth_generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Probabilities of counts `0..=k_max` under mean `mean`, inverse dispersion `theta`.
pub fn pmf(mean: f64, theta: f64, k_max: u32) -> Result<Vec<f64>, String> {
    if !(mean > 0.0 && theta > 0.0) {
        return Err("mean and theta must be positive".into());
    }
    if k_max > 100_000 {
        return Err("k_max is too large".into());
    }
    Ok((0..=k_max).map(|k| gamma_poisson_log_pmf(f64::from(k), mean, theta).exp()).collect())
}

#[wasm_bindgen]
pub fn gamma_poisson_pmf(mean: f64, theta: f64, k_max: u32) -> Result<Vec<f64>, JsError> {
    pmf(mean, theta, k_max).map_err(|e| JsError::new(&e))
}

/// Histogram over `bins` equal-width bins of `n` relaxed samples with
/// success probability `prob`, normalized to sum to one.
pub fn relaxed_histogram(prob: f64, temperature: f64, n: u32, bins: u32, seed: u32) -> Result<Vec<f64>, String> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err("prob must lie in (0, 1)".into());
    }
    if n == 0 || bins == 0 {
        return Err("n and bins must be positive".into());
    }
    let logit = (prob / (1.0 - prob)).ln();
    let n = n as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let u = uniform_open(&mut rng, 1, n);
    let samples = relaxed_bernoulli_rsample(&Matrix::filled(1, n, logit), temperature, &u).map_err(|e| e.to_string())?;
    let mut hist = vec![0.0; bins as usize];
    for &s in samples.data() {
        let b = ((s * f64::from(bins)) as usize).min(bins as usize - 1);
        hist[b] += 1.0;
    }
    hist.iter_mut().for_each(|h| *h /= n as f64);
    Ok(hist)
}

#[wasm_bindgen]
pub fn relaxed_bernoulli_histogram(prob: f64, temperature: f64, n: u32, bins: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    relaxed_histogram(prob, temperature, n, bins, seed).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct CriterionView {
    name: &'static str,
    lo: Option<f64>,
    hi: Option<f64>,
    fail: usize,
}

#[derive(Serialize)]
struct QcView {
    n_mads: f64,
    qcpr: f64,
    recall: f64,
    false_positive_rate: f64,
    criteria: Vec<CriterionView>,
}

/// A small synthetic dataset whose QC thresholds can be re-fitted at any
/// number of MADs.
#[wasm_bindgen]
pub struct QcExplorer {
    data: Dataset,
    injected: Vec<bool>,
}

impl QcExplorer {
    pub fn build(n_cells: u32, seed: u32) -> Result<Self, String> {
        let cfg = SynthConfig {
            n_cells: n_cells as usize,
            truth_cells: 1,
            seed: u64::from(seed),
            ..SynthConfig::benchmark()
        };
        let (data, truth) = synth_generate(&cfg).map_err(|e| e.to_string())?;
        let injected = truth.artifact.iter().zip(&truth.doublet).map(|(&a, &d)| a == 1 || d == 1).collect();
        Ok(Self { data, injected })
    }

    pub fn view(&self, n_mads: f64) -> Result<String, String> {
        let cfg = QcConfig::with_n_mads(n_mads);
        cfg.validate().map_err(|e| e.to_string())?;
        let stats = compute_stats(&self.data.expr, &self.data.doublets).map_err(|e| e.to_string())?;
        let thresholds = fit_thresholds(&stats, &cfg).map_err(|e| e.to_string())?;
        let report = apply_thresholds(stats, &thresholds);
        let finite = |v: f64| v.is_finite().then_some(v);
        let criteria = CRITERIA
            .iter()
            .enumerate()
            .map(|(k, &name)| {
                let (lo, hi) = if k < N_MAD_CRITERIA {
                    (finite(thresholds.bounds[k].0), finite(thresholds.bounds[k].1))
                } else {
                    (None, None)
                };
                CriterionView {
                    name,
                    lo,
                    hi,
                    fail: report.pass.iter().filter(|p| !p[k]).count(),
                }
            })
            .collect();
        let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
        for (&inj, &label) in self.injected.iter().zip(&report.labels) {
            if inj {
                pos += 1;
                tp += usize::from(label == 1);
            } else {
                neg += 1;
                fp += usize::from(label == 1);
            }
        }
        let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let view = QcView {
            n_mads,
            qcpr: qc_pass_rate(&report.labels).map_err(|e| e.to_string())?,
            recall: rate(tp, pos),
            false_positive_rate: rate(fp, neg),
            criteria,
        };
        serde_json::to_string(&view).map_err(|e| e.to_string())
    }

    /// Per-cell values of MAD criterion `k` (umi, features, mito, hb, ribo).
    pub fn criterion_values(&self, k: usize) -> Result<Vec<f64>, String> {
        if k >= N_MAD_CRITERIA {
            return Err(format!("criterion index {k} out of range"));
        }
        let stats = compute_stats(&self.data.expr, &self.data.doublets).map_err(|e| e.to_string())?;
        Ok(stats.iter().map(|s| s.values()[k]).collect())
    }
}

#[wasm_bindgen]
impl QcExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(n_cells: u32, seed: u32) -> Result<QcExplorer, JsError> {
        Self::build(n_cells, seed).map_err(|e| JsError::new(&e))
    }

    /// JSON summary of thresholds, failures and agreement with the injected
    /// artifacts at `n_mads`.
    pub fn evaluate(&self, n_mads: f64) -> Result<String, JsError> {
        self.view(n_mads).map_err(|e| JsError::new(&e))
    }

    pub fn values(&self, k: usize) -> Result<Vec<f64>, JsError> {
        self.criterion_values(k).map_err(|e| JsError::new(&e))
    }

    pub fn injected(&self) -> Vec<u8> {
        self.injected.iter().map(|&b| u8::from(b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_sums_to_one_and_matches_geometric_case() {
        let p = pmf(4.0, 1.0, 400).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // theta = 1 is geometric with success probability 1 / (1 + mean).
        let q: f64 = 1.0 / 5.0;
        for (k, v) in p.iter().take(10).enumerate() {
            assert!((v - q * (1.0 - q).powi(k as i32)).abs() < 1e-12);
        }
        assert!(pmf(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn relaxed_histogram_sharpens_as_temperature_drops() {
        let edge = |t: f64| {
            let h = relaxed_histogram(0.3, t, 5000, 10, 1).unwrap();
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            h[0] + h[9]
        };
        assert!(edge(0.1) > edge(2.0));
        let h = relaxed_histogram(0.3, 0.05, 20000, 2, 3).unwrap();
        assert!((h[1] - 0.3).abs() < 0.02, "{h:?}");
    }

    #[test]
    fn explorer_is_monotone_in_n_mads() {
        let ex = QcExplorer::build(300, 2).unwrap();
        let qcpr = |n: f64| -> f64 {
            let v: serde_json::Value = serde_json::from_str(&ex.view(n).unwrap()).unwrap();
            v["qcpr"].as_f64().unwrap()
        };
        assert!(qcpr(3.0) <= qcpr(4.0) && qcpr(4.0) <= qcpr(5.0));
        assert_eq!(ex.criterion_values(0).unwrap().len(), 300);
        assert!(ex.criterion_values(5).is_err());
    }
}
