//! Treatment-effect metrics and the evaluation driver.
//!
//! Expression is compared on the `log1p(counts / library × 10⁴)` scale. A
//! treatment's ATE is the per-gene mean on that scale among treated cells
//! minus the mean among control cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ExpressionMatrix, Split, CONTROL_NAME};
use crate::error::{Error, Result};
use crate::model::{generate, GenerateOptions, LibraryPolicy, ModelParams, Sampling};
use crate::qc::{compute_stats, fit_thresholds, label_against, qc_pass_rate, QcConfig};
use crate::synth::SynthTruth;

pub const CPM_SCALE: f64 = 1e4;
pub const ATE_SCALE_NOTE: &str = "log1p(counts / library_size * 1e4)";

/// `log1p(10⁴ × counts / library)`; an empty cell maps to zeros.
pub fn log_cpm_row(counts: &[u32]) -> Vec<f64> {
    let lib: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if lib == 0 {
        return vec![0.0; counts.len()];
    }
    let k = CPM_SCALE / lib as f64;
    counts.iter().map(|&c| (f64::from(c) * k).ln_1p()).collect()
}

/// Per-gene mean of [`log_cpm_row`] over `cells` of `x`.
pub fn mean_log_cpm(x: &ExpressionMatrix, cells: &[usize]) -> Result<Vec<f64>> {
    if cells.is_empty() {
        return Err(Error::validation("mean expression of an empty group"));
    }
    let mut acc = vec![0.0; x.n_genes()];
    for &i in cells {
        for (a, v) in acc.iter_mut().zip(log_cpm_row(x.row(i))) {
            *a += v;
        }
    }
    let n = cells.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteVector {
    pub treatment: String,
    pub effect: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

pub fn average_treatment_effect(
    treatment: &str,
    treated: &ExpressionMatrix,
    control: &ExpressionMatrix,
) -> Result<AteVector> {
    if treated.n_genes() != control.n_genes() {
        return Err(Error::shape("treated and control groups differ in gene count"));
    }
    let (nt, nc) = (treated.n_cells(), control.n_cells());
    if nt == 0 || nc == 0 {
        return Err(Error::validation(format!(
            "ATE for '{treatment}' needs non-empty groups ({nt} treated, {nc} control)"
        )));
    }
    let t = mean_log_cpm(treated, &(0..nt).collect::<Vec<_>>())?;
    let c = mean_log_cpm(control, &(0..nc).collect::<Vec<_>>())?;
    Ok(AteVector {
        treatment: treatment.to_string(),
        effect: t.iter().zip(&c).map(|(a, b)| a - b).collect(),
        n_treated: nt,
        n_control: nc,
    })
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(Error::shape(format!(
            "need two equal-length vectors of at least 2 genes, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn ate_pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let (mp, mt) = (mean(pred), mean(truth));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        sxy += (p - mp) * (t - mt);
        sxx += (p - mp).powi(2);
        syy += (t - mt).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical("Pearson correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Coefficient of determination of `pred` as a predictor of `truth`.
pub fn ate_r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mt = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - mt).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Numerical("R² undefined for constant truth".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Indices of the `k` largest `|effect|`, ties to the lower index.
pub fn top_k_genes(effect: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..effect.len()).collect();
    idx.sort_by(|&a, &b| effect[b].abs().total_cmp(&effect[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn jaccard_top_k(pred: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("jaccard_top_k arguments differ in length"));
    }
    if k == 0 || k > pred.len() {
        return Err(Error::validation(format!("k = {k} must lie in 1..={}", pred.len())));
    }
    let a = top_k_genes(pred, k);
    let b = top_k_genes(truth, k);
    let inter = a.iter().filter(|g| b.contains(g)).count();
    Ok(inter as f64 / (2 * k - inter) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub n_generated: usize,
    pub jaccard_k: usize,
    pub n_mads: Vec<f64>,
    pub top_n: usize,
    /// Library size for generated cells; `None` uses the median training library.
    pub library_size: Option<f64>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_generated: 512,
            jaccard_k: 50,
            n_mads: vec![3.0, 4.0, 5.0],
            top_n: 20,
            library_size: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentScore {
    pub treatment: String,
    pub n_treated: usize,
    pub n_control: usize,
    pub true_ate_norm: f64,
    pub ate_pearson: f64,
    pub ate_r2: f64,
    pub jaccard: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub treatment: String,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub ate_pearson: f64,
    pub ate_r2: f64,
    pub jaccard: f64,
}

impl MetricMeans {
    fn of<'a>(scores: impl Iterator<Item = &'a TreatmentScore>) -> Self {
        let (mut n, mut m) = (0usize, Self::default());
        for s in scores {
            n += 1;
            m.ate_pearson += s.ate_pearson;
            m.ate_r2 += s.ate_r2;
            m.jaccard += s.jaccard;
        }
        if n == 0 {
            return Self {
                ate_pearson: f64::NAN,
                ate_r2: f64::NAN,
                jaccard: f64::NAN,
            };
        }
        let n = n as f64;
        Self {
            ate_pearson: m.ate_pearson / n,
            ate_r2: m.ate_r2 / n,
            jaccard: m.jaccard / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcprEntry {
    pub n_mads: f64,
    /// Pass rate of cells generated with the artifact indicator off.
    pub clean: f64,
    /// Pass rate of cells generated with the artifact indicator on.
    pub artifact: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ate_scale: String,
    pub truth_source: String,
    pub jaccard_k: usize,
    pub n_generated: usize,
    pub seed: u64,
    pub treatments: Vec<TreatmentScore>,
    pub skipped: Vec<Skipped>,
    pub mean: MetricMeans,
    pub top_treatments: Vec<String>,
    pub top_mean: MetricMeans,
    pub qcpr: Vec<QcprEntry>,
}

/// Score predicted effects against true effects, keyed by treatment.
/// Treatments missing a prediction or with undefined metrics are skipped.
pub fn score_treatments(
    predicted: &BTreeMap<String, Vec<f64>>,
    truth: &BTreeMap<String, AteVector>,
    k: usize,
) -> (Vec<TreatmentScore>, Vec<Skipped>) {
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for (name, t) in truth {
        let Some(p) = predicted.get(name) else {
            skipped.push(Skipped {
                treatment: name.clone(),
                reason: "no prediction".into(),
            });
            continue;
        };
        let metrics = ate_pearson(p, &t.effect).and_then(|rho| {
            Ok((rho, ate_r2(p, &t.effect)?, jaccard_top_k(p, &t.effect, k)?))
        });
        match metrics {
            Ok((rho, r2, jac)) => scores.push(TreatmentScore {
                treatment: name.clone(),
                n_treated: t.n_treated,
                n_control: t.n_control,
                true_ate_norm: t.effect.iter().map(|v| v * v).sum::<f64>().sqrt(),
                ate_pearson: rho,
                ate_r2: r2,
                jaccard: jac,
            }),
            Err(e) => skipped.push(Skipped {
                treatment: name.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (scores, skipped)
}

/// Where reference effects come from.
pub enum TruthSource<'a> {
    /// Held-out cells: QC-passing test cells of each treatment against
    /// QC-passing test control cells.
    Observed { labels: &'a [u8] },
    Synthetic(&'a SynthTruth),
}

fn observed_truth(
    data: &Dataset,
    split: &Split,
    labels: &[u8],
    skipped: &mut Vec<Skipped>,
) -> Result<BTreeMap<String, AteVector>> {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    let mut control = Vec::new();
    let mut failing: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for &i in &split.test {
        let p = data.perts.pattern(i);
        if labels[i] != 0 {
            *failing.entry(p).or_default() += 1;
            continue;
        }
        if data.perts.is_control(i) {
            control.push(i);
        } else {
            groups.entry(p).or_default().push(i);
        }
    }
    if control.is_empty() {
        return Err(Error::validation("test split has no QC-passing control cells"));
    }
    let control_mean = mean_log_cpm(&data.expr, &control)?;
    for (p, _) in failing {
        if !groups.contains_key(&p) && !data.perts.key_of(&p).eq(CONTROL_NAME) {
            skipped.push(Skipped {
                treatment: data.perts.key_of(&p),
                reason: "no QC-passing test cells".into(),
            });
        }
    }
    let mut out = BTreeMap::new();
    for (p, cells) in groups {
        let t = mean_log_cpm(&data.expr, &cells)?;
        let key = data.perts.key_of(&p);
        out.insert(
            key.clone(),
            AteVector {
                treatment: key,
                effect: t.iter().zip(&control_mean).map(|(a, b)| a - b).collect(),
                n_treated: cells.len(),
                n_control: control.len(),
            },
        );
    }
    Ok(out)
}

fn synthetic_truth(truth: &SynthTruth, n_generated: usize) -> BTreeMap<String, AteVector> {
    truth
        .ate
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                AteVector {
                    treatment: k.clone(),
                    effect: v.clone(),
                    n_treated: n_generated,
                    n_control: n_generated,
                },
            )
        })
        .collect()
}

fn median_library(data: &Dataset, cells: &[usize]) -> Result<f64> {
    let libs: Vec<f64> = cells
        .iter()
        .map(|&i| data.expr.row(i).iter().map(|&c| f64::from(c)).sum())
        .collect();
    crate::qc::median(&libs)
}

/// Generate cells per treatment, compare predicted and reference ATEs, and
/// measure QC pass rates of generated cells against thresholds fitted on the
/// training cells.
pub fn evaluate(
    params: &ModelParams,
    data: &Dataset,
    split: &Split,
    source: TruthSource<'_>,
    qc: &QcConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.n_generated == 0 {
        return Err(Error::Config("n_generated must be positive".into()));
    }
    if opts.jaccard_k == 0 || opts.jaccard_k > params.n_genes() {
        return Err(Error::Config(format!(
            "jaccard_k = {} must lie in 1..={}",
            opts.jaccard_k,
            params.n_genes()
        )));
    }
    if split.train.is_empty() {
        return Err(Error::validation("evaluation needs training cells for QC thresholds"));
    }
    let control = params.treatment_index(CONTROL_NAME)?;
    let mut skipped = Vec::new();
    let (truth, truth_source) = match source {
        TruthSource::Observed { labels } => {
            if labels.len() != data.n_cells() {
                return Err(Error::validation("artifact labels do not match dataset"));
            }
            (observed_truth(data, split, labels, &mut skipped)?, "observed")
        }
        TruthSource::Synthetic(t) => (synthetic_truth(t, opts.n_generated), "synthetic"),
    };
    let library = match opts.library_size {
        Some(l) => l,
        None => median_library(data, &split.train)?,
    };
    let gen_opts = |artifact| GenerateOptions {
        artifact,
        sampling: Sampling::Hard,
        library: LibraryPolicy::Fixed(library),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.n_generated;
    let all: Vec<usize> = (0..n).collect();
    let control_cells = generate(params, &vec![vec![control]; n], &gen_opts(0), &mut rng)?;
    let control_mean = mean_log_cpm(&control_cells, &all)?;
    let mut generated = vec![control_cells];
    let mut predicted = BTreeMap::new();
    for key in truth.keys() {
        let pattern = match params.parse_pattern(key) {
            Ok(p) => p,
            Err(e) => {
                skipped.push(Skipped {
                    treatment: key.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let cells = generate(params, &vec![pattern; n], &gen_opts(0), &mut rng)?;
        let m = mean_log_cpm(&cells, &all)?;
        predicted.insert(key.clone(), m.iter().zip(&control_mean).map(|(a, b)| a - b).collect());
        generated.push(cells);
    }
    let (scores, more_skipped) = score_treatments(&predicted, &truth, opts.jaccard_k);
    skipped.extend(more_skipped);

    let mut ranked: Vec<&TreatmentScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.true_ate_norm.total_cmp(&a.true_ate_norm).then(a.treatment.cmp(&b.treatment)));
    ranked.truncate(opts.top_n);
    let top_treatments: Vec<String> = ranked.iter().map(|s| s.treatment.clone()).collect();
    let top_mean = MetricMeans::of(ranked.into_iter());

    // Artifact-on cells use the same treatments as the clean ones.
    let mut artifact_cells = Vec::with_capacity(generated.len());
    let mut patterns = vec![vec![control]];
    patterns.extend(predicted.keys().map(|k| params.parse_pattern(k).expect("parsed above")));
    for p in &patterns {
        artifact_cells.push(generate(params, &vec![p.clone(); n], &gen_opts(1), &mut rng)?);
    }
    let train = data.select_cells(&split.train);
    let train_stats = compute_stats(&train.expr, &train.doublets)?;
    let mut qcpr = Vec::new();
    for &k in &opts.n_mads {
        let cfg = QcConfig {
            n_mads: k,
            ..qc.clone()
        };
        cfg.validate()?;
        let thresholds = fit_thresholds(&train_stats, &cfg)?;
        let rate = |sets: &[ExpressionMatrix]| -> Result<f64> {
            let mut labels = Vec::new();
            for x in sets {
                labels.extend(label_against(x, &vec![false; x.n_cells()], &thresholds)?);
            }
            qc_pass_rate(&labels)
        };
        qcpr.push(QcprEntry {
            n_mads: k,
            clean: rate(&generated)?,
            artifact: rate(&artifact_cells)?,
        });
    }

    Ok(EvalReport {
        ate_scale: ATE_SCALE_NOTE.into(),
        truth_source: truth_source.into(),
        jaccard_k: opts.jaccard_k,
        n_generated: n,
        seed: opts.seed,
        mean: MetricMeans::of(scores.iter()),
        treatments: scores,
        skipped,
        top_treatments,
        top_mean,
        qcpr,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per scored treatment.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "treatment,n_treated,n_control,true_ate_norm,ate_pearson,ate_r2,jaccard_top{}\n",
            self.jaccard_k
        );
        for s in &self.treatments {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.treatment, s.n_treated, s.n_control, s.true_ate_norm, s.ate_pearson, s.ate_r2, s.jaccard
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ate_hand_example() {
        let t = ExpressionMatrix::from_rows(&[vec![10, 0]]).unwrap();
        let c = ExpressionMatrix::from_rows(&[vec![0, 10]]).unwrap();
        let ate = average_treatment_effect("A", &t, &c).unwrap();
        let v = (1e4f64).ln_1p();
        assert!((ate.effect[0] - v).abs() < 1e-12 && (ate.effect[1] + v).abs() < 1e-12);
        let doubled = ExpressionMatrix::from_rows(&[vec![20, 0]]).unwrap();
        let c2 = ExpressionMatrix::from_rows(&[vec![0, 20]]).unwrap();
        assert_eq!(average_treatment_effect("A", &doubled, &c2).unwrap().effect, ate.effect);
        assert!(average_treatment_effect("A", &t.select_cells(&[]), &c).is_err());
    }

    #[test]
    fn pearson_and_r2_examples() {
        let r = ate_pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        // cov 1.5 / sqrt(1 · 2.333…)
        assert!((r - 1.5 / (1.0f64 * (14.0f64 / 6.0)).sqrt()).abs() < 1e-12);
        assert!((ate_pearson(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(ate_pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert_eq!(ate_r2(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap(), -6.0);
        assert_eq!(ate_r2(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_examples() {
        let pred = [0.1, 5.0, 4.0, 0.0];
        let truth = [0.0, 3.0, 0.2, 2.0];
        assert!((jaccard_top_k(&pred, &truth, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_top_k(&pred, &pred, 3).unwrap(), 1.0);
        assert_eq!(jaccard_top_k(&[1.0, 0.0], &[0.0, 1.0], 1).unwrap(), 0.0);
        assert!(jaccard_top_k(&pred, &truth, 5).is_err());
        assert_eq!(top_k_genes(&[1.0, -1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn skips_undefined_metrics() {
        let mut truth = BTreeMap::new();
        for k in ["A", "B"] {
            truth.insert(
                k.to_string(),
                AteVector {
                    treatment: k.into(),
                    effect: vec![1.0, 2.0, 3.0],
                    n_treated: 1,
                    n_control: 1,
                },
            );
        }
        let mut pred = BTreeMap::new();
        pred.insert("A".to_string(), vec![0.0, 0.0, 0.0]);
        let (scores, skipped) = score_treatments(&pred, &truth, 2);
        assert!(scores.is_empty());
        assert_eq!(skipped.len(), 2);
    }
}
