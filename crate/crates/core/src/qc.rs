//! Six-criterion quality control with scaled-MAD thresholds.
//!
//! Five per-cell statistics (UMI count, detected features, mitochondrial,
//! hemoglobin and ribosomal read percentages) are compared against
//! `median ± n_mads · mad_scale · MAD` bounds fitted across cells; the sixth
//! criterion is an externally supplied doublet flag. A cell is labelled as
//! carrying an artifact (`a = 1`) when any criterion fails.
//!
//! Fitting and applying thresholds are separate steps so that generated cells
//! can be judged against bounds fitted on reference data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ExpressionMatrix, GeneFlags};
use crate::error::{Error, Result};

pub const N_MAD_CRITERIA: usize = 5;
pub const CRITERIA: [&str; 6] = ["umi_count", "n_features", "pct_mito", "pct_hb", "pct_ribo", "doublet"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    Upper,
    Lower,
}

/// Which cells feed the median/MAD pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPool {
    AllCells,
    ExcludeDoublets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcConfig {
    pub n_mads: f64,
    pub mad_scale: f64,
    /// Sidedness of umi_count, n_features, pct_mito, pct_hb, pct_ribo.
    pub sidedness: [Sidedness; N_MAD_CRITERIA],
    pub pool: ThresholdPool,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            n_mads: 3.0,
            mad_scale: 1.4826,
            sidedness: [
                Sidedness::TwoSided,
                Sidedness::TwoSided,
                Sidedness::Upper,
                Sidedness::Upper,
                Sidedness::TwoSided,
            ],
            pool: ThresholdPool::AllCells,
        }
    }
}

impl QcConfig {
    pub fn with_n_mads(n_mads: f64) -> Self {
        Self {
            n_mads,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_mads > 0.0) || !(self.mad_scale > 0.0) {
            return Err(Error::Config("n_mads and mad_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellQcStats {
    pub umi_count: f64,
    pub n_features: f64,
    pub pct_mito: f64,
    pub pct_hb: f64,
    pub pct_ribo: f64,
    pub is_doublet: bool,
}

impl CellQcStats {
    pub fn values(&self) -> [f64; N_MAD_CRITERIA] {
        [self.umi_count, self.n_features, self.pct_mito, self.pct_hb, self.pct_ribo]
    }
}

/// Effective bounds per MAD criterion; an inactive side is infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcThresholds {
    pub n_mads: f64,
    pub bounds: [(f64, f64); N_MAD_CRITERIA],
}

impl QcThresholds {
    pub fn passes(&self, stats: &CellQcStats) -> [bool; 6] {
        let v = stats.values();
        let mut out = [false; 6];
        for k in 0..N_MAD_CRITERIA {
            let (lo, hi) = self.bounds[k];
            out[k] = lo <= v[k] && v[k] <= hi;
        }
        out[5] = !stats.is_doublet;
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QcReport {
    pub stats: Vec<CellQcStats>,
    pub pass: Vec<[bool; 6]>,
    pub labels: Vec<u8>,
    pub thresholds: QcThresholds,
}

impl QcReport {
    pub fn n_cells(&self) -> usize {
        self.stats.len()
    }
}

/// Median with the even-length convention of averaging the central pair.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("median of an empty array"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// `(med − n·s·MAD, med + n·s·MAD)` with `MAD = median(|v − med|)`.
pub fn mad_threshold(values: &[f64], n_mads: f64, mad_scale: f64) -> Result<(f64, f64)> {
    let med = median(values)?;
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let smad = mad_scale * median(&deviations)?;
    Ok((med - n_mads * smad, med + n_mads * smad))
}

fn cell_stats(row: &[u32], flags: &[GeneFlags], is_doublet: bool) -> Option<CellQcStats> {
    let (mut umi, mut mito, mut hb, mut ribo, mut features) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for (&c, f) in row.iter().zip(flags) {
        let c = u64::from(c);
        umi += c;
        if c > 0 {
            features += 1;
        }
        if f.is_mito {
            mito += c;
        }
        if f.is_hemoglobin {
            hb += c;
        }
        if f.is_ribosomal {
            ribo += c;
        }
    }
    if umi == 0 {
        return None;
    }
    let total = umi as f64;
    Some(CellQcStats {
        umi_count: total,
        n_features: features as f64,
        pct_mito: 100.0 * mito as f64 / total,
        pct_hb: 100.0 * hb as f64 / total,
        pct_ribo: 100.0 * ribo as f64 / total,
        is_doublet,
    })
}

fn check_doublets(x: &ExpressionMatrix, doublets: &[bool]) -> Result<()> {
    if doublets.len() != x.n_cells() {
        return Err(Error::validation(format!(
            "{} doublet flags for {} cells",
            doublets.len(),
            x.n_cells()
        )));
    }
    Ok(())
}

/// Per-cell QC statistics. Fails on a zero-library cell.
pub fn compute_stats(x: &ExpressionMatrix, doublets: &[bool]) -> Result<Vec<CellQcStats>> {
    check_doublets(x, doublets)?;
    (0..x.n_cells())
        .map(|i| {
            cell_stats(x.row(i), &x.gene_flags, doublets[i]).ok_or_else(|| {
                Error::validation(format!("cell {} ({}) has zero library size", i, x.cell_ids[i]))
            })
        })
        .collect()
}

/// Artifact labels of `x` under fixed thresholds. Cells with no reads at all
/// cannot be scored and are labelled as failing.
pub fn label_against(x: &ExpressionMatrix, doublets: &[bool], thresholds: &QcThresholds) -> Result<Vec<u8>> {
    check_doublets(x, doublets)?;
    Ok((0..x.n_cells())
        .map(|i| match cell_stats(x.row(i), &x.gene_flags, doublets[i]) {
            Some(s) => u8::from(!thresholds.passes(&s).iter().all(|&ok| ok)),
            None => 1,
        })
        .collect())
}

/// Fit dataset-level bounds on `stats`.
pub fn fit_thresholds(stats: &[CellQcStats], cfg: &QcConfig) -> Result<QcThresholds> {
    let pool: Vec<&CellQcStats> = match cfg.pool {
        ThresholdPool::AllCells => stats.iter().collect(),
        ThresholdPool::ExcludeDoublets => stats.iter().filter(|s| !s.is_doublet).collect(),
    };
    if pool.is_empty() {
        return Err(Error::validation("no cells available to fit QC thresholds"));
    }
    let mut bounds = [(0.0, 0.0); N_MAD_CRITERIA];
    for k in 0..N_MAD_CRITERIA {
        let values: Vec<f64> = pool.iter().map(|s| s.values()[k]).collect();
        let (lo, hi) = mad_threshold(&values, cfg.n_mads, cfg.mad_scale)?;
        bounds[k] = match cfg.sidedness[k] {
            Sidedness::TwoSided => (lo, hi),
            Sidedness::Upper => (f64::NEG_INFINITY, hi),
            Sidedness::Lower => (lo, f64::INFINITY),
        };
    }
    Ok(QcThresholds {
        n_mads: cfg.n_mads,
        bounds,
    })
}

pub fn apply_thresholds(stats: Vec<CellQcStats>, thresholds: &QcThresholds) -> QcReport {
    let pass: Vec<[bool; 6]> = stats.iter().map(|s| thresholds.passes(s)).collect();
    let labels = pass
        .iter()
        .map(|p| u8::from(!p.iter().all(|&ok| ok)))
        .collect();
    QcReport {
        stats,
        pass,
        labels,
        thresholds: thresholds.clone(),
    }
}

/// Compute statistics, fit thresholds on the same cells, and label them.
pub fn qc_evaluate(x: &ExpressionMatrix, doublets: &[bool], cfg: &QcConfig) -> Result<QcReport> {
    cfg.validate()?;
    let stats = compute_stats(x, doublets)?;
    let thresholds = fit_thresholds(&stats, cfg)?;
    Ok(apply_thresholds(stats, &thresholds))
}

pub fn artifact_labels(report: &QcReport) -> Vec<u8> {
    report.labels.clone()
}

/// Fraction of cells with label 0.
pub fn qc_pass_rate(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::validation("QC pass rate of an empty label set"));
    }
    Ok(labels.iter().filter(|&&a| a == 0).count() as f64 / labels.len() as f64)
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// `qc_report.csv`: a `#`-prefixed threshold line, a header, one row per cell.
pub fn write_qc_report(path: &Path, report: &QcReport, cell_ids: &[String]) -> Result<()> {
    let mut out = String::from("# thresholds n_mads=");
    out.push_str(&format!("{}", report.thresholds.n_mads));
    for (k, (lo, hi)) in report.thresholds.bounds.iter().enumerate() {
        out.push_str(&format!(" {}=[{},{}]", CRITERIA[k], fmt_bound(*lo), fmt_bound(*hi)));
    }
    out.push('\n');
    out.push_str("cell_id,umi_count,n_features,pct_mito,pct_hb,pct_ribo,is_doublet");
    for c in CRITERIA {
        out.push_str(&format!(",pass_{c}"));
    }
    out.push_str(",artifact\n");
    for (i, s) in report.stats.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            cell_ids[i],
            s.umi_count,
            s.n_features,
            s.pct_mito,
            s.pct_hb,
            s.pct_ribo,
            u8::from(s.is_doublet)
        ));
        for p in report.pass[i] {
            out.push_str(&format!(",{}", u8::from(p)));
        }
        out.push_str(&format!(",{}\n", report.labels[i]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read the artifact column back from a `qc_report.csv`.
pub fn read_qc_labels(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("cell_id") || line.trim().is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or_default();
        out.push(last.trim().parse::<u8>().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: k as u64 + 1,
            msg: format!("bad artifact label '{last}'"),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mad_threshold_worked_example() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let (lo, hi) = mad_threshold(&v, 3.0, 1.4826).unwrap();
        // median 5.5, |v - 5.5| = {4.5,3.5,2.5,1.5,0.5,0.5,1.5,2.5,3.5,94.5}, MAD 2.5
        assert!((lo - (5.5 - 3.0 * 3.7065)).abs() < 1e-12);
        assert!((hi - 16.6195).abs() < 1e-12);
        assert!(100.0 > hi);
    }

    #[test]
    fn mad_threshold_degenerate_cases() {
        assert_eq!(mad_threshold(&[5.0, 5.0, 5.0], 3.0, 1.4826).unwrap(), (5.0, 5.0));
        let (lo, hi) = mad_threshold(&[1.0, 2.0, 7.0], 0.0, 1.4826).unwrap();
        assert_eq!((lo, hi), (2.0, 2.0));
        assert!(mad_threshold(&[], 3.0, 1.0).is_err());
    }

    #[test]
    fn single_cell_passes_itself() {
        let x = ExpressionMatrix::from_rows(&[vec![3, 0, 1]]).unwrap();
        let r = qc_evaluate(&x, &[false], &QcConfig::default()).unwrap();
        assert_eq!(r.stats[0].pct_mito, 0.0);
        assert_eq!(r.stats[0].pct_hb, 0.0);
        assert_eq!(r.labels, vec![0]);
    }

    #[test]
    fn doublet_always_fails() {
        let x = ExpressionMatrix::from_rows(&[vec![3, 1], vec![3, 1], vec![3, 1]]).unwrap();
        let r = qc_evaluate(&x, &[false, true, false], &QcConfig::default()).unwrap();
        assert_eq!(r.labels, vec![0, 1, 0]);
        assert_eq!(r.pass[1], [true, true, true, true, true, false]);
        let all = qc_evaluate(&x, &[true; 3], &QcConfig::default()).unwrap();
        assert_eq!(artifact_labels(&all), vec![1, 1, 1]);
    }

    #[test]
    fn percentages_use_flagged_genes() {
        let mut x = ExpressionMatrix::from_rows(&[vec![2, 6, 2, 0]]).unwrap();
        x.gene_flags[0] = GeneFlags { is_mito: true, ..Default::default() };
        x.gene_flags[1] = GeneFlags { is_hemoglobin: true, ..Default::default() };
        x.gene_flags[2] = GeneFlags { is_ribosomal: true, ..Default::default() };
        let s = compute_stats(&x, &[false]).unwrap()[0];
        assert_eq!((s.pct_mito, s.pct_hb, s.pct_ribo), (20.0, 60.0, 20.0));
        assert_eq!((s.umi_count, s.n_features), (10.0, 3.0));
    }

    #[test]
    fn zero_library_is_an_error() {
        let x = ExpressionMatrix::from_rows(&[vec![1, 1], vec![0, 0]]).unwrap();
        assert!(qc_evaluate(&x, &[false, false], &QcConfig::default()).is_err());
    }

    #[test]
    fn pass_rate_examples() {
        assert_eq!(qc_pass_rate(&[0, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(qc_pass_rate(&[0; 5]).unwrap(), 1.0);
        assert!(qc_pass_rate(&[]).is_err());
    }

    #[test]
    fn report_csv_roundtrips_labels() {
        let x = ExpressionMatrix::from_rows(&[vec![3, 1], vec![30, 1], vec![3, 2], vec![4, 1]]).unwrap();
        let r = qc_evaluate(&x, &[false, false, true, false], &QcConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qc_report.csv");
        write_qc_report(&p, &r, &x.cell_ids).unwrap();
        assert_eq!(read_qc_labels(&p).unwrap(), r.labels);
    }
}
