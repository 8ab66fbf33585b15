//! Brute-force recomputation of the QC report from raw counts.

use cradle_core::data::{ExpressionMatrix, GeneFlags};
use cradle_core::qc::{QcConfig, QcReport, Sidedness, ThresholdPool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub struct OracleReport {
    /// umi, features, mito %, hb %, ribo % per cell.
    pub values: Vec<[f64; 5]>,
    pub bounds: [(f64, f64); 5],
    pub pass: Vec<[bool; 6]>,
    pub labels: Vec<u8>,
}

fn sorted_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn oracle_qc(rows: &[Vec<u32>], flags: &[GeneFlags], doublets: &[bool], cfg: &QcConfig) -> OracleReport {
    let values: Vec<[f64; 5]> = rows
        .iter()
        .map(|row| {
            let umi: u64 = row.iter().map(|&c| u64::from(c)).sum();
            let features = row.iter().filter(|&&c| c > 0).count();
            let part = |pick: fn(&GeneFlags) -> bool| -> u64 {
                row.iter().zip(flags).filter(|(_, f)| pick(f)).map(|(&c, _)| u64::from(c)).sum()
            };
            let pct = |k: u64| 100.0 * k as f64 / umi as f64;
            [
                umi as f64,
                features as f64,
                pct(part(|f| f.is_mito)),
                pct(part(|f| f.is_hemoglobin)),
                pct(part(|f| f.is_ribosomal)),
            ]
        })
        .collect();
    let pool: Vec<usize> = (0..rows.len())
        .filter(|&i| cfg.pool == ThresholdPool::AllCells || !doublets[i])
        .collect();
    let mut bounds = [(0.0, 0.0); 5];
    for (k, b) in bounds.iter_mut().enumerate() {
        let col: Vec<f64> = pool.iter().map(|&i| values[i][k]).collect();
        let med = sorted_median(col.clone());
        let mad = sorted_median(col.iter().map(|v| (v - med).abs()).collect());
        let half = cfg.n_mads * (cfg.mad_scale * mad);
        let (lo, hi) = (med - half, med + half);
        *b = match cfg.sidedness[k] {
            Sidedness::TwoSided => (lo, hi),
            Sidedness::Upper => (f64::NEG_INFINITY, hi),
            Sidedness::Lower => (lo, f64::INFINITY),
        };
    }
    let pass: Vec<[bool; 6]> = values
        .iter()
        .zip(doublets)
        .map(|(v, &d)| {
            let mut p = [true; 6];
            for k in 0..5 {
                p[k] = v[k] >= bounds[k].0 && v[k] <= bounds[k].1;
            }
            p[5] = !d;
            p
        })
        .collect();
    let labels = pass.iter().map(|p| if p.iter().all(|&x| x) { 0 } else { 1 }).collect();
    OracleReport {
        values,
        bounds,
        pass,
        labels,
    }
}

/// Differences between a report and the oracle, bit for bit.
pub fn mismatches(report: &QcReport, oracle: &OracleReport) -> Vec<String> {
    let mut out = Vec::new();
    for k in 0..5 {
        let (a, b) = (report.thresholds.bounds[k], oracle.bounds[k]);
        if a.0.to_bits() != b.0.to_bits() || a.1.to_bits() != b.1.to_bits() {
            out.push(format!("criterion {k} bounds {a:?} vs {b:?}"));
        }
    }
    for (i, s) in report.stats.iter().enumerate() {
        for (k, (a, b)) in s.values().iter().zip(&oracle.values[i]).enumerate() {
            if a.to_bits() != b.to_bits() {
                out.push(format!("cell {i} criterion {k}: {a} vs {b}"));
            }
        }
    }
    if report.pass != oracle.pass {
        out.push("pass flags differ".into());
    }
    if report.labels != oracle.labels {
        out.push("labels differ".into());
    }
    out
}

pub struct Instance {
    pub expr: ExpressionMatrix,
    pub rows: Vec<Vec<u32>>,
    pub doublets: Vec<bool>,
}

/// Random instance of at most 200 cells with flagged genes, outliers and doublets.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cells = rng.random_range(20..=200);
    let n_genes = rng.random_range(12..=40);
    let flags: Vec<GeneFlags> = (0..n_genes)
        .map(|j| GeneFlags {
            is_mito: j % 11 == 1,
            is_hemoglobin: j % 13 == 2,
            is_ribosomal: j % 7 == 3,
        })
        .collect();
    let rates: Vec<f64> = (0..n_genes).map(|_| rng.random_range(0.2..8.0)).collect();
    let rows: Vec<Vec<u32>> = (0..n_cells)
        .map(|_| {
            let depth = match rng.random_range(0..20) {
                0 => 8.0,
                1 => 0.1,
                _ => rng.random_range(0.6..1.6),
            };
            let stressed = rng.random_bool(0.08);
            let mut row: Vec<u32> = rates
                .iter()
                .zip(&flags)
                .map(|(&r, f)| {
                    let boost = if stressed && (f.is_mito || f.is_hemoglobin) { 15.0 } else { 1.0 };
                    Poisson::new(r * depth * boost).unwrap().sample(&mut rng) as u32
                })
                .collect();
            if row.iter().all(|&c| c == 0) {
                row[0] = 1;
            }
            row
        })
        .collect();
    let doublets: Vec<bool> = (0..n_cells).map(|_| rng.random_bool(0.05)).collect();
    let mut expr = ExpressionMatrix::from_rows(&rows).unwrap();
    expr.gene_flags = flags;
    Instance { expr, rows, doublets }
}

/// 100 cells with identical composition and five depth levels, plus one
/// cell at 50 times the median depth.
pub fn outlier_table() -> Instance {
    let n_genes = 10;
    let mut rows: Vec<Vec<u32>> = (0..99u32).map(|i| vec![10 + i % 5; n_genes]).collect();
    rows.insert(37, vec![50 * 12; n_genes]);
    let expr = ExpressionMatrix::from_rows(&rows).unwrap();
    Instance {
        expr,
        rows,
        doublets: vec![false; 100],
    }
}
