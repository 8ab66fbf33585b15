use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell-weighted epoch means of the objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub j1: f64,
    pub j2: f64,
    pub recon: f64,
    pub kl_zb: f64,
    pub kl_e: f64,
    pub kl_m: f64,
    pub kl_u: f64,
    /// Counterfactual-eligible cells seen this epoch.
    pub n_cf: usize,
    /// `J1` on the validation cells (NaN without any).
    pub val_j1: f64,
    pub grad_norm: f64,
    pub temperature: f64,
}

const COLUMNS: &str = "epoch,j1,j2,recon,kl_zb,kl_e,kl_m,kl_u,n_cf,val_j1,grad_norm,temperature";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COLUMNS);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.j1,
                r.j2,
                r.recon,
                r.kl_zb,
                r.kl_e,
                r.kl_m,
                r.kl_u,
                r.n_cf,
                r.val_j1,
                r.grad_norm,
                r.temperature
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(COLUMNS) {
            return Err(Error::validation("history.csv has an unexpected header"));
        }
        let mut records = Vec::new();
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse {
                path: "history.csv".into(),
                line: k as u64 + 2,
                msg: format!("malformed row '{line}'"),
            };
            if f.len() != 12 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad());
            records.push(EpochRecord {
                epoch: int(0)?,
                j1: num(1)?,
                j2: num(2)?,
                recon: num(3)?,
                kl_zb: num(4)?,
                kl_e: num(5)?,
                kl_m: num(6)?,
                kl_u: num(7)?,
                n_cf: int(8)?,
                val_j1: num(9)?,
                grad_norm: num(10)?,
                temperature: num(11)?,
            });
        }
        Ok(Self { records })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Wall-clock seconds per epoch, kept apart from the history so that the
/// history stays reproducible.
pub fn write_timings(path: &Path, seconds: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,seconds\n");
    for (k, s) in seconds.iter().enumerate() {
        let _ = writeln!(out, "{},{s}", k + 1);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let r = EpochRecord {
            epoch: 1,
            j1: -1.25,
            j2: 0.1 + 0.2,
            recon: -3.0,
            kl_zb: 1e-300,
            kl_e: 2.0,
            kl_m: 0.0,
            kl_u: 0.5,
            n_cf: 12,
            val_j1: f64::NAN,
            grad_norm: 3.5,
            temperature: 1.0,
        };
        let h = TrainHistory { records: vec![r] };
        let back = TrainHistory::parse_csv(&h.to_csv()).unwrap();
        assert_eq!(back.records[0].j2.to_bits(), r.j2.to_bits());
        assert!(back.records[0].val_j1.is_nan());
        assert!(TrainHistory::parse_csv("nope\n").is_err());
    }
}
