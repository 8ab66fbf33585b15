//! Count matrices, perturbation assignments and train/val/test splits.

mod io;
mod split;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_counts, load_dataset, load_doublets, load_gene_flags, load_perturbations, load_perturbations_with_registry,
    parse_counts_csv, parse_counts_mtx, parse_perturbations, read_split, write_counts,
    write_counts_csv, write_counts_mtx, write_dataset, write_doublets, write_gene_flags,
    write_perturbations, write_split, CountFormat, COUNTS_CSV, COUNTS_MTX, DOUBLETS_FILE, GENES_FILE,
    PERTS_FILE, SPLIT_FILE,
};
pub use split::{split_ood_combinations, split_random, Split};

/// Treatment label for control cells.
pub const CONTROL_NAME: &str = "non-targeting";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneFlags {
    pub is_mito: bool,
    pub is_hemoglobin: bool,
    pub is_ribosomal: bool,
}

/// Cells × genes matrix of raw read counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix {
    n_cells: usize,
    n_genes: usize,
    counts: Vec<u32>,
    pub gene_ids: Vec<String>,
    pub gene_flags: Vec<GeneFlags>,
    pub cell_ids: Vec<String>,
}

impl ExpressionMatrix {
    pub fn new(
        n_cells: usize,
        n_genes: usize,
        counts: Vec<u32>,
        gene_ids: Vec<String>,
        gene_flags: Vec<GeneFlags>,
        cell_ids: Vec<String>,
    ) -> Result<Self> {
        if counts.len() != n_cells * n_genes {
            return Err(Error::shape(format!(
                "{} counts for a {n_cells}x{n_genes} matrix",
                counts.len()
            )));
        }
        if gene_ids.len() != n_genes || gene_flags.len() != n_genes || cell_ids.len() != n_cells {
            return Err(Error::shape("label lengths do not match matrix dimensions"));
        }
        let mut seen = HashSet::with_capacity(n_genes);
        for id in &gene_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!("duplicate gene id '{id}'")));
            }
        }
        Ok(Self {
            n_cells,
            n_genes,
            counts,
            gene_ids,
            gene_flags,
            cell_ids,
        })
    }

    /// Matrix with generated labels `gene{j}` / `cell{i}` and no gene flags.
    pub fn from_counts(n_cells: usize, n_genes: usize, counts: Vec<u32>) -> Result<Self> {
        Self::new(
            n_cells,
            n_genes,
            counts,
            default_ids("gene", n_genes),
            vec![GeneFlags::default(); n_genes],
            default_ids("cell", n_cells),
        )
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let n_genes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_genes) {
            return Err(Error::shape("ragged count rows"));
        }
        Self::from_counts(rows.len(), n_genes, rows.concat())
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.counts[i * self.n_genes..(i + 1) * self.n_genes]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.n_cells).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn select_cells(&self, indices: &[usize]) -> Self {
        let mut counts = Vec::with_capacity(indices.len() * self.n_genes);
        for &i in indices {
            counts.extend_from_slice(self.row(i));
        }
        Self {
            n_cells: indices.len(),
            n_genes: self.n_genes,
            counts,
            gene_ids: self.gene_ids.clone(),
            gene_flags: self.gene_flags.clone(),
            cell_ids: indices.iter().map(|&i| self.cell_ids[i].clone()).collect(),
        }
    }

    /// Attach gene flags by gene id; genes absent from `flags` stay unflagged.
    pub fn apply_gene_flags(&mut self, flags: &[(String, GeneFlags)]) -> Result<()> {
        let index: BTreeMap<&str, usize> = self
            .gene_ids
            .iter()
            .enumerate()
            .map(|(j, g)| (g.as_str(), j))
            .collect();
        for (id, f) in flags {
            let j = index
                .get(id.as_str())
                .ok_or_else(|| Error::validation(format!("gene '{id}' in flag file not in matrix")))?;
            self.gene_flags[*j] = *f;
        }
        Ok(())
    }
}

pub(crate) fn default_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Per-cell total read count. A cell with zero reads is rejected.
pub fn library_sizes(x: &ExpressionMatrix) -> Result<Vec<u64>> {
    (0..x.n_cells())
        .map(|i| {
            let l: u64 = x.row(i).iter().map(|&c| u64::from(c)).sum();
            if l == 0 {
                Err(Error::validation(format!(
                    "cell {} ('{}') has zero library size",
                    i, x.cell_ids[i]
                )))
            } else {
                Ok(l)
            }
        })
        .collect()
}

/// Multi-hot treatment assignments with a name registry.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSet {
    n_cells: usize,
    assignments: Vec<u8>,
    pub treatment_names: Vec<String>,
    pub control_index: Option<usize>,
}

impl PerturbationSet {
    pub fn new(n_cells: usize, assignments: Vec<u8>, treatment_names: Vec<String>) -> Result<Self> {
        let t = treatment_names.len();
        if assignments.len() != n_cells * t {
            return Err(Error::shape("assignment matrix does not match dimensions"));
        }
        if assignments.iter().any(|&v| v > 1) {
            return Err(Error::validation("assignments must be 0 or 1"));
        }
        let mut seen = HashSet::new();
        for name in &treatment_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::validation(format!("duplicate treatment name '{name}'")));
            }
        }
        let control_index = treatment_names.iter().position(|n| n == CONTROL_NAME);
        Ok(Self {
            n_cells,
            assignments,
            treatment_names,
            control_index,
        })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn n_treatments(&self) -> usize {
        self.treatment_names.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        let t = self.n_treatments();
        &self.assignments[i * t..(i + 1) * t]
    }

    pub fn assignments(&self) -> &[u8] {
        &self.assignments
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.treatment_names.iter().position(|n| n == name)
    }

    /// Sorted treatment indices active in cell `i`.
    pub fn pattern(&self, i: usize) -> Vec<usize> {
        self.row(i)
            .iter()
            .enumerate()
            .filter_map(|(t, &v)| (v == 1).then_some(t))
            .collect()
    }

    /// Combination identity: active treatment names, sorted, joined by `+`.
    pub fn pattern_key(&self, i: usize) -> String {
        self.key_of(&self.pattern(i))
    }

    pub fn key_of(&self, pattern: &[usize]) -> String {
        let mut names: Vec<&str> = pattern
            .iter()
            .map(|&t| self.treatment_names[t].as_str())
            .collect();
        names.sort_unstable();
        names.join("+")
    }

    /// Parse a `+`-joined combination into sorted treatment indices.
    pub fn parse_key(&self, key: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for part in key.split('+') {
            let name = part.trim();
            let t = self
                .index_of(name)
                .ok_or_else(|| Error::validation(format!("unknown treatment '{name}'")))?;
            out.push(t);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn is_control(&self, i: usize) -> bool {
        match self.control_index {
            Some(c) => self.pattern(i) == [c],
            None => false,
        }
    }

    pub fn select_cells(&self, indices: &[usize]) -> Self {
        let mut assignments = Vec::with_capacity(indices.len() * self.n_treatments());
        for &i in indices {
            assignments.extend_from_slice(self.row(i));
        }
        Self {
            n_cells: indices.len(),
            assignments,
            treatment_names: self.treatment_names.clone(),
            control_index: self.control_index,
        }
    }

    /// Multi-hot rows for a list of patterns.
    pub fn from_patterns(patterns: &[Vec<usize>], treatment_names: Vec<String>) -> Result<Self> {
        let t = treatment_names.len();
        let mut assignments = vec![0u8; patterns.len() * t];
        for (i, p) in patterns.iter().enumerate() {
            for &k in p {
                if k >= t {
                    return Err(Error::validation(format!("treatment index {k} out of range")));
                }
                assignments[i * t + k] = 1;
            }
        }
        Self::new(patterns.len(), assignments, treatment_names)
    }
}

/// Counts, treatments and doublet flags for the same cells.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub expr: ExpressionMatrix,
    pub perts: PerturbationSet,
    pub doublets: Vec<bool>,
}

impl Dataset {
    pub fn new(expr: ExpressionMatrix, perts: PerturbationSet, doublets: Vec<bool>) -> Result<Self> {
        if expr.n_cells() != perts.n_cells() {
            return Err(Error::validation(format!(
                "row count mismatch: {} expression rows vs {} perturbation rows",
                expr.n_cells(),
                perts.n_cells()
            )));
        }
        if doublets.len() != expr.n_cells() {
            return Err(Error::validation(format!(
                "row count mismatch: {} expression rows vs {} doublet flags",
                expr.n_cells(),
                doublets.len()
            )));
        }
        Ok(Self {
            expr,
            perts,
            doublets,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.expr.n_cells()
    }

    pub fn select_cells(&self, indices: &[usize]) -> Self {
        Self {
            expr: self.expr.select_cells(indices),
            perts: self.perts.select_cells(indices),
            doublets: indices.iter().map(|&i| self.doublets[i]).collect(),
        }
    }
}
