use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::qc::median;

/// Elementwise-median count profile of QC-failed cells, keyed by the sorted
/// treatment pattern they received.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CfReferencePool {
    refs: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl CfReferencePool {
    /// Build from the failed cells among `cells`.
    pub fn build(data: &Dataset, labels: &[u8], cells: &[usize]) -> Result<Self> {
        if labels.len() != data.n_cells() {
            return Err(Error::validation(format!(
                "{} artifact labels for {} cells",
                labels.len(),
                data.n_cells()
            )));
        }
        let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for &i in cells {
            if labels[i] != 0 {
                groups.entry(data.perts.pattern(i)).or_default().push(i);
            }
        }
        let g = data.expr.n_genes();
        let mut refs = BTreeMap::new();
        for (pattern, members) in groups {
            let mut profile = Vec::with_capacity(g);
            let mut column = Vec::with_capacity(members.len());
            for j in 0..g {
                column.clear();
                column.extend(members.iter().map(|&i| f64::from(data.expr.row(i)[j])));
                profile.push(median(&column)?);
            }
            refs.insert(pattern, profile);
        }
        Ok(Self { refs })
    }

    pub fn get(&self, pattern: &[usize]) -> Option<&Vec<f64>> {
        self.refs.get(pattern)
    }

    pub fn get_key_value(&self, pattern: &[usize]) -> Option<(&Vec<usize>, &Vec<f64>)> {
        self.refs.get_key_value(pattern)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn patterns(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.refs.keys()
    }
}

/// Reference profile for `pattern` built from every failed cell in `data`,
/// or `None` if no failed cell received exactly that pattern.
pub fn cf_reference_lookup(data: &Dataset, labels: &[u8], pattern: &[usize]) -> Result<Option<Vec<f64>>> {
    let mut sorted = pattern.to_vec();
    sorted.sort_unstable();
    let cells: Vec<usize> = (0..data.n_cells()).filter(|&i| data.perts.pattern(i) == sorted).collect();
    Ok(CfReferencePool::build(data, labels, &cells)?.get(&sorted).cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ExpressionMatrix, PerturbationSet};

    #[test]
    fn medians_of_failed_cells() {
        let expr = ExpressionMatrix::from_rows(&[
            vec![1, 10],
            vec![3, 20],
            vec![8, 40],
            vec![100, 100],
            vec![5, 5],
        ])
        .unwrap();
        let perts = PerturbationSet::from_patterns(
            &[vec![0], vec![0], vec![0], vec![0], vec![1]],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let data = Dataset::new(expr, perts, vec![false; 5]).unwrap();
        let labels = [1, 1, 0, 1, 0];
        assert_eq!(cf_reference_lookup(&data, &labels, &[0]).unwrap(), Some(vec![3.0, 20.0]));
        assert_eq!(cf_reference_lookup(&data, &labels, &[1]).unwrap(), None);
        let pool = CfReferencePool::build(&data, &labels, &[0, 1, 2]).unwrap();
        assert_eq!(pool.get(&[0]), Some(&vec![2.0, 15.0]));
        assert_eq!(pool.len(), 1);
    }
}
