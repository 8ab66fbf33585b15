use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PerturbationSet;
use crate::error::{Error, Result};

/// Share of the non-held-out cells routed to validation by the OOD split.
pub const OOD_VAL_FRACTION: f64 = 0.1;

/// Disjoint train/validation/test cell indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Held-out combination keys (sorted names joined by `+`).
    #[serde(default)]
    pub held_out_treatments: Vec<String>,
}

impl Split {
    pub fn validate(&self, n_cells: usize) -> Result<()> {
        let mut seen = vec![false; n_cells];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n_cells {
                return Err(Error::validation(format!("split index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::validation(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Part sizes by the largest-remainder rule: each differs from its exact
/// share by less than one cell.
fn part_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[k] += 1;
        left -= 1;
    }
    sizes
}

/// Seeded random partition of `0..n_cells` into train/val/test.
pub fn split_random(n_cells: usize, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n_cells).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = part_sizes(n_cells, f);
    let mut train = idx[..a].to_vec();
    let mut val = idx[a..a + b].to_vec();
    let mut test = idx[a + b..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        val,
        test,
        held_out_treatments: Vec::new(),
    })
}

/// Hold out `⌈fraction × #combinations⌉` multi-gene combinations: every cell
/// carrying one of them goes to test; the rest split into train and val.
pub fn split_ood_combinations(pert: &PerturbationSet, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation("held-out fraction must lie in (0, 1)"));
    }
    let mut combos: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    let mut others = Vec::new();
    for i in 0..pert.n_cells() {
        let p = pert.pattern(i);
        if p.len() >= 2 {
            combos.entry(p).or_default().push(i);
        } else {
            others.push(i);
        }
    }
    if combos.is_empty() {
        return Err(Error::validation(
            "no multi-gene combinations present; use split_random instead",
        ));
    }
    let mut keys: Vec<&Vec<usize>> = combos.keys().collect();
    let n_held = ((fraction * keys.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let held: BTreeSet<&Vec<usize>> = keys[..n_held].iter().copied().collect();

    let mut test = Vec::new();
    let mut rest = others;
    for (pattern, cells) in &combos {
        if held.contains(pattern) {
            test.extend_from_slice(cells);
        } else {
            rest.extend_from_slice(cells);
        }
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    let n_val = (OOD_VAL_FRACTION * rest.len() as f64).round() as usize;
    let mut val = rest[..n_val].to_vec();
    let mut train = rest[n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let mut held_out_treatments: Vec<String> = held.iter().map(|p| pert.key_of(p)).collect();
    held_out_treatments.sort();
    Ok(Split {
        train,
        val,
        test,
        held_out_treatments,
    })
}
