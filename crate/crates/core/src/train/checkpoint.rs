use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GeneFlags;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Normalizer, Variant, ENC, MASK_LOGITS};
use crate::numerics::checkpoint::{load_tensors, save_tensors, write_atomic};
use crate::numerics::{AdamConfig, AdamState, Matrix, ParamStore};

const ADAM_FIRST: &str = "adam.m/";
const ADAM_SECOND: &str = "adam.v/";
const ADAM_STEP: &str = "adam.step";
const EPOCH: &str = "train.epoch";
pub const MANIFEST_VERSION: u32 = 1;

/// Sidecar description of a checkpoint: everything needed to rebuild the
/// model around the stored tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub version: u32,
    pub d_z: usize,
    pub n_treatments: usize,
    pub n_genes: usize,
    pub variant: Variant,
    pub seed: u64,
    pub epoch: usize,
    pub config: ModelConfig,
    pub gene_ids: Vec<String>,
    pub gene_flags: Vec<GeneFlags>,
    pub treatment_names: Vec<String>,
    pub normalizer: Normalizer,
    pub adam: Option<AdamConfig>,
}

impl ModelManifest {
    /// Error naming the first field in which `self` and `other` disagree on
    /// model structure.
    pub fn check_compatible(&self, other: &ModelManifest) -> Result<()> {
        let mismatch = |field: &str, a: String, b: String| {
            Err(Error::Checkpoint(format!("manifest field {field} differs: {a} vs {b}")))
        };
        if self.d_z != other.d_z {
            return mismatch("d_z", self.d_z.to_string(), other.d_z.to_string());
        }
        if self.n_treatments != other.n_treatments {
            return mismatch("n_treatments", self.n_treatments.to_string(), other.n_treatments.to_string());
        }
        if self.n_genes != other.n_genes {
            return mismatch("n_genes", self.n_genes.to_string(), other.n_genes.to_string());
        }
        if self.variant != other.variant {
            return mismatch("variant", self.variant.to_string(), other.variant.to_string());
        }
        if self.gene_ids != other.gene_ids {
            return mismatch("gene_ids", "…".into(), "…".into());
        }
        if self.treatment_names != other.treatment_names {
            return mismatch(
                "treatment_names",
                self.treatment_names.join("|"),
                other.treatment_names.join("|"),
            );
        }
        if self.config != other.config {
            return mismatch("config", format!("{:?}", self.config), format!("{:?}", other.config));
        }
        Ok(())
    }
}

/// Model parameters plus optional optimizer state at an epoch boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn manifest(&self) -> ModelManifest {
        let p = &self.params;
        ModelManifest {
            version: MANIFEST_VERSION,
            d_z: p.d_z(),
            n_treatments: p.n_treatments(),
            n_genes: p.n_genes(),
            variant: p.config.variant,
            seed: self.seed,
            epoch: self.epoch,
            config: p.config.clone(),
            gene_ids: p.gene_ids.clone(),
            gene_flags: p.gene_flags.clone(),
            treatment_names: p.treatment_names.clone(),
            normalizer: p.normalizer.clone(),
            adam: self.adam.as_ref().map(|a| a.config),
        }
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write the tensor archive at `path` and its manifest at `<path>.json`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut tensors: BTreeMap<String, Matrix> =
        ckpt.params.store.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    if let Some(adam) = &ckpt.adam {
        for (k, v) in &adam.first {
            tensors.insert(format!("{ADAM_FIRST}{k}"), v.clone());
        }
        for (k, v) in &adam.second {
            tensors.insert(format!("{ADAM_SECOND}{k}"), v.clone());
        }
        tensors.insert(ADAM_STEP.into(), Matrix::scalar(adam.step as f64));
    }
    tensors.insert(EPOCH.into(), Matrix::scalar(ckpt.epoch as f64));
    save_tensors(path, &tensors)?;
    let text = serde_json::to_string_pretty(&ckpt.manifest())?;
    write_atomic(&manifest_path(path), (text + "\n").as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<ModelManifest> {
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: ModelManifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Checkpoint(format!(
            "manifest version {} (expected {MANIFEST_VERSION})",
            m.version
        )));
    }
    Ok(m)
}

fn expect_dim(field: &str, manifest: usize, stored: usize) -> Result<()> {
    if manifest != stored {
        return Err(Error::Checkpoint(format!(
            "manifest field {field} = {manifest} does not match stored tensors ({stored})"
        )));
    }
    Ok(())
}

/// Load a checkpoint, validating every tensor against the manifest.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(path)?;
    let mut tensors = load_tensors(path)?;
    if manifest.config.d_z != manifest.d_z || manifest.config.variant != manifest.variant {
        return Err(Error::Checkpoint("manifest config disagrees with its d_z / variant".into()));
    }
    let mask = tensors
        .get(MASK_LOGITS)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{MASK_LOGITS}'")))?;
    expect_dim("d_z", manifest.d_z, mask.cols())?;
    expect_dim("n_treatments", manifest.n_treatments, mask.rows())?;
    let enc_first = if manifest.config.enc_hidden.is_empty() {
        format!("{ENC}.mean.weight")
    } else {
        format!("{ENC}.hidden0.weight")
    };
    if let Some(w) = tensors.get(&enc_first) {
        expect_dim("n_genes", manifest.n_genes, w.rows().saturating_sub(2 * manifest.d_z))?;
    }
    if manifest.gene_ids.len() != manifest.n_genes || manifest.treatment_names.len() != manifest.n_treatments {
        return Err(Error::Checkpoint("manifest label lists disagree with its dimensions".into()));
    }

    // Rebuild the expected layout and move stored tensors into it.
    let skeleton = ModelParams::init(
        manifest.config.clone(),
        manifest.gene_ids.clone(),
        manifest.gene_flags.clone(),
        manifest.treatment_names.clone(),
        manifest.normalizer.clone(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let take = |tensors: &mut BTreeMap<String, Matrix>, name: &str, like: &Matrix| -> Result<Matrix> {
        let m = tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
        if m.shape() != like.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, manifest implies {:?}",
                m.shape(),
                like.shape()
            )));
        }
        Ok(m)
    };
    let mut store = ParamStore::new();
    for (name, like) in skeleton.store.iter() {
        store.insert(name.clone(), take(&mut tensors, name, like)?);
    }
    let adam = match manifest.adam {
        Some(config) => {
            let mut first = BTreeMap::new();
            let mut second = BTreeMap::new();
            for (name, like) in skeleton.store.iter() {
                first.insert(name.clone(), take(&mut tensors, &format!("{ADAM_FIRST}{name}"), like)?);
                second.insert(name.clone(), take(&mut tensors, &format!("{ADAM_SECOND}{name}"), like)?);
            }
            let step = take(&mut tensors, ADAM_STEP, &Matrix::scalar(0.0))?.item() as u64;
            Some(AdamState {
                config,
                step,
                first,
                second,
            })
        }
        None => None,
    };
    let epoch = take(&mut tensors, EPOCH, &Matrix::scalar(0.0))?.item() as usize;
    expect_dim("epoch", manifest.epoch, epoch)?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor '{extra}'")));
    }
    Ok(Checkpoint {
        params: ModelParams { store, ..skeleton },
        adam,
        epoch,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let cfg = ModelConfig {
            d_z: 2,
            emb_hidden: vec![3],
            enc_hidden: vec![3],
            ..ModelConfig::default()
        };
        let params = ModelParams::init(
            cfg,
            vec!["a".into(), "b".into(), "c".into()],
            vec![GeneFlags::default(); 3],
            vec!["A".into(), "non-targeting".into()],
            // Values whose shortest decimal form needs exact float parsing.
            Normalizer {
                mean: vec![0.1 + 0.2, 1.0 / 3.0, 2.0_f64.sqrt()],
                std: vec![std::f64::consts::PI, 1e-300, 1.0 / 7.0],
            },
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &params.store);
        adam.step = 17;
        adam.first.get_mut("theta_raw").unwrap().data_mut()[0] = 0.25;
        Checkpoint {
            params,
            adam: Some(adam),
            epoch: 4,
            seed: 9,
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        let c = ckpt();
        save_checkpoint(&p, &c).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), c);
    }

    #[test]
    fn truncated_archive_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&p, &ckpt()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn manifest_mismatch_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&p, &ckpt()).unwrap();
        let mpath = manifest_path(&p);
        let text = std::fs::read_to_string(&mpath).unwrap();
        let mut m: ModelManifest = serde_json::from_str(&text).unwrap();
        m.d_z = 3;
        m.config.d_z = 3;
        std::fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("d_z"), "{err}");

        let a = ckpt().manifest();
        let mut b = a.clone();
        b.n_genes = 4;
        assert!(a.check_compatible(&b).unwrap_err().to_string().contains("n_genes"));
    }
}
