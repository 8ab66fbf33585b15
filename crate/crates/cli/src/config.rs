//! Run configuration: one TOML document with a section per module.

use std::path::Path;

use cradle_core::eval::EvalOptions;
use cradle_core::model::ModelConfig;
use cradle_core::qc::QcConfig;
use cradle_core::synth::SynthConfig;
use cradle_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Random,
    /// Hold out a share of the combination treatments entirely.
    Ood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub method: SplitMethod,
    /// Train / validation / test shares for the random split.
    pub fractions: [f64; 3],
    /// Share of combinations held out by the OOD split.
    pub ood_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            method: SplitMethod::Random,
            fractions: [0.8, 0.1, 0.1],
            ood_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of every section when set.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub qc: QcConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Library defaults (large networks, long training).
    Default,
    /// The frozen synthetic benchmark.
    Benchmark,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Default => Self::default(),
            Preset::Benchmark => Self {
                synth: SynthConfig::benchmark(),
                model: ModelConfig::benchmark(),
                train: TrainConfig::benchmark(),
                eval: EvalOptions {
                    jaccard_k: 10,
                    ..EvalOptions::default()
                },
                ..Self::default()
            },
        }
    }

    /// `base` with the keys of `text` laid over it. Unknown keys are rejected.
    pub fn overlay(base: &Self, text: &str) -> Result<Self, Failure> {
        let patch: toml::Table = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Failure::config(e.to_string()))?;
        merge(&mut merged, patch);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(base: &Self, path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        Self::overlay(base, &text).map_err(|f| Failure::config(format!("{}: {}", path.display(), f.message)))
    }

    /// Push the top-level seed into every section.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.qc.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let [a, b, c] = self.split.fractions;
        if [a, b, c].iter().any(|f| !(*f >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Failure::config("split.fractions must be nonnegative and sum to 1"));
        }
        if !(self.split.ood_fraction > 0.0 && self.split.ood_fraction < 1.0) {
            return Err(Failure::config("split.ood_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn merge(into: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
