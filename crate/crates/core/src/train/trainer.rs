use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::history::{EpochRecord, TrainHistory};
use super::{loss_and_grads, total_loss, ObjectiveConfig, Precision, TrainConfig};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{CfReferencePool, ModelConfig, ModelParams, Normalizer, PreparedData};
use crate::numerics::{AdamConfig, AdamState};

/// Offset separating validation RNG streams from training ones.
const VAL_STREAM: u64 = 1 << 32;

/// Resumable training state. Epoch `e` (0-based) draws all of its randomness
/// from ChaCha8 seeded with `seed` on stream `e + 1`, so a run resumed from an
/// epoch-boundary checkpoint reproduces an uninterrupted one.
pub struct Trainer {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub history: TrainHistory,
    /// Wall-clock seconds per epoch run by this trainer.
    pub timings: Vec<f64>,
    pub config: TrainConfig,
    pub data: PreparedData,
    pub train_cells: Vec<usize>,
    pub val_cells: Vec<usize>,
}

fn prepare(
    params: &ModelParams,
    data: &Dataset,
    split: &Split,
    labels: &[u8],
) -> Result<PreparedData> {
    let pool = CfReferencePool::build(data, labels, &split.train)?;
    PreparedData::new(params, data, labels, &pool)
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        clip_norm: cfg.clip_norm,
        ..AdamConfig::default()
    }
}

impl Trainer {
    /// Fresh parameters initialized from `config.seed`; normalization fitted
    /// on the training cells.
    pub fn new(
        data: &Dataset,
        split: &Split,
        labels: &[u8],
        model: ModelConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        split.validate(data.n_cells())?;
        if split.train.is_empty() {
            return Err(Error::validation("training split is empty"));
        }
        let normalizer = Normalizer::fit(&data.expr, &split.train)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(
            model,
            data.expr.gene_ids.clone(),
            data.expr.gene_flags.clone(),
            data.perts.treatment_names.clone(),
            normalizer,
            &mut rng,
        )?;
        let adam = AdamState::new(adam_config(&config), &params.store);
        let prepared = prepare(&params, data, split, labels)?;
        Ok(Self {
            params,
            adam,
            epoch: 0,
            history: TrainHistory::default(),
            timings: Vec::new(),
            config,
            data: prepared,
            train_cells: split.train.clone(),
            val_cells: split.val.clone(),
        })
    }

    /// Continue from a checkpoint; `history` holds the records written so far.
    pub fn resume(
        data: &Dataset,
        split: &Split,
        labels: &[u8],
        ckpt: Checkpoint,
        history: TrainHistory,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        split.validate(data.n_cells())?;
        if ckpt.seed != config.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} differs from configured seed {}",
                ckpt.seed, config.seed
            )));
        }
        if history.len() != ckpt.epoch {
            return Err(Error::Checkpoint(format!(
                "history has {} epochs, checkpoint is at epoch {}",
                history.len(),
                ckpt.epoch
            )));
        }
        let mut adam = ckpt
            .adam
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        adam.config = adam_config(&config);
        let prepared = prepare(&ckpt.params, data, split, labels)?;
        Ok(Self {
            params: ckpt.params,
            adam,
            epoch: ckpt.epoch,
            history,
            timings: Vec::new(),
            config,
            data: prepared,
            train_cells: split.train.clone(),
            val_cells: split.val.clone(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            epoch: self.epoch,
            seed: self.config.seed,
        }
    }

    fn epoch_rng(&self, offset: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(offset + self.epoch as u64 + 1);
        rng
    }

    /// One pass over the training cells.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let temperature = self.config.temperature(self.epoch);
        let n_total = self.train_cells.len();
        let ocfg = ObjectiveConfig::from_train(&self.config, temperature, n_total);
        let mut rng = self.epoch_rng(0);
        let mut order = self.train_cells.clone();
        order.shuffle(&mut rng);

        let mut rec = EpochRecord {
            epoch: self.epoch + 1,
            j1: 0.0,
            j2: 0.0,
            recon: 0.0,
            kl_zb: 0.0,
            kl_e: 0.0,
            kl_m: 0.0,
            kl_u: 0.0,
            n_cf: 0,
            val_j1: f64::NAN,
            grad_norm: 0.0,
            temperature,
        };
        let mut n_batches = 0usize;
        for cells in order.chunks(self.config.batch_size) {
            let batch = self.data.batch(cells);
            let (parts, grads) = loss_and_grads(&self.params, &batch, &ocfg, &mut rng)?;
            let norm = self.adam.step(&mut self.params.store, &grads)?;
            if self.config.precision == Precision::F32 {
                for (_, p) in self.params.store.iter_mut() {
                    p.data_mut().iter_mut().for_each(|v| *v = f64::from(*v as f32));
                }
            }
            let w = cells.len() as f64 / n_total as f64;
            rec.j1 += w * parts.j1;
            rec.j2 += w * parts.j2;
            rec.recon += w * parts.recon;
            rec.kl_zb += w * parts.kl_zb;
            rec.kl_e += w * parts.kl_e;
            rec.kl_m += w * parts.kl_m;
            rec.kl_u += w * parts.kl_u;
            rec.n_cf += parts.n_cf;
            rec.grad_norm += norm;
            n_batches += 1;
        }
        rec.grad_norm /= n_batches as f64;

        if !self.val_cells.is_empty() {
            let mut vrng = self.epoch_rng(VAL_STREAM);
            let vcfg = ObjectiveConfig { alpha: 0.0, ..ocfg };
            let mut acc = 0.0;
            for cells in self.val_cells.chunks(self.config.batch_size) {
                let batch = self.data.batch(cells);
                acc += total_loss(&self.params, &batch, &vcfg, &mut vrng)?.j1 * cells.len() as f64;
            }
            rec.val_j1 = acc / self.val_cells.len() as f64;
        }
        self.epoch += 1;
        self.history.records.push(rec);
        self.timings.push(start.elapsed().as_secs_f64());
        Ok(rec)
    }

    /// Run until `config.epochs`, calling `on_epoch` after each one.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }
}

/// Train from scratch for `config.epochs` epochs.
pub fn train(
    data: &Dataset,
    split: &Split,
    labels: &[u8],
    model: ModelConfig,
    config: TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    let mut t = Trainer::new(data, split, labels, model, config)?;
    t.run(|_| Ok(()))?;
    Ok((t.params, t.history))
}
