//! Causal variational autoencoder for single-cell gene-perturbation response.
//!
//! The model separates three latent factors per cell: a basal state `z_b`, an
//! additive perturbation effect `z_p` composed from sparse per-treatment masks
//! and embeddings, and a technical-artifact offset `z_a` that is switched on by
//! the quality-control label of the cell. Training maximises an ELBO plus a
//! counterfactual alignment term that ties the basal encoding of clean cells to
//! the basal encoding of the median QC-failed profile under the same treatment.
//!
//! Modules:
//! - [`data`]: count matrices, perturbation sets, splits, file formats
//! - [`qc`]: six-criterion quality control with scaled-MAD thresholds
//! - [`numerics`]: dense matrices, reverse-mode autodiff, distributions, Adam
//! - [`model`]: encoder, decoder, generator and counterfactual reference pools
//! - [`train`]: ELBO, counterfactual loss, training loop, checkpoints
//! - [`eval`]: ATE correlation / R², top-k Jaccard, QC pass rate
//! - [`synth`]: ground-truth synthetic Perturb-seq generator

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod qc;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
