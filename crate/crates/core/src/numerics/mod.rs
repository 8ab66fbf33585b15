//! Dense-array math: matrices, reverse-mode gradients, perceptrons, Adam, the
//! probability distributions used by the model and a tensor archive format.

pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod distributions;
pub mod matrix;
pub mod mlp;
pub mod special;

pub use adam::{AdamConfig, AdamState};
pub use autodiff::{Gradients, Graph, Var};
pub use distributions::{
    bernoulli_kl, gamma_poisson_log_prob, normal_kl, normal_rsample, relaxed_bernoulli_rsample,
    GaussianParams,
};
pub use matrix::Matrix;
pub use mlp::{mlp_forward, Activation, HeadSpec, HeadTransform, MlpSpec, ParamStore, ParamVars};
