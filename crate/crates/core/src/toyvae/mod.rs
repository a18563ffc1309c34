//! A deliberately small VAE testbed with known ground-truth factors.
//!
//! The dataset is a grid of 16×16 binary images of white squares that vary in
//! horizontal position, vertical position, and size. The model is a
//! one-hidden-layer Gaussian-latent VAE trained with hand-written gradients,
//! so every number in the loop is inspectable and seeds reproduce runs
//! bit for bit. Training hooks the KL term to the same controller and
//! annealing schedule used by the plant simulations.

pub mod dataset;
pub mod mig;
pub mod model;
pub mod train;

pub use dataset::{make_factor_dataset, FactorDataset};
pub use mig::{mig_score, MigError, MigReport};
pub use model::{
    finite_diff_max_rel_err, load_checkpoint, save_checkpoint, Adam, ElboTerms, ForwardCache,
    ToyVae, ToyVaeError, VaeReal,
};
pub use train::{
    dimwise_activation_steps, train_fixed_beta, train_with_controller, ToyTrainConfig,
    ToyTrainError, TrainLog, TrainLogRow, TrainOutput,
};
