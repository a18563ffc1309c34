//! Controller-in-the-loop VAE training.
//!
//! Each step draws a minibatch, runs the forward pass, reads the batch KL,
//! lets the controller pick β from the smoothed KL against the annealed set
//! point, and only then back-propagates under that β — the weight applied to
//! the KL term is always the one computed from the step's own measurement.
//!
//! Randomness is split across fixed ChaCha streams (0 init, 1 batch indices,
//! 2 reparameterisation noise), so two runs that differ only in controller
//! settings see identical data and noise and are directly comparable.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ControlError, ControllerState, Gains, MovingAverage};
use crate::num::Real;
use crate::schedule::{AnnealSchedule, ScheduleError};
use crate::simloop::Variant;

use super::dataset::FactorDataset;
use super::model::{Adam, ToyVae, ToyVaeError, VaeReal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToyTrainError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Model(#[from] ToyVaeError),
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error("training diverged to a non-finite loss at step {step}")]
    NonFinite { step: u64 },
}

fn default_batch() -> usize {
    128
}
fn default_window() -> usize {
    5
}
fn default_hidden() -> usize {
    128
}
fn default_latent() -> usize {
    6
}
fn default_lr<T: Real>() -> T {
    T::from_f64c(1e-4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(deserialize = "T: serde::Deserialize<'de> + Real"))]
pub struct ToyTrainConfig<T> {
    pub seed: u64,
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: T,
    pub beta0: T,
    #[serde(default)]
    pub beta_min: T,
    #[serde(default = "default_window")]
    pub window: usize,
    pub gains: Gains<T>,
    pub schedule: AnnealSchedule<T>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Clone the model every this many steps (0 = final model only).
    #[serde(default)]
    pub snapshot_every: u64,
}

impl<T: Real> ToyTrainConfig<T> {
    pub fn validate(&self) -> Result<(), ToyTrainError> {
        self.gains.validate()?;
        self.schedule.validate()?;
        if self.steps == 0 {
            return Err(ToyTrainError::BadConfig("steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(ToyTrainError::BadConfig("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > T::zero()) {
            return Err(ToyTrainError::BadConfig("lr must be finite and positive"));
        }
        if !self.beta0.is_finite() || !self.beta_min.is_finite() {
            return Err(ToyTrainError::BadConfig("beta0 and beta_min must be finite"));
        }
        if self.window == 0 {
            return Err(ToyTrainError::BadConfig("window must be at least 1"));
        }
        if self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(ToyTrainError::BadConfig("model dimensions must be at least 1"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String
    where
        T: Serialize,
    {
        let json = serde_json::to_string(self).expect("train config serializes");
        format!("{:016x}", crate::simloop::fnv1a64(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLogRow<T> {
    pub step: u64,
    pub setpoint: T,
    pub kl_total: T,
    pub kl_smoothed: T,
    pub beta: T,
    pub recon_loss: T,
    pub kl_dims: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog<T> {
    pub rows: Vec<TrainLogRow<T>>,
    pub c_final: T,
    pub seed: u64,
    pub latent_dim: usize,
    pub config_digest: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub model: ToyVae<T>,
    pub log: TrainLog<T>,
    /// (step, model) pairs; always ends with the final model.
    pub snapshots: Vec<(u64, ToyVae<T>)>,
}

struct BatchSampler {
    idx_rng: ChaCha8Rng,
    eps_rng: ChaCha8Rng,
    n: usize,
    batch: usize,
    latent: usize,
}

impl BatchSampler {
    fn new(seed: u64, n: usize, batch: usize, latent: usize) -> Self {
        let mut idx_rng = ChaCha8Rng::seed_from_u64(seed);
        idx_rng.set_stream(1);
        let mut eps_rng = ChaCha8Rng::seed_from_u64(seed);
        eps_rng.set_stream(2);
        BatchSampler {
            idx_rng,
            eps_rng,
            n,
            batch,
            latent,
        }
    }

    fn draw<T: VaeReal>(&mut self, images: &Array2<T>) -> (Array2<T>, Array2<T>) {
        let idx: Vec<usize> = (0..self.batch).map(|_| self.idx_rng.random_range(0..self.n)).collect();
        let x = images.select(Axis(0), &idx);
        let eps = Array2::from_shape_fn((self.batch, self.latent), |_| T::standard_normal(&mut self.eps_rng));
        (x, eps)
    }
}

/// Train with the PI controller (or the variant's ablation) steering β.
pub fn train_with_controller<T: VaeReal + Serialize>(
    cfg: &ToyTrainConfig<T>,
    ds: &FactorDataset<T>,
) -> Result<TrainOutput<T>, ToyTrainError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(ToyTrainError::BadConfig("dataset must not be empty"));
    }
    let schedule = match cfg.variant {
        Variant::StepOnlyAnneal => cfg.schedule.as_step_only(),
        _ => cfg.schedule,
    };
    let window = match cfg.variant {
        Variant::NoSmoothing => 1,
        _ => cfg.window,
    };
    let mut ctl = match cfg.variant {
        Variant::NoInitPositional => ControllerState::new_positional(&cfg.gains, cfg.beta_min)?,
        _ => ControllerState::new(cfg.beta0, cfg.beta_min)?,
    };
    let mut ma = MovingAverage::new(window)?;

    let mut model = ToyVae::<T>::new(ds.pixel_count(), cfg.hidden_dim, cfg.latent_dim, cfg.seed)?;
    let mut sampler = BatchSampler::new(cfg.seed, ds.len(), cfg.batch_size, cfg.latent_dim);
    let mut adam = Adam::new(cfg.lr, model.num_params());
    let mut params = model.params_flat();

    let mut rows = Vec::with_capacity(cfg.steps as usize);
    let mut snapshots = Vec::new();
    for t in 0..cfg.steps {
        let (x, eps) = sampler.draw(&ds.images);
        let cache = model.forward(&x, &eps)?;
        let terms = cache.terms(T::zero());
        if !terms.recon.is_finite() || !terms.kl_total.is_finite() {
            return Err(ToyTrainError::NonFinite { step: t });
        }
        let setpoint = schedule.setpoint_at(t);
        let kl_smoothed = ma.smooth(terms.kl_total)?;
        let error = setpoint - kl_smoothed;
        let beta = match cfg.variant {
            Variant::NoInitPositional => ctl.positional_pi_step(&cfg.gains, error)?,
            _ => ctl.pi_step(&cfg.gains, error)?,
        };
        let grads = model.backward(&cache, beta);
        adam.step(&mut params, &grads);
        model.set_params_flat(&params)?;
        rows.push(TrainLogRow {
            step: t,
            setpoint,
            kl_total: terms.kl_total,
            kl_smoothed,
            beta,
            recon_loss: terms.recon,
            kl_dims: terms.kl_dims,
        });
        if cfg.snapshot_every > 0 && (t + 1) % cfg.snapshot_every == 0 && t + 1 < cfg.steps {
            snapshots.push((t, model.clone()));
        }
    }
    snapshots.push((cfg.steps - 1, model.clone()));
    Ok(TrainOutput {
        log: TrainLog {
            rows,
            c_final: schedule.c_final,
            seed: cfg.seed,
            latent_dim: cfg.latent_dim,
            config_digest: cfg.digest(),
        },
        model,
        snapshots,
    })
}

/// Plain-VAE baseline: identical data, noise, and init, but β held constant.
pub fn train_fixed_beta<T: VaeReal + Serialize>(
    cfg: &ToyTrainConfig<T>,
    beta: T,
    ds: &FactorDataset<T>,
) -> Result<TrainOutput<T>, ToyTrainError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(ToyTrainError::BadConfig("dataset must not be empty"));
    }
    if !beta.is_finite() || beta < T::zero() {
        return Err(ToyTrainError::BadConfig("fixed beta must be finite and non-negative"));
    }
    let mut ma = MovingAverage::new(cfg.window)?;
    let mut model = ToyVae::<T>::new(ds.pixel_count(), cfg.hidden_dim, cfg.latent_dim, cfg.seed)?;
    let mut sampler = BatchSampler::new(cfg.seed, ds.len(), cfg.batch_size, cfg.latent_dim);
    let mut adam = Adam::new(cfg.lr, model.num_params());
    let mut params = model.params_flat();

    let mut rows = Vec::with_capacity(cfg.steps as usize);
    let mut snapshots = Vec::new();
    for t in 0..cfg.steps {
        let (x, eps) = sampler.draw(&ds.images);
        let cache = model.forward(&x, &eps)?;
        let terms = cache.terms(T::zero());
        if !terms.recon.is_finite() || !terms.kl_total.is_finite() {
            return Err(ToyTrainError::NonFinite { step: t });
        }
        let kl_smoothed = ma.smooth(terms.kl_total)?;
        let grads = model.backward(&cache, beta);
        adam.step(&mut params, &grads);
        model.set_params_flat(&params)?;
        rows.push(TrainLogRow {
            step: t,
            setpoint: T::zero(),
            kl_total: terms.kl_total,
            kl_smoothed,
            beta,
            recon_loss: terms.recon,
            kl_dims: terms.kl_dims,
        });
        if cfg.snapshot_every > 0 && (t + 1) % cfg.snapshot_every == 0 && t + 1 < cfg.steps {
            snapshots.push((t, model.clone()));
        }
    }
    snapshots.push((cfg.steps - 1, model.clone()));
    Ok(TrainOutput {
        log: TrainLog {
            rows,
            c_final: T::zero(),
            seed: cfg.seed,
            latent_dim: cfg.latent_dim,
            config_digest: cfg.digest(),
        },
        model,
        snapshots,
    })
}

/// Per-latent-dimension activation step: the first step whose trailing
/// `window`-row running mean of that dimension's KL exceeds `threshold`
/// (None if it never does). Early rows use the mean of what is available.
pub fn dimwise_activation_steps<T: Real>(
    log: &TrainLog<T>,
    threshold: T,
    window: usize,
) -> Vec<Option<u64>> {
    let k = log.latent_dim;
    let w = window.max(1);
    let mut out = vec![None; k];
    for j in 0..k {
        let mut acc: Vec<T> = Vec::with_capacity(log.rows.len());
        for (i, row) in log.rows.iter().enumerate() {
            acc.push(row.kl_dims[j]);
            let lo = i + 1 - w.min(i + 1);
            let n = i + 1 - lo;
            let mean = acc[lo..].iter().fold(T::zero(), |s, &v| s + v) / T::from_f64c(n as f64);
            if mean > threshold {
                out[j] = Some(row.step);
                break;
            }
        }
    }
    out
}
