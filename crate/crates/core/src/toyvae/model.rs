//! One-hidden-layer Gaussian VAE with hand-written gradients.
//!
//! Encoder: x → tanh(W1 x + b1) → (μ, log σ²), with log σ² clamped to ±10.
//! Decoder: z → tanh(W2 z + b2) → Bernoulli logits. The loss is
//!
//!   L(β) = recon + β · Σ_j KL_j,
//!
//! where recon is the batch-mean of the pixel-summed Bernoulli negative
//! log-likelihood (in nats, straight from logits for stability) and KL_j is
//! the batch-mean KL of latent dimension j against N(0, 1). One
//! reparameterised sample per datum; ε is passed in explicitly so that a run
//! is a pure function of its inputs and both finite-difference checks and
//! bitwise replays are possible.

use std::io::{self, BufRead, Write};

use ndarray::{Array1, Array2, Axis, LinalgScalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::logistic;
use crate::num::Real;

/// Scalars the VAE can train in: our `Real` plus ndarray's matmul bound.
pub trait VaeReal: Real + LinalgScalar {}
impl<T: Real + LinalgScalar> VaeReal for T {}

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToyVaeError {
    #[error("dimensions must all be at least 1")]
    BadDims,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("parameter vector has wrong length: expected {expected}, got {got}")]
    BadParamLength { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct ToyVae<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w_mu: Array2<T>,
    pub b_mu: Array1<T>,
    pub w_lv: Array2<T>,
    pub b_lv: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    pub w3: Array2<T>,
    pub b3: Array1<T>,
}

/// Loss pieces for one batch at a given β.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboTerms<T> {
    pub loss: T,
    pub recon: T,
    pub kl_total: T,
    pub kl_dims: Vec<T>,
}

/// Intermediate activations kept for the backward pass. The KL and its
/// gradient depend on β only linearly, so one forward pass supports reading
/// the KL first, updating β, and then back-propagating under the new value.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub x: Array2<T>,
    pub eps: Array2<T>,
    pub h1: Array2<T>,
    pub mu: Array2<T>,
    pub lv_pre: Array2<T>,
    pub lv: Array2<T>,
    pub z: Array2<T>,
    pub h2: Array2<T>,
    pub logits: Array2<T>,
}

fn softplus<T: Real>(l: T) -> T {
    l.max(T::zero()) + (-l.abs()).exp().ln_1p()
}

impl<T: VaeReal> ToyVae<T> {
    /// All-zero parameters (useful as a deserialization target).
    pub fn zeroed(input_dim: usize, hidden_dim: usize, latent_dim: usize) -> Result<Self, ToyVaeError> {
        if input_dim == 0 || hidden_dim == 0 || latent_dim == 0 {
            return Err(ToyVaeError::BadDims);
        }
        Ok(ToyVae {
            input_dim,
            hidden_dim,
            latent_dim,
            w1: Array2::zeros((input_dim, hidden_dim)),
            b1: Array1::zeros(hidden_dim),
            w_mu: Array2::zeros((hidden_dim, latent_dim)),
            b_mu: Array1::zeros(latent_dim),
            w_lv: Array2::zeros((hidden_dim, latent_dim)),
            b_lv: Array1::zeros(latent_dim),
            w2: Array2::zeros((latent_dim, hidden_dim)),
            b2: Array1::zeros(hidden_dim),
            w3: Array2::zeros((hidden_dim, input_dim)),
            b3: Array1::zeros(input_dim),
        })
    }

    /// Seeded init: weights uniform in ±1/√fan_in, biases zero.
    pub fn new(input_dim: usize, hidden_dim: usize, latent_dim: usize, seed: u64) -> Result<Self, ToyVaeError> {
        let mut model = Self::zeroed(input_dim, hidden_dim, latent_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut fill = |w: &mut Array2<T>| {
            let bound = 1.0 / (w.nrows() as f64).sqrt();
            for v in w.iter_mut() {
                *v = T::from_f64c(rng.random_range(-bound..bound));
            }
        };
        fill(&mut model.w1);
        fill(&mut model.w_mu);
        fill(&mut model.w_lv);
        fill(&mut model.w2);
        fill(&mut model.w3);
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.latent_dim);
        d * h + h + 2 * (h * k + k) + k * h + h + h * d + d
    }

    fn tensors(&self) -> [(&Array2<T>, &Array1<T>); 5] {
        [
            (&self.w1, &self.b1),
            (&self.w_mu, &self.b_mu),
            (&self.w_lv, &self.b_lv),
            (&self.w2, &self.b2),
            (&self.w3, &self.b3),
        ]
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.tensors() {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<(), ToyVaeError> {
        if params.len() != self.num_params() {
            return Err(ToyVaeError::BadParamLength {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        let mut take = |dst: &mut [T], src: &[T]| {
            dst.copy_from_slice(&src[offset..offset + dst.len()]);
            offset += dst.len();
        };
        macro_rules! load {
            ($w:ident, $b:ident) => {
                take(self.$w.as_slice_mut().expect("params are contiguous"), params);
                take(self.$b.as_slice_mut().expect("params are contiguous"), params);
            };
        }
        load!(w1, b1);
        load!(w_mu, b_mu);
        load!(w_lv, b_lv);
        load!(w2, b2);
        load!(w3, b3);
        Ok(())
    }

    pub fn forward(&self, x: &Array2<T>, eps: &Array2<T>) -> Result<ForwardCache<T>, ToyVaeError> {
        if x.nrows() == 0 {
            return Err(ToyVaeError::ShapeMismatch("batch must not be empty"));
        }
        if x.ncols() != self.input_dim {
            return Err(ToyVaeError::ShapeMismatch("x columns must equal input_dim"));
        }
        if eps.nrows() != x.nrows() || eps.ncols() != self.latent_dim {
            return Err(ToyVaeError::ShapeMismatch("eps must be batch × latent_dim"));
        }
        let clamp = T::from_f64c(LOGVAR_CLAMP);
        let h1 = (x.dot(&self.w1) + &self.b1).mapv(T::tanh);
        let mu = h1.dot(&self.w_mu) + &self.b_mu;
        let lv_pre = h1.dot(&self.w_lv) + &self.b_lv;
        let lv = lv_pre.mapv(|v| v.max(-clamp).min(clamp));
        let half = T::from_f64c(0.5);
        let std = lv.mapv(|v| (v * half).exp());
        let z = &mu + &(eps * &std);
        let h2 = (z.dot(&self.w2) + &self.b2).mapv(T::tanh);
        let logits = h2.dot(&self.w3) + &self.b3;
        Ok(ForwardCache {
            x: x.clone(),
            eps: eps.clone(),
            h1,
            mu,
            lv_pre,
            lv,
            z,
            h2,
            logits,
        })
    }

    /// Gradient of `terms(β).loss` w.r.t. every parameter, flattened in the
    /// same order as `params_flat`.
    pub fn backward(&self, cache: &ForwardCache<T>, beta: T) -> Vec<T> {
        let b = cache.x.nrows();
        let inv_b = T::one() / T::from_f64c(b as f64);
        let half = T::from_f64c(0.5);
        let clamp = T::from_f64c(LOGVAR_CLAMP);

        // decoder
        let dlogits = (cache.logits.mapv(logistic) - &cache.x).mapv(|v| v * inv_b);
        let dw3 = cache.h2.t().dot(&dlogits);
        let db3 = dlogits.sum_axis(Axis(0));
        let dh2 = dlogits.dot(&self.w3.t());
        let dh2_pre = &dh2 * &cache.h2.mapv(|v| T::one() - v * v);
        let dw2 = cache.z.t().dot(&dh2_pre);
        let db2 = dh2_pre.sum_axis(Axis(0));
        let dz = dh2_pre.dot(&self.w2.t());

        // reparameterisation and KL
        let std = cache.lv.mapv(|v| (v * half).exp());
        let dmu = &dz + &cache.mu.mapv(|v| beta * v * inv_b);
        let dlv_sample = (&dz * &cache.eps) * &std.mapv(|v| v * half);
        let dlv_kl = cache.lv.mapv(|v| beta * (v.exp() - T::one()) * half * inv_b);
        let dlv = dlv_sample + dlv_kl;
        // clamp: zero gradient where the pre-activation sits outside the band
        let dlv_pre = &dlv
            * &cache
                .lv_pre
                .mapv(|v| if v > -clamp && v < clamp { T::one() } else { T::zero() });

        // encoder
        let dw_mu = cache.h1.t().dot(&dmu);
        let db_mu = dmu.sum_axis(Axis(0));
        let dw_lv = cache.h1.t().dot(&dlv_pre);
        let db_lv = dlv_pre.sum_axis(Axis(0));
        let dh1 = dmu.dot(&self.w_mu.t()) + dlv_pre.dot(&self.w_lv.t());
        let dh1_pre = &dh1 * &cache.h1.mapv(|v| T::one() - v * v);
        let dw1 = cache.x.t().dot(&dh1_pre);
        let db1 = dh1_pre.sum_axis(Axis(0));

        let mut out = Vec::with_capacity(self.num_params());
        for (w, bv) in [
            (&dw1, &db1),
            (&dw_mu, &db_mu),
            (&dw_lv, &db_lv),
            (&dw2, &db2),
            (&dw3, &db3),
        ] {
            out.extend(w.iter().copied());
            out.extend(bv.iter().copied());
        }
        out
    }

    /// Mean encoder output (the deterministic code used for evaluation).
    pub fn encode_mu(&self, x: &Array2<T>) -> Array2<T> {
        let h1 = (x.dot(&self.w1) + &self.b1).mapv(T::tanh);
        h1.dot(&self.w_mu) + &self.b_mu
    }

    /// Deterministic reconstruction NLL (z = μ, no sampling), batch mean.
    pub fn reconstruction_nll(&self, x: &Array2<T>) -> Result<T, ToyVaeError> {
        let eps = Array2::zeros((x.nrows(), self.latent_dim));
        Ok(self.forward(x, &eps)?.terms(T::zero()).recon)
    }
}

impl<T: VaeReal> ForwardCache<T> {
    pub fn terms(&self, beta: T) -> ElboTerms<T> {
        let b = self.x.nrows();
        let inv_b = T::one() / T::from_f64c(b as f64);
        let half = T::from_f64c(0.5);
        let mut recon = T::zero();
        for (&l, &x) in self.logits.iter().zip(self.x.iter()) {
            recon = recon + softplus(l) - x * l;
        }
        recon = recon * inv_b;
        let mut kl_dims = vec![T::zero(); self.mu.ncols()];
        for (row_mu, row_lv) in self.mu.rows().into_iter().zip(self.lv.rows()) {
            for (j, (&m, &v)) in row_mu.iter().zip(row_lv.iter()).enumerate() {
                kl_dims[j] = kl_dims[j] + half * (m * m + v.exp() - v - T::one());
            }
        }
        for v in &mut kl_dims {
            *v = *v * inv_b;
        }
        let kl_total = kl_dims.iter().fold(T::zero(), |acc, &v| acc + v);
        ElboTerms {
            loss: recon + beta * kl_total,
            recon,
            kl_total,
            kl_dims,
        }
    }
}

/// Adam with standard bias correction on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: T::from_f64c(0.90),
            beta2: T::from_f64c(0.99),
            eps: T::from_f64c(1e-8),
            t: 0,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under Adam");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed under Adam");
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Central-difference gradient check: returns the worst relative error over
/// all parameters, with |g| floored at 1e-6 in the denominator.
pub fn finite_diff_max_rel_err<T: VaeReal>(
    model: &mut ToyVae<T>,
    x: &Array2<T>,
    eps: &Array2<T>,
    beta: T,
    h: T,
) -> Result<T, ToyVaeError> {
    let analytic = {
        let cache = model.forward(x, eps)?;
        model.backward(&cache, beta)
    };
    let original = model.params_flat();
    let mut params = original.clone();
    let floor = T::from_f64c(1e-6);
    let two = T::from_f64c(2.0);
    let mut worst = T::zero();
    for i in 0..params.len() {
        let saved = params[i];
        params[i] = saved + h;
        model.set_params_flat(&params)?;
        let f_plus = model.forward(x, eps)?.terms(beta).loss;
        params[i] = saved - h;
        model.set_params_flat(&params)?;
        let f_minus = model.forward(x, eps)?.terms(beta).loss;
        params[i] = saved;
        let g_fd = (f_plus - f_minus) / (two * h);
        let g_an = analytic[i];
        let denom = g_an.abs().max(g_fd.abs()).max(floor);
        worst = worst.max((g_an - g_fd).abs() / denom);
    }
    model.set_params_flat(&original)?;
    Ok(worst)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    step: u64,
    input_dim: usize,
    hidden_dim: usize,
    latent_dim: usize,
    n_params: usize,
}

const CHECKPOINT_FORMAT: &str = "toy-vae-checkpoint";

/// Header line of JSON, then `n_params` little-endian f64 values.
pub fn save_checkpoint<T: VaeReal, W: Write>(model: &ToyVae<T>, step: u64, mut w: W) -> io::Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        version: 1,
        step,
        input_dim: model.input_dim,
        hidden_dim: model.hidden_dim,
        latent_dim: model.latent_dim,
        n_params: model.num_params(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in model.params_flat() {
        let as_f64 = v.to_f64().ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidData, "parameter not representable as f64")
        })?;
        w.write_all(&as_f64.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint<T: VaeReal, R: BufRead>(mut r: R) -> io::Result<(ToyVae<T>, u64)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("bad checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != 1 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "not a version-1 toy-vae checkpoint",
        ));
    }
    let mut model = ToyVae::<T>::zeroed(header.input_dim, header.hidden_dim, header.latent_dim)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    if header.n_params != model.num_params() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "checkpoint header parameter count does not match its dimensions",
        ));
    }
    let mut buf = vec![0u8; header.n_params * 8];
    r.read_exact(&mut buf)?;
    let params: Vec<T> = buf
        .chunks_exact(8)
        .map(|c| T::from_f64c(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    model
        .set_params_flat(&params)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    Ok((model, header.step))
}
