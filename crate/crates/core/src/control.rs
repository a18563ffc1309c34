//! Nonlinear PI control of the KL set point.
//!
//! The controller output β(t) weights the KL term of a VAE objective. Two forms:
//!
//! * **Incremental** (the production form): β(t) = β(t−1) + Δβ(t) with
//!   Δβ(t) = kp·[σ(−e(t)) − σ(−e(t−1))] − ki·e(t), where σ is the logistic
//!   function and e(t) = C(t) − ŷ(t) is the set-point error on the smoothed
//!   KL measurement. The logistic squashing keeps the proportional action
//!   bounded however large the error; the incremental form plus the output
//!   floor gives inherent anti-windup.
//! * **Positional** (ablation): β(t) = kp·σ(−e(t)) − ki·Σ_{j≤t} e(j), clamped
//!   at the floor. Kept for A/B comparison against the incremental form.
//!
//! Raw KL measurements are smoothed by a [`MovingAverage`] before entering the
//! error computation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::num::Real;

/// Controller errors: every path that could otherwise propagate a NaN/Inf into
/// β rejects its input instead.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ControlError {
    #[error("non-finite error input to controller")]
    NonFiniteError,
    #[error("controller gains must be finite and positive")]
    BadGains,
    #[error("beta bounds must be finite")]
    BadBetaBounds,
    #[error("moving-average window must hold at least one sample")]
    EmptyWindow,
    #[error("moving-average weights must be nonnegative and sum to one")]
    BadWeights,
    #[error("KL sample must be finite and nonnegative")]
    BadSample,
}

/// Proportional and integral gains (both strictly positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains<T> {
    pub kp: T,
    pub ki: T,
}

impl<T: Real> Gains<T> {
    pub fn new(kp: T, ki: T) -> Result<Self, ControlError> {
        let g = Gains { kp, ki };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.kp.is_finite() && self.ki.is_finite() && self.kp > T::zero() && self.ki > T::zero())
        {
            return Err(ControlError::BadGains);
        }
        Ok(())
    }
}

/// Numerically safe logistic σ(u) = 1 / (1 + e^(−u)).
///
/// Branches on the sign of `u` so the exponential never overflows:
/// σ(−1e9) is exactly 0.0 and σ(1e9) exactly 1.0.
pub fn logistic<T: Real>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let t = u.exp();
        t / (T::one() + t)
    }
}

/// Mutable controller state shared by both PI forms.
///
/// `err_sum` is only advanced by the positional form; the incremental form
/// carries its integral action inside `beta` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState<T> {
    pub beta: T,
    pub prev_error: T,
    pub err_sum: T,
    pub beta_min: T,
}

impl<T: Real> ControllerState<T> {
    /// State with a caller-chosen initial weight (clamped to the floor).
    pub fn new(beta0: T, beta_min: T) -> Result<Self, ControlError> {
        if !(beta0.is_finite() && beta_min.is_finite()) {
            return Err(ControlError::BadBetaBounds);
        }
        Ok(ControllerState {
            beta: beta0.max(beta_min),
            prev_error: T::zero(),
            err_sum: T::zero(),
            beta_min,
        })
    }

    /// State for the positional form: no large initial weight, β starts at
    /// kp·σ(0) (the value the positional law takes with an empty error
    /// history).
    pub fn new_positional(gains: &Gains<T>, beta_min: T) -> Result<Self, ControlError> {
        gains.validate()?;
        if !beta_min.is_finite() {
            return Err(ControlError::BadBetaBounds);
        }
        let half = T::from_f64c(0.5);
        Ok(ControllerState {
            beta: (gains.kp * half).max(beta_min),
            prev_error: T::zero(),
            err_sum: T::zero(),
            beta_min,
        })
    }

    /// One incremental PI update; returns the new β.
    ///
    /// Δβ(t) = kp·[σ(−e(t)) − σ(−e(t−1))] − ki·e(t). The integral increment is
    /// suppressed while the output sits at the floor (wind-up guard), and the
    /// result is clamped so β ≥ beta_min always holds.
    pub fn pi_step(&mut self, gains: &Gains<T>, error: T) -> Result<T, ControlError> {
        gains.validate()?;
        if !error.is_finite() {
            return Err(ControlError::NonFiniteError);
        }
        let dp = gains.kp * (logistic(-error) - logistic(-self.prev_error));
        let di = if self.beta <= self.beta_min {
            T::zero()
        } else {
            -gains.ki * error
        };
        let mut beta = self.beta + (dp + di);
        if beta < self.beta_min {
            beta = self.beta_min;
        }
        self.beta = beta;
        self.prev_error = error;
        Ok(beta)
    }

    /// One positional PI update; returns the new β.
    ///
    /// β(t) = kp·σ(−e(t)) − ki·Σ_{j≤t} e(j), clamped at the floor. The error
    /// sum accumulates without any wind-up protection — that is the point of
    /// keeping this form around as an ablation.
    pub fn positional_pi_step(&mut self, gains: &Gains<T>, error: T) -> Result<T, ControlError> {
        gains.validate()?;
        if !error.is_finite() {
            return Err(ControlError::NonFiniteError);
        }
        self.err_sum = self.err_sum + error;
        let mut beta = gains.kp * logistic(-error) - gains.ki * self.err_sum;
        if beta < self.beta_min {
            beta = self.beta_min;
        }
        self.beta = beta;
        self.prev_error = error;
        Ok(beta)
    }
}

/// Fixed-width moving average over raw KL samples.
///
/// Weights are nonnegative and sum to one; the default is equal weighting.
/// While the window is still filling, the output is the equal-weight mean of
/// the samples seen so far regardless of the configured weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverage<T> {
    window: VecDeque<T>,
    weights: Vec<T>,
}

impl<T: Real> MovingAverage<T> {
    /// Equal-weight window of `len` samples.
    pub fn new(len: usize) -> Result<Self, ControlError> {
        if len == 0 {
            return Err(ControlError::EmptyWindow);
        }
        let w = T::one() / T::from_f64c(len as f64);
        Ok(MovingAverage {
            window: VecDeque::with_capacity(len),
            weights: vec![w; len],
        })
    }

    /// Window with explicit weights, ordered oldest sample first.
    pub fn with_weights(weights: Vec<T>) -> Result<Self, ControlError> {
        if weights.is_empty() {
            return Err(ControlError::EmptyWindow);
        }
        let mut sum = T::zero();
        for &w in &weights {
            if !w.is_finite() || w < T::zero() {
                return Err(ControlError::BadWeights);
            }
            sum = sum + w;
        }
        if (sum - T::one()).abs() > T::from_f64c(1e-9) {
            return Err(ControlError::BadWeights);
        }
        Ok(MovingAverage {
            window: VecDeque::with_capacity(weights.len()),
            weights,
        })
    }

    pub fn window_len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.weights.len()
    }

    /// Push a raw sample and return the smoothed value.
    pub fn smooth(&mut self, y_kl: T) -> Result<T, ControlError> {
        if !y_kl.is_finite() || y_kl < T::zero() {
            return Err(ControlError::BadSample);
        }
        if self.window.len() == self.weights.len() {
            self.window.pop_front();
        }
        self.window.push_back(y_kl);
        if self.window.len() < self.weights.len() {
            let mut sum = T::zero();
            for &y in &self.window {
                sum = sum + y;
            }
            Ok(sum / T::from_f64c(self.window.len() as f64))
        } else {
            let mut out = T::zero();
            for (&w, &y) in self.weights.iter().zip(&self.window) {
                out = out + w * y;
            }
            Ok(out)
        }
    }
}
