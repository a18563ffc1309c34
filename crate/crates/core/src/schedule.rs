//! Annealed KL set-point schedules.
//!
//! The set point C(t) climbs from `c0` to `c_final` in increments of
//! `step_size`. Each period of length `plateau_len + ramp_len` holds the
//! current level for `plateau_len` steps and then (in hybrid mode) ramps
//! linearly into the next level over `ramp_len` steps. Step-only mode skips
//! the ramp and jumps at period boundaries — the ablation arm used to show
//! that ramping suppresses overshoot. C(t) saturates at `c_final` and never
//! decreases.

use serde::{Deserialize, Serialize};

use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("schedule levels must be finite with 0 <= c0 <= c_final")]
    BadLevels,
    #[error("step size must be finite and positive")]
    BadStepSize,
    #[error("plateau length must be at least one step")]
    EmptyPlateau,
    #[error("hybrid mode needs a ramp of at least one step")]
    EmptyRamp,
    #[error("converged KL must be finite and positive")]
    BadConvergedKl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    Hybrid,
    StepOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule<T> {
    pub c0: T,
    pub c_final: T,
    /// Set-point increment per period, in nats.
    pub step_size: T,
    pub plateau_len: u64,
    pub ramp_len: u64,
    #[serde(default)]
    pub mode: ScheduleMode,
}

impl<T: Real> AnnealSchedule<T> {
    pub fn hybrid(
        c0: T,
        c_final: T,
        step_size: T,
        plateau_len: u64,
        ramp_len: u64,
    ) -> Result<Self, ScheduleError> {
        let s = AnnealSchedule {
            c0,
            c_final,
            step_size,
            plateau_len,
            ramp_len,
            mode: ScheduleMode::Hybrid,
        };
        s.validate()?;
        Ok(s)
    }

    /// Step-only schedule with the same period structure (the ramp portion of
    /// the period is retained so matched ablations share period boundaries).
    pub fn step_only(
        c0: T,
        c_final: T,
        step_size: T,
        plateau_len: u64,
        ramp_len: u64,
    ) -> Result<Self, ScheduleError> {
        let s = AnnealSchedule {
            c0,
            c_final,
            step_size,
            plateau_len,
            ramp_len,
            mode: ScheduleMode::StepOnly,
        };
        s.validate()?;
        Ok(s)
    }

    /// Same schedule with the ramp collapsed (for ablation arms).
    pub fn as_step_only(mut self) -> Self {
        self.mode = ScheduleMode::StepOnly;
        self
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.c0.is_finite() && self.c_final.is_finite())
            || self.c0 < T::zero()
            || self.c_final < self.c0
        {
            return Err(ScheduleError::BadLevels);
        }
        if !self.step_size.is_finite() || self.step_size <= T::zero() {
            return Err(ScheduleError::BadStepSize);
        }
        if self.plateau_len == 0 {
            return Err(ScheduleError::EmptyPlateau);
        }
        if self.mode == ScheduleMode::Hybrid && self.ramp_len == 0 {
            return Err(ScheduleError::EmptyRamp);
        }
        Ok(())
    }

    pub fn period(&self) -> u64 {
        self.plateau_len + self.ramp_len
    }

    /// Set point at training step `t`.
    pub fn setpoint_at(&self, t: u64) -> T {
        let period = self.period();
        let k = t / period;
        let p = t % period;
        let base = (self.c0 + T::from_f64c(k as f64) * self.step_size).min(self.c_final);
        match self.mode {
            ScheduleMode::StepOnly => base,
            ScheduleMode::Hybrid => {
                if p < self.plateau_len {
                    base
                } else {
                    let frac = T::from_f64c((p - self.plateau_len) as f64)
                        / T::from_f64c(self.ramp_len as f64);
                    (base + self.step_size * frac).min(self.c_final)
                }
            }
        }
    }

    /// First step at which the set point has reached `c_final` (0 when the
    /// schedule starts saturated).
    pub fn saturation_step(&self) -> u64 {
        if self.setpoint_at(0) >= self.c_final {
            return 0;
        }
        // C(t) is nondecreasing, so binary-search the first saturated step.
        let needed = ((self.c_final - self.c0) / self.step_size)
            .ceil()
            .to_f64()
            .expect("schedule levels representable as f64") as u64;
        let mut lo = 0u64;
        let mut hi = (needed + 2) * self.period();
        debug_assert!(self.setpoint_at(hi) >= self.c_final);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.setpoint_at(mid) >= self.c_final {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }
}

/// Set-point guideline: target at most the converged KL of an uncontrolled
/// VAE on the same data (default: exactly that value).
pub fn recommend_setpoint<T: Real>(vae_converged_kl: T) -> Result<T, ScheduleError> {
    if !vae_converged_kl.is_finite() || vae_converged_kl <= T::zero() {
        return Err(ScheduleError::BadConvergedKl);
    }
    Ok(vae_converged_kl)
}
