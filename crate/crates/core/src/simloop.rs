//! Closed-loop simulation: annealed set point → plant → smoothing → PI update.
//!
//! Each step t: read C(t) from the schedule, advance the plant under the
//! current β, smooth the measurement, form e(t) = C(t) − ŷ(t), and update the
//! controller. The row logged at t carries the β the controller emitted after
//! seeing step t's measurement (the weight the next plant step runs under).
//!
//! Four variants mirror the ablations used to probe the design:
//! `full` (incremental PI, hybrid anneal, smoothing), `no_init_positional`
//! (positional PI, no large initial β), `step_only_anneal` (ramps collapsed
//! to jumps), and `no_smoothing` (raw KL into the error).

use serde::{Deserialize, Serialize};

use crate::control::{ControlError, ControllerState, Gains, MovingAverage};
use crate::num::Real;
use crate::plant::{presets, ExpMap, PlantError, PlantModel};
use crate::schedule::{AnnealSchedule, ScheduleError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid loop config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    NoInitPositional,
    StepOnlyAnneal,
    NoSmoothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Mnist,
    Dsprites,
}

/// Plant parameters by preset name, with optional noise/initial-state
/// overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSpec<T> {
    pub name: PresetName,
    #[serde(default)]
    pub noise_std: T,
    #[serde(default)]
    pub y0: T,
}

/// Explicit plant parameters (e.g. pasted from an identification run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomPlantSpec<T> {
    pub a: T,
    pub amplitude: T,
    pub rate: T,
    #[serde(default)]
    pub noise_std: T,
    #[serde(default)]
    pub y0: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[serde(bound(deserialize = "T: serde::Deserialize<'de> + Default"))]
pub enum PlantSpec<T> {
    Preset(PresetSpec<T>),
    Custom(CustomPlantSpec<T>),
}

impl<T: Real> PlantSpec<T> {
    pub fn preset(name: PresetName) -> Self {
        PlantSpec::Preset(PresetSpec {
            name,
            noise_std: T::zero(),
            y0: T::zero(),
        })
    }

    /// Resolved (a, map, noise_std, y0) tuple.
    pub fn resolve(&self) -> Result<(T, ExpMap<T>, T, T), PlantError> {
        match *self {
            PlantSpec::Preset(p) => {
                let params = match p.name {
                    PresetName::Mnist => presets::mnist::<T>(),
                    PresetName::Dsprites => presets::dsprites::<T>(),
                };
                Ok((params.a, params.g, p.noise_std, p.y0))
            }
            PlantSpec::Custom(c) => Ok((c.a, ExpMap::new(c.amplitude, c.rate)?, c.noise_std, c.y0)),
        }
    }

    pub fn build(&self, seed: u64) -> Result<PlantModel<T>, PlantError> {
        let (a, g, noise_std, y0) = self.resolve()?;
        PlantModel::new(a, g, y0, noise_std, seed)
    }
}

fn default_window() -> usize {
    5
}

/// Everything needed to reproduce a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig<T> {
    pub schedule: AnnealSchedule<T>,
    pub gains: Gains<T>,
    pub beta0: T,
    #[serde(default)]
    pub beta_min: T,
    /// Moving-average window over raw KL measurements.
    #[serde(default = "default_window")]
    pub window: usize,
    pub plant: PlantSpec<T>,
    pub steps: u64,
    #[serde(default)]
    pub variant: Variant,
    pub seed: u64,
}

impl<T: Real> LoopConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        self.schedule.validate()?;
        self.gains.validate()?;
        if !self.beta0.is_finite() || !self.beta_min.is_finite() {
            return Err(SimError::BadConfig("beta0 and beta_min must be finite"));
        }
        if self.window == 0 {
            return Err(SimError::BadConfig("window must be at least 1"));
        }
        if self.steps == 0 {
            return Err(SimError::BadConfig("steps must be at least 1"));
        }
        self.plant.resolve()?;
        Ok(())
    }

    /// Short content digest of the canonical JSON form (run provenance).
    pub fn digest(&self) -> String
    where
        T: Serialize,
    {
        let json = serde_json::to_string(self).expect("loop config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow<T> {
    pub step: u64,
    pub setpoint: T,
    pub kl_raw: T,
    pub kl_smoothed: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<T> {
    pub rows: Vec<TrajectoryRow<T>>,
    pub c_final: T,
    pub seed: u64,
    pub config_digest: String,
}

/// Run the loop described by `cfg` for `cfg.steps` steps.
pub fn run_closed_loop<T: Real + Serialize>(cfg: &LoopConfig<T>) -> Result<Trajectory<T>, SimError> {
    cfg.validate()?;
    let schedule = match cfg.variant {
        Variant::StepOnlyAnneal => cfg.schedule.as_step_only(),
        _ => cfg.schedule,
    };
    let mut plant = cfg.plant.build(cfg.seed)?;
    let window = match cfg.variant {
        Variant::NoSmoothing => 1,
        _ => cfg.window,
    };
    let mut ma = MovingAverage::new(window)?;
    let mut ctl = match cfg.variant {
        Variant::NoInitPositional => ControllerState::new_positional(&cfg.gains, cfg.beta_min)?,
        _ => ControllerState::new(cfg.beta0, cfg.beta_min)?,
    };

    let mut rows = Vec::with_capacity(cfg.steps as usize);
    for t in 0..cfg.steps {
        let setpoint = schedule.setpoint_at(t);
        let kl_raw = plant.step(ctl.beta);
        let kl_smoothed = ma.smooth(kl_raw)?;
        let error = setpoint - kl_smoothed;
        let beta = match cfg.variant {
            Variant::NoInitPositional => ctl.positional_pi_step(&cfg.gains, error)?,
            _ => ctl.pi_step(&cfg.gains, error)?,
        };
        rows.push(TrajectoryRow {
            step: t,
            setpoint,
            kl_raw,
            kl_smoothed,
            beta,
        });
    }
    Ok(Trajectory {
        rows,
        c_final: schedule.c_final,
        seed: cfg.seed,
        config_digest: cfg.digest(),
    })
}

/// Summary statistics for a finished trajectory. The settle band is ±2% of
/// the schedule's final level around the (time-varying) set point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingMetrics<T> {
    /// Largest excursion of the smoothed KL above the set point (≥ 0).
    pub max_overshoot: T,
    /// First step after which |error| never leaves the settle band; equals
    /// the run length when the loop never settles.
    pub settle_step: u64,
    pub settled: bool,
    /// Mean |error| over the final 5% of steps.
    pub steady_state_err: T,
}

pub fn tracking_metrics<T: Real>(traj: &Trajectory<T>) -> TrackingMetrics<T> {
    let band = T::from_f64c(0.02) * traj.c_final;
    let mut max_overshoot = T::zero();
    let mut settle_step = 0u64;
    for r in &traj.rows {
        let err = r.kl_smoothed - r.setpoint;
        max_overshoot = max_overshoot.max(err);
        if err.abs() > band {
            settle_step = r.step + 1;
        }
    }
    max_overshoot = max_overshoot.max(T::zero());
    let n = traj.rows.len();
    let settled = (settle_step as usize) < n;
    let tail = (n / 20).max(1).min(n);
    let mut steady = T::zero();
    for r in &traj.rows[n - tail..] {
        steady = steady + (r.kl_smoothed - r.setpoint).abs();
    }
    steady = steady / T::from_f64c(tail as f64);
    TrackingMetrics {
        max_overshoot,
        settle_step,
        settled,
        steady_state_err: steady,
    }
}
