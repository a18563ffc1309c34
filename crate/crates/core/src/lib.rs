//! Set-point control for KL regularisation: a nonlinear incremental PI
//! controller that holds a VAE's KL divergence on an annealed target by
//! adjusting the KL weight β, plus the machinery around it — annealing
//! schedules, a first-order plant for offline experiments, system
//! identification, a linearised stability analyzer with dual verdicts,
//! closed-loop simulation, and a small hand-differentiated VAE testbed.
//!
//! Everything numeric is generic over the scalar (f32 or f64) through the
//! [`Real`] trait; the `*64` aliases below are the concrete types most code
//! wants.

pub mod control;
pub mod io;
pub mod num;
pub mod plant;
pub mod schedule;
pub mod simloop;
pub mod stability;
pub mod toyvae;

pub use num::Real;
pub use num_complex::Complex;

pub type Gains64 = control::Gains<f64>;
pub type ControllerState64 = control::ControllerState<f64>;
pub type MovingAverage64 = control::MovingAverage<f64>;
pub type AnnealSchedule64 = schedule::AnnealSchedule<f64>;
pub type ExpMap64 = plant::ExpMap<f64>;
pub type PlantModel64 = plant::PlantModel<f64>;
pub type LinearizedSystem64 = stability::LinearizedSystem<f64>;
pub type StabilityReport64 = stability::StabilityReport<f64>;
pub type RegionRow64 = stability::RegionRow<f64>;
pub type LoopConfig64 = simloop::LoopConfig<f64>;
pub type Trajectory64 = simloop::Trajectory<f64>;
pub type TrackingMetrics64 = simloop::TrackingMetrics<f64>;
pub type PlantSpec64 = simloop::PlantSpec<f64>;
pub type ToyVae64 = toyvae::ToyVae<f64>;
pub type ToyTrainConfig64 = toyvae::ToyTrainConfig<f64>;
pub type TrainLog64 = toyvae::TrainLog<f64>;
pub type FactorDataset64 = toyvae::FactorDataset<f64>;
