//! Simulated KL "plant" and its identification.
//!
//! Closed-loop behavior of β-controlled training is approximated by a
//! first-order lag driven through a static decreasing nonlinearity:
//!
//! ```text
//! y(t) = y(t-1)/(1+a) + (a/(1+a)) * g(x(t)),   g(x) = A * exp(-k x)
//! ```
//!
//! `y` is the (noiseless) KL state, `x` the weight β, `1/a` the time constant
//! in steps. Measurements add Gaussian noise and are clipped at zero; the
//! internal state stays noiseless. For a constant input from `y(0) = 0` the
//! response is `y(t) = C' (1 - (1+a)^(-t))`, whose continuous-time shadow
//! `C' (1 - e^(-a t))` crosses 63.2% of `C'` at `t = 1/a` — the handle used
//! for identifying `a` from an open-loop run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlantError {
    #[error("time-constant parameter a must be finite and positive")]
    BadTimeConstant,
    #[error("exponential map needs finite positive amplitude and rate")]
    BadExpMap,
    #[error("exponential map inverse needs a positive argument")]
    BadInverseArg,
    #[error("initial KL state must be finite and nonnegative")]
    BadInitialState,
    #[error("noise level must be finite and nonnegative")]
    BadNoise,
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error("KL samples must be finite and positive for a log-linear fit")]
    NonpositiveSample,
    #[error("all inputs in the fit are identical")]
    DegenerateInputs,
    #[error("fitted map is not monotone decreasing in beta")]
    NotDecreasing,
    #[error("insufficient rise: response never reaches the 63.2% point")]
    InsufficientRise,
    #[error("open-loop trajectory must have finite values and increasing steps")]
    BadTrajectory,
}

/// Static map from weight to converged KL: g(x) = amplitude · e^(−rate·x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpMap<T> {
    pub amplitude: T,
    pub rate: T,
}

impl<T: Real> ExpMap<T> {
    pub fn new(amplitude: T, rate: T) -> Result<Self, PlantError> {
        if !(amplitude.is_finite() && rate.is_finite())
            || amplitude <= T::zero()
            || rate <= T::zero()
        {
            return Err(PlantError::BadExpMap);
        }
        Ok(ExpMap { amplitude, rate })
    }

    pub fn eval(&self, x: T) -> T {
        self.amplitude * (-self.rate * x).exp()
    }

    /// g⁻¹(y) = −ln(y/A)/k; defined for any y > 0 (y > A gives a negative x).
    pub fn inverse(&self, y: T) -> Result<T, PlantError> {
        if !y.is_finite() || y <= T::zero() {
            return Err(PlantError::BadInverseArg);
        }
        Ok(-(y / self.amplitude).ln() / self.rate)
    }

    /// g′(x) = −k·g(x) (always negative).
    pub fn derivative(&self, x: T) -> T {
        -self.rate * self.eval(x)
    }

    /// Slope of the map at the equilibrium weight for set point `c`:
    /// g′(g⁻¹(c)) = −rate·c.
    pub fn derivative_at_level(&self, c: T) -> T {
        -self.rate * c
    }
}

/// First-order plant with seeded measurement noise.
#[derive(Debug, Clone)]
pub struct PlantModel<T> {
    a: T,
    g: ExpMap<T>,
    y: T,
    noise_std: T,
    rng: ChaCha8Rng,
}

impl<T: Real> PlantModel<T> {
    pub fn new(a: T, g: ExpMap<T>, y0: T, noise_std: T, seed: u64) -> Result<Self, PlantError> {
        if !a.is_finite() || a <= T::zero() {
            return Err(PlantError::BadTimeConstant);
        }
        if !y0.is_finite() || y0 < T::zero() {
            return Err(PlantError::BadInitialState);
        }
        if !noise_std.is_finite() || noise_std < T::zero() {
            return Err(PlantError::BadNoise);
        }
        Ok(PlantModel {
            a,
            g,
            y: y0,
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn map(&self) -> &ExpMap<T> {
        &self.g
    }

    /// Noiseless internal KL state.
    pub fn state(&self) -> T {
        self.y
    }

    /// Advance one step under weight `beta` and return the measured KL
    /// (state plus clipped Gaussian noise). The internal state stays
    /// noiseless so noise never feeds back through the plant itself.
    pub fn step(&mut self, beta: T) -> T {
        debug_assert!(beta.is_finite(), "plant driven with non-finite beta");
        let one = T::one();
        let denom = one + self.a;
        self.y = self.y / denom + (self.a / denom) * self.g.eval(beta);
        if self.noise_std > T::zero() {
            let eps = T::standard_normal(&mut self.rng) * self.noise_std;
            (self.y + eps).max(T::zero())
        } else {
            self.y
        }
    }
}

/// Continuous-time shadow of the step response from rest:
/// y(t) = c′·(1 − e^(−a·t)).
pub fn open_loop_response<T: Real>(a: T, c_prime: T, t: T) -> Result<T, PlantError> {
    if !a.is_finite() || a <= T::zero() {
        return Err(PlantError::BadTimeConstant);
    }
    if !c_prime.is_finite() || !t.is_finite() || t < T::zero() {
        return Err(PlantError::BadTrajectory);
    }
    Ok(c_prime * (T::one() - (-a * t).exp()))
}

/// Fit g(x) = A·e^(−k·x) to (beta, converged-KL) samples by least squares on
/// ln(KL). Requires at least two distinct beta values and strictly positive
/// KL samples; a non-negative fitted slope is rejected because the map must
/// be monotone decreasing.
pub fn fit_exp_map<T: Real>(samples: &[(T, T)]) -> Result<ExpMap<T>, PlantError> {
    if samples.len() < 2 {
        return Err(PlantError::TooFewSamples(2));
    }
    let n = T::from_f64c(samples.len() as f64);
    let mut mean_x = T::zero();
    let mut mean_l = T::zero();
    for &(x, y) in samples {
        if !x.is_finite() || !y.is_finite() || y <= T::zero() {
            return Err(PlantError::NonpositiveSample);
        }
        mean_x = mean_x + x;
        mean_l = mean_l + y.ln();
    }
    mean_x = mean_x / n;
    mean_l = mean_l / n;
    let mut sxx = T::zero();
    let mut sxl = T::zero();
    for &(x, y) in samples {
        let dx = x - mean_x;
        sxx = sxx + dx * dx;
        sxl = sxl + dx * (y.ln() - mean_l);
    }
    if sxx == T::zero() {
        return Err(PlantError::DegenerateInputs);
    }
    let slope = sxl / sxx;
    if slope >= T::zero() {
        return Err(PlantError::NotDecreasing);
    }
    let rate = -slope;
    let amplitude = (mean_l + rate * mean_x).exp();
    ExpMap::new(amplitude, rate)
}

/// Recover the lag parameter `a` from an open-loop rise `(step, kl)` toward
/// the asymptote `c_prime`: linear interpolation locates the first crossing
/// of 0.632·c′ at t*, and a = 1/t*.
pub fn estimate_a<T: Real>(trajectory: &[(T, T)], c_prime: T) -> Result<T, PlantError> {
    if trajectory.len() < 2 {
        return Err(PlantError::TooFewSamples(2));
    }
    if !c_prime.is_finite() || c_prime <= T::zero() {
        return Err(PlantError::BadTrajectory);
    }
    for w in trajectory.windows(2) {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        if !(t0.is_finite() && t1.is_finite() && y0.is_finite() && y1.is_finite()) || t1 <= t0 {
            return Err(PlantError::BadTrajectory);
        }
    }
    let target = T::from_f64c(0.632) * c_prime;
    if trajectory[0].1 >= target {
        return Err(PlantError::InsufficientRise); // crossing not bracketed
    }
    for w in trajectory.windows(2) {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        if y1 >= target {
            let t_star = t0 + (target - y0) * (t1 - t0) / (y1 - y0);
            if !t_star.is_finite() || t_star <= T::zero() {
                return Err(PlantError::InsufficientRise);
            }
            return Ok(T::one() / t_star);
        }
    }
    Err(PlantError::InsufficientRise)
}

/// Catalog of identified plants from the datasets studied in the reference
/// experiments.
pub mod presets {
    use super::ExpMap;
    use crate::num::Real;

    /// Identified plant parameters: lag `a`, static map `g`, and the map's
    /// steepest slope magnitude at the operating region (used as the default
    /// `g'` in stability analysis).
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct PresetParams<T> {
        pub a: T,
        pub g: ExpMap<T>,
        pub g_prime_eq: T,
    }

    /// MNIST fit: g(x) = 26.38·e^(−0.0476·x), time constant 5000 steps,
    /// |g′| bounded by 1.26.
    pub fn mnist<T: Real>() -> PresetParams<T> {
        PresetParams {
            a: T::from_f64c(1.0 / 5000.0),
            g: ExpMap {
                amplitude: T::from_f64c(26.38),
                rate: T::from_f64c(0.0476),
            },
            g_prime_eq: T::from_f64c(-1.26),
        }
    }

    /// dSprites fit: g′(x) = −3.2·e^(−0.121·x) (so A = 3.2/0.121), time
    /// constant 2500 steps, |g′| bounded by 3.2.
    pub fn dsprites<T: Real>() -> PresetParams<T> {
        PresetParams {
            a: T::from_f64c(1.0 / 2500.0),
            g: ExpMap {
                amplitude: T::from_f64c(3.2 / 0.121),
                rate: T::from_f64c(0.121),
            },
            g_prime_eq: T::from_f64c(-3.2),
        }
    }
}
