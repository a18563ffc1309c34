//! Closed-loop stability analysis of the PI-controlled KL plant.
//!
//! The loop (incremental PI controller + first-order plant, measurement
//! delayed one step) linearizes around the equilibrium
//! (β*, C, C) with β* = g⁻¹(C) to a 3×3 system
//!
//! ```text
//!     | K1  K2  K3 |        K1 = 1            K2 = kp/4 + ki
//! A = | K4  K5   0 |        K3 = -kp/4        K4 = a·g'/(1+a)
//!     |  0   1   0 |        K5 = 1/(1+a)
//! ```
//!
//! with characteristic polynomial λ³ − (K1+K5)λ² + (K1K5 − K2K4)λ − K3K4.
//! Discrete-time stability (all |λ| < 1) is decided two independent ways:
//!
//! 1. **Routh route** — the bilinear substitution ξ = (λ−1)/(λ+1) maps the
//!    unit disk to the left half plane; the complete Routh–Hurwitz set for the
//!    transformed cubic b3ξ³ + b2ξ² + b1ξ + b0 is
//!    {b3, b2, b1, b0 > 0 and b1·b2 > b0·b3}.
//! 2. **Spectral route** — eigenvalues from a closed-form cubic solve with
//!    Newton polishing; stable iff the spectral radius is below one.
//!
//! Both verdicts are reported along with which of three closed-form gain
//! conditions fail (the practical tuning guide):
//!
//! * (i)   kp + ki < −4(1+a)/(a·g')
//! * (ii)  −0.5·kp²·a·g'² − 2·(kp − 4·ki·(1+a))·g' + 8·(1+a) > 0
//! * (iii) kp > 0 and ki > 0
//!
//! For a > 0 and g' < 0 the three conditions are jointly equivalent to the
//! full Routh set ((iii) forces b0, b3 > 0; (i) ⇔ b2 > 0; (ii) ⇔ the product
//! condition and implies b1 > 0).

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::control::Gains;
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StabilityError {
    #[error("analysis assumption unmet: {0}")]
    AssumptionUnmet(&'static str),
    #[error("gains must be finite")]
    NonFiniteGains,
    #[error("parameters overflow the analysis (non-finite intermediate value)")]
    NonFiniteAnalysis,
    #[error("grid needs at least 2 points per axis and finite, ordered ranges")]
    BadGrid,
}

/// Linearization of the closed loop at the operating point, together with the
/// raw parameters it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearizedSystem<T> {
    pub kp: T,
    pub ki: T,
    pub a: T,
    pub g_prime_eq: T,
    pub k1: T,
    pub k2: T,
    pub k3: T,
    pub k4: T,
    pub k5: T,
}

impl<T: Real> LinearizedSystem<T> {
    fn new_unchecked(kp: T, ki: T, a: T, g_prime_eq: T) -> Self {
        let four = T::from_f64c(4.0);
        let one = T::one();
        LinearizedSystem {
            kp,
            ki,
            a,
            g_prime_eq,
            k1: one,
            k2: kp / four + ki,
            k3: -kp / four,
            k4: a * g_prime_eq / (one + a),
            k5: one / (one + a),
        }
    }

    /// State matrix in (β, ŷ delayed chain) coordinates.
    pub fn jacobian(&self) -> [[T; 3]; 3] {
        let z = T::zero();
        [
            [self.k1, self.k2, self.k3],
            [self.k4, self.k5, z],
            [z, T::one(), z],
        ]
    }
}

/// Linearize the loop at the equilibrium for slope `g_prime_eq` = g'(β*).
///
/// The closed-form analysis only covers kp, ki, a > 0 and g' < 0; anything
/// else is rejected here (use [`check_stability`] for gain sweeps that may
/// wander out of the positive quadrant — it reports those as violations of
/// condition (iii) instead of erroring).
pub fn linearize<T: Real>(
    gains: &Gains<T>,
    a: T,
    g_prime_eq: T,
) -> Result<LinearizedSystem<T>, StabilityError> {
    if !(gains.kp.is_finite() && gains.ki.is_finite()) {
        return Err(StabilityError::NonFiniteGains);
    }
    if gains.kp <= T::zero() || gains.ki <= T::zero() {
        return Err(StabilityError::AssumptionUnmet("kp > 0 and ki > 0"));
    }
    check_plant_hypotheses(a, g_prime_eq)?;
    Ok(LinearizedSystem::new_unchecked(gains.kp, gains.ki, a, g_prime_eq))
}

fn check_plant_hypotheses<T: Real>(a: T, g_prime_eq: T) -> Result<(), StabilityError> {
    if !a.is_finite() || a <= T::zero() {
        return Err(StabilityError::AssumptionUnmet("a > 0"));
    }
    if !g_prime_eq.is_finite() || g_prime_eq >= T::zero() {
        return Err(StabilityError::AssumptionUnmet("g'(x*) < 0"));
    }
    Ok(())
}

/// Monic characteristic polynomial coefficients `[1, c2, c1, c0]` of the
/// Jacobian: λ³ − (K1+K5)λ² + (K1K5 − K2K4)λ − K3K4.
pub fn characteristic_coeffs<T: Real>(sys: &LinearizedSystem<T>) -> [T; 4] {
    [
        T::one(),
        -(sys.k1 + sys.k5),
        sys.k1 * sys.k5 - sys.k2 * sys.k4,
        -sys.k3 * sys.k4,
    ]
}

/// Coefficients `[b3, b2, b1, b0]` of the bilinear-transformed cubic.
///
/// Computed two ways — directly in the K-entries and in substituted
/// closed form — and cross-asserted to 1e-12 relative; algebraically they are
/// the same polynomial, so a mismatch is a defect, not a data condition.
pub fn routh_coeffs<T: Real>(sys: &LinearizedSystem<T>) -> [T; 4] {
    let (k1, k2, k3, k4, k5) = (sys.k1, sys.k2, sys.k3, sys.k4, sys.k5);
    let one = T::one();
    let three = T::from_f64c(3.0);
    let b3 = k1 + k5 + k1 * k5 - k2 * k4 + k3 * k4 + one;
    let b2 = k1 + k5 - k1 * k5 + k2 * k4 - three * k3 * k4 + three;
    let b1 = -k1 - k5 - k1 * k5 + k2 * k4 + three * k3 * k4 + three;
    let b0 = -k1 - k5 + k1 * k5 - k2 * k4 - k3 * k4 + one;

    let (kp, ki, a, gp) = (sys.kp, sys.ki, sys.a, sys.g_prime_eq);
    let two = T::from_f64c(2.0);
    let four = T::from_f64c(4.0);
    let eight = T::from_f64c(8.0);
    let opa = one + a;
    let b3s = (four * a + eight - (kp + two * ki) * a * gp) / (two * opa);
    let b2s = (four * opa + (kp + ki) * a * gp) / opa;
    let b1s = a * (four + gp * (two * ki - kp)) / (two * opa);
    let b0s = -ki * a * gp / opa;

    let tol = T::from_f64c(1e-12);
    for (direct, substituted) in [(b3, b3s), (b2, b2s), (b1, b1s), (b0, b0s)] {
        if !(direct.is_finite() && substituted.is_finite()) {
            continue; // overflow is reported by the caller, not here
        }
        let scale = T::one().max(direct.abs()).max(substituted.abs());
        assert!(
            (direct - substituted).abs() <= tol * scale,
            "bilinear coefficient forms diverged: {direct} vs {substituted}"
        );
    }
    [b3, b2, b1, b0]
}

/// The three closed-form gain conditions reported by [`check_stability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// (i) kp + ki < −4(1+a)/(a·g')
    GainSumBound,
    /// (ii) −0.5·kp²·a·g'² − 2(kp − 4ki(1+a))·g' + 8(1+a) > 0
    DampingMargin,
    /// (iii) kp > 0 and ki > 0
    PositiveGains,
}

impl Condition {
    /// Compact tag used in region CSV cells.
    pub fn numeral(self) -> &'static str {
        match self {
            Condition::GainSumBound => "i",
            Condition::DampingMargin => "ii",
            Condition::PositiveGains => "iii",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Condition::GainSumBound => "kp + ki < -4(1+a)/(a g')",
            Condition::DampingMargin => {
                "-0.5 kp^2 a g'^2 - 2(kp - 4 ki (1+a)) g' + 8(1+a) > 0"
            }
            Condition::PositiveGains => "kp > 0 and ki > 0",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}) {}", self.numeral(), self.describe())
    }
}

/// Verdict of both analysis routes at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport<T> {
    /// Bilinear cubic coefficients [b3, b2, b1, b0].
    pub b: [T; 4],
    /// Complete Routh–Hurwitz verdict on the transformed cubic.
    pub routh_stable: bool,
    /// Eigenvalues of the Jacobian, sorted by (re, im).
    pub eigenvalues: [Complex<T>; 3],
    pub spectral_radius: T,
    /// Spectral-radius verdict (ρ < 1).
    pub eig_stable: bool,
    /// The two routes agree (expected everywhere except within numerical
    /// width of the stability boundary).
    pub verdicts_agree: bool,
    /// ρ within 1e-6 of the unit circle: the point sits on the boundary and
    /// binary verdicts are not meaningful.
    pub marginal: bool,
    /// Closed-form gain conditions that fail at this point.
    pub violated: Vec<Condition>,
}

/// Tolerance around |λ| = 1 inside which a verdict is flagged marginal.
pub const MARGINAL_RADIUS_TOL: f64 = 1e-6;

/// Analyze one (kp, ki, a, g') point.
///
/// `a` and `g'` are model hypotheses: `a ≤ 0` or `g' ≥ 0` is an error, not an
/// instability. Non-positive gains are a legitimate query and come back as a
/// violation of condition (iii).
pub fn check_stability<T: Real>(
    kp: T,
    ki: T,
    a: T,
    g_prime_eq: T,
) -> Result<StabilityReport<T>, StabilityError> {
    if !(kp.is_finite() && ki.is_finite()) {
        return Err(StabilityError::NonFiniteGains);
    }
    check_plant_hypotheses(a, g_prime_eq)?;
    let sys = LinearizedSystem::new_unchecked(kp, ki, a, g_prime_eq);

    let b = routh_coeffs(&sys);
    let zero = T::zero();
    let routh_stable =
        b[0] > zero && b[1] > zero && b[2] > zero && b[3] > zero && b[2] * b[1] > b[3] * b[0];

    let [_, c2, c1, c0] = characteristic_coeffs(&sys);
    if !(b.iter().all(|v| v.is_finite()) && c2.is_finite() && c1.is_finite() && c0.is_finite()) {
        return Err(StabilityError::NonFiniteAnalysis);
    }
    let eigenvalues = cubic_roots(c2, c1, c0);
    let spectral_radius = eigenvalues
        .iter()
        .map(|z| z.norm())
        .fold(zero, |acc, r| acc.max(r));
    let eig_stable = spectral_radius < T::one();
    let marginal = (spectral_radius - T::one()).abs() < T::from_f64c(MARGINAL_RADIUS_TOL);

    let mut violated = Vec::new();
    let one = T::one();
    let two = T::from_f64c(2.0);
    let four = T::from_f64c(4.0);
    let eight = T::from_f64c(8.0);
    let opa = one + a;
    if !(kp + ki < -four * opa / (a * g_prime_eq)) {
        violated.push(Condition::GainSumBound);
    }
    let margin = -T::from_f64c(0.5) * kp * kp * a * g_prime_eq * g_prime_eq
        - two * (kp - four * ki * opa) * g_prime_eq
        + eight * opa;
    if !(margin > zero) {
        violated.push(Condition::DampingMargin);
    }
    if !(kp > zero && ki > zero) {
        violated.push(Condition::PositiveGains);
    }

    Ok(StabilityReport {
        b,
        routh_stable,
        eigenvalues,
        spectral_radius,
        eig_stable,
        verdicts_agree: routh_stable == eig_stable,
        marginal,
        violated,
    })
}

/// One cell of a gain-plane sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRow<T> {
    pub kp: T,
    pub ki: T,
    pub routh_stable: bool,
    pub eig_stable: bool,
    pub spectral_radius: T,
    pub violated: Vec<Condition>,
}

/// Sweep a uniform (kp, ki) grid at fixed plant parameters. Cells that
/// violate a gain condition are marked, never dropped.
pub fn stability_region<T: Real>(
    a: T,
    g_prime_eq: T,
    kp_range: (T, T),
    ki_range: (T, T),
    n_kp: usize,
    n_ki: usize,
) -> Result<Vec<RegionRow<T>>, StabilityError> {
    check_plant_hypotheses(a, g_prime_eq)?;
    for &(lo, hi) in [&kp_range, &ki_range] {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(StabilityError::BadGrid);
        }
    }
    if n_kp < 2 || n_ki < 2 {
        return Err(StabilityError::BadGrid);
    }
    let mut rows = Vec::with_capacity(n_kp * n_ki);
    for i in 0..n_kp {
        let fi = T::from_f64c(i as f64) / T::from_f64c((n_kp - 1) as f64);
        let kp = kp_range.0 + fi * (kp_range.1 - kp_range.0);
        for j in 0..n_ki {
            let fj = T::from_f64c(j as f64) / T::from_f64c((n_ki - 1) as f64);
            let ki = ki_range.0 + fj * (ki_range.1 - ki_range.0);
            let rep = check_stability(kp, ki, a, g_prime_eq)?;
            rows.push(RegionRow {
                kp,
                ki,
                routh_stable: rep.routh_stable,
                eig_stable: rep.eig_stable,
                spectral_radius: rep.spectral_radius,
                violated: rep.violated,
            });
        }
    }
    Ok(rows)
}

/// Roots of the monic cubic λ³ + c2λ² + c1λ + c0 (real coefficients),
/// closed-form initial values polished by Newton iterations on the original
/// polynomial; output sorted by (re, im).
pub fn cubic_roots<T: Real>(c2: T, c1: T, c0: T) -> [Complex<T>; 3] {
    let zero = T::zero();
    let half = T::from_f64c(0.5);
    let third = T::one() / T::from_f64c(3.0);
    let two = T::from_f64c(2.0);
    let three = T::from_f64c(3.0);

    // Depressed cubic u³ + p·u + q via λ = u − c2/3.
    let shift = c2 * third;
    let p = c1 - c2 * c2 * third;
    let q = two * c2 * c2 * c2 / T::from_f64c(27.0) - c2 * c1 * third + c0;

    let mut roots: [Complex<T>; 3];
    let disc = (q * half) * (q * half) + (p * third) * (p * third) * (p * third);
    if p == zero && q == zero {
        let r = Complex::new(-shift, zero);
        roots = [r, r, r];
    } else if disc > zero {
        // One real root; the stable Cardano form avoids cancellation.
        let d = disc.sqrt();
        let r = -q * half;
        let t1 = if r >= zero { (r + d).cbrt() } else { (r - d).cbrt() };
        let t2 = if t1 == zero { zero } else { -p * third / t1 };
        let real = t1 + t2 - shift;
        let (z1, z2) = deflate_quadratic(c2, c1, real);
        roots = [Complex::new(real, zero), z1, z2];
    } else {
        // Three real roots: trigonometric form.
        let m = two * (-p * third).sqrt();
        let arg = (three * q / (p * m)).max(-T::one()).min(T::one());
        let phi = arg.acos();
        let tau = T::from_f64c(2.0 * std::f64::consts::PI);
        let mut rs = [zero; 3];
        for (k, r) in rs.iter_mut().enumerate() {
            *r = m * ((phi - tau * T::from_f64c(k as f64)) * third).cos() - shift;
        }
        roots = [
            Complex::new(rs[0], zero),
            Complex::new(rs[1], zero),
            Complex::new(rs[2], zero),
        ];
    }

    for z in &mut roots {
        *z = polish_root(*z, c2, c1, c0);
    }
    roots.sort_unstable_by(|lhs, rhs| {
        (lhs.re, lhs.im)
            .partial_cmp(&(rhs.re, rhs.im))
            .expect("cubic roots are finite")
    });
    roots
}

/// Divide out a real root: λ³ + c2λ² + c1λ + c0 = (λ − r)(λ² + uλ + v).
fn deflate_quadratic<T: Real>(c2: T, c1: T, r: T) -> (Complex<T>, Complex<T>) {
    let zero = T::zero();
    let half = T::from_f64c(0.5);
    let four = T::from_f64c(4.0);
    let u = c2 + r;
    let v = c1 + r * u;
    let disc = u * u - four * v;
    if disc >= zero {
        let s = disc.sqrt();
        // classic stable quadratic: avoid subtracting nearly equal numbers
        let qq = -(u + u.signum() * s) * half;
        let (r1, r2) = if qq == zero { (-u * half, -u * half) } else { (qq, v / qq) };
        (Complex::new(r1, zero), Complex::new(r2, zero))
    } else {
        let re = -u * half;
        let im = (-disc).sqrt() * half;
        (Complex::new(re, im), Complex::new(re, -im))
    }
}

fn polish_root<T: Real>(z0: Complex<T>, c2: T, c1: T, c0: T) -> Complex<T> {
    let c2 = Complex::new(c2, T::zero());
    let c1 = Complex::new(c1, T::zero());
    let c0 = Complex::new(c0, T::zero());
    let three = Complex::new(T::from_f64c(3.0), T::zero());
    let two = Complex::new(T::from_f64c(2.0), T::zero());
    let mut z = z0;
    for _ in 0..3 {
        let f = ((z + c2) * z + c1) * z + c0;
        let df = (three * z + two * c2) * z + c1;
        if df.norm_sqr() <= T::epsilon() * T::epsilon() {
            break;
        }
        let step = f / df;
        z = z - step;
        if step.norm_sqr() <= (T::epsilon() * z.norm_sqr()).max(T::min_positive_value()) {
            break;
        }
    }
    z
}
