//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per-step RDP is evaluated at integer orders `2..=256`, composed linearly over steps
//! and converted to `(ε, δ)`. [`calibrate_sigma`] inverts that map by bisection.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Integer Rényi orders tracked by the accountant.
pub const MIN_ORDER: u32 = 2;
pub const MAX_ORDER: u32 = 256;

const SIGMA_LO: f64 = 1e-2;
const SIGMA_HI: f64 = 1e4;
const SIGMA_REL_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("invalid privacy parameter: {0}")]
    InvalidParameter(String),
    #[error("epsilon {target} unreachable: even sigma = {sigma_max} gives epsilon {achieved}")]
    CalibrationFailed { target: f64, sigma_max: f64, achieved: f64 },
}

/// How the Gaussian noise is scaled relative to the averaged gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScaleMode {
    /// `ḡ + σ C z`: noise added to the mean at full sensitivity scale.
    UndividedMean,
    /// `ḡ + (σ C / B) z`: the sum-then-average form the accountant assumes.
    #[default]
    StandardMean,
}

impl NoiseScaleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseScaleMode::UndividedMean => "undivided_mean",
            NoiseScaleMode::StandardMean => "standard_mean",
        }
    }
}

impl FromStr for NoiseScaleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "undivided_mean" => Ok(NoiseScaleMode::UndividedMean),
            "standard_mean" => Ok(NoiseScaleMode::StandardMean),
            other => Err(format!("unknown noise scale mode `{other}`")),
        }
    }
}

impl fmt::Display for NoiseScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// RDP to `(ε, δ)` conversion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conversion {
    /// `ε = ρ(α) + ln(1/δ) / (α − 1)`.
    Classic,
    /// `ε = ρ(α) + ln((α − 1)/α) − (ln δ + ln α) / (α − 1)`, never looser than `Classic`.
    #[default]
    Improved,
}

/// Parameters of one private training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub sample_rate: f64,
    pub steps: u64,
    pub clip_norm: f64,
    /// Noise multiplier; zero until calibrated.
    pub sigma: f64,
    pub noise_scale_mode: NoiseScaleMode,
}

impl PrivacySpec {
    /// Builds a spec and fills `sigma` by calibration.
    pub fn calibrated(
        epsilon: f64,
        delta: f64,
        sample_rate: f64,
        steps: u64,
        clip_norm: f64,
        noise_scale_mode: NoiseScaleMode,
    ) -> Result<Self, PrivacyError> {
        if !(clip_norm > 0.0) {
            return Err(PrivacyError::InvalidParameter(format!("clip norm must be positive, got {clip_norm}")));
        }
        let cal = calibrate_sigma(epsilon, delta, sample_rate, steps)?;
        Ok(Self { epsilon, delta, sample_rate, steps, clip_norm, sigma: cal.sigma, noise_scale_mode })
    }
}

/// Logs a warning and returns false when `δ` is not below `1/n`.
pub fn check_delta(delta: f64, dataset_size: usize) -> bool {
    let ok = dataset_size == 0 || delta < 1.0 / dataset_size as f64;
    if !ok {
        log::warn!("delta {delta} is not below 1/n = {}", 1.0 / dataset_size as f64);
    }
    ok
}

/// Linear division of an `(ε, δ)` budget between the two stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetSplit {
    pub p1: f64,
    pub p2: f64,
    pub stage1: (f64, f64),
    pub stage2: (f64, f64),
}

/// Splits `(ε, δ)` as `(p1 ε, p1 δ)` and the remainder. `p1 = 0` leaves stage 1 free.
pub fn split_budget(epsilon: f64, delta: f64, p1: f64) -> Result<BudgetSplit, PrivacyError> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(PrivacyError::InvalidParameter(format!("p1 must lie in [0, 1], got {p1}")));
    }
    let eps1 = p1 * epsilon;
    let delta1 = p1 * delta;
    // Remainders by subtraction so the two stages add back to the total.
    Ok(BudgetSplit { p1, p2: 1.0 - p1, stage1: (eps1, delta1), stage2: (epsilon - eps1, delta - delta1) })
}

/// `ln(eˣ − 1)` for `x > 0`.
fn ln_expm1(x: f64) -> f64 {
    if x < 1.0 {
        x.exp_m1().ln()
    } else {
        x + (-(-x).exp()).ln_1p()
    }
}

/// `ln(1 + eˣ)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// RDP of one invocation of the Poisson-subsampled Gaussian mechanism at integer order `alpha`.
///
/// Evaluates `ln(Σ_j C(α,j) (1−q)^(α−j) q^j exp((j²−j)/(2σ²))) / (α−1)` in log space. The
/// `j = 0, 1` terms and the binomial mass are folded into a `ln(1 + ·)` so that the result
/// keeps full relative precision when it is tiny. Returns `+∞` if even the log-space sum
/// overflows.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> Result<f64, PrivacyError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(PrivacyError::InvalidParameter(format!("sample rate must lie in (0, 1], got {q}")));
    }
    if !(sigma > 0.0) {
        return Err(PrivacyError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if alpha < 2 {
        return Err(PrivacyError::InvalidParameter(format!("order must be at least 2, got {alpha}")));
    }
    let a = f64::from(alpha);
    if q == 1.0 {
        return Ok(a / (2.0 * sigma * sigma));
    }

    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_var = 2.0 * sigma * sigma;
    let mut ln_binom = a.ln(); // ln C(α, 1)
    let mut terms = Vec::with_capacity(alpha as usize - 1);
    for j in 2..=alpha {
        let jf = f64::from(j);
        ln_binom += ((a - jf + 1.0) / jf).ln();
        let exponent = (jf * jf - jf) / two_var;
        terms.push(ln_binom + (a - jf) * ln_1mq + jf * ln_q + ln_expm1(exponent));
    }
    let ln_excess = log_sum_exp(&terms);
    if !ln_excess.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(softplus(ln_excess) / (a - 1.0))
}

/// Per-step RDP at every tracked order.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub points: Vec<(u32, f64)>,
}

impl RdpCurve {
    pub fn subsampled_gaussian(q: f64, sigma: f64) -> Result<Self, PrivacyError> {
        let points = (MIN_ORDER..=MAX_ORDER)
            .map(|alpha| rdp_subsampled_gaussian(q, sigma, alpha).map(|r| (alpha, r)))
            .collect::<Result<_, _>>()?;
        Ok(Self { points })
    }

    pub fn epsilon(&self, steps: u64, delta: f64, conversion: Conversion) -> (f64, u32) {
        rdp_to_epsilon_with(&self.points, steps, delta, conversion)
    }
}

/// `min_α T·ρ(α) + ln(1/δ)/(α−1)` and the minimising order.
pub fn rdp_to_epsilon(rdp_per_alpha: &[(u32, f64)], steps: u64, delta: f64) -> (f64, u32) {
    rdp_to_epsilon_with(rdp_per_alpha, steps, delta, Conversion::Classic)
}

pub fn rdp_to_epsilon_with(rdp_per_alpha: &[(u32, f64)], steps: u64, delta: f64, conversion: Conversion) -> (f64, u32) {
    let t = steps as f64;
    let ln_delta = delta.ln();
    let mut best = (f64::INFINITY, rdp_per_alpha.first().map_or(MIN_ORDER, |p| p.0));
    for &(alpha, rdp) in rdp_per_alpha {
        let a = f64::from(alpha);
        let eps = match conversion {
            Conversion::Classic => t * rdp - ln_delta / (a - 1.0),
            Conversion::Improved => t * rdp + ((a - 1.0) / a).ln() - (ln_delta + a.ln()) / (a - 1.0),
        };
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    (best.0.max(0.0), best.1)
}

fn validate(epsilon: f64, delta: f64, q: f64, steps: u64) -> Result<(), PrivacyError> {
    let mut problems = Vec::new();
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        problems.push(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        problems.push(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !(q > 0.0 && q <= 1.0) {
        problems.push(format!("sample rate must lie in (0, 1], got {q}"));
    }
    if steps == 0 {
        problems.push("steps must be at least 1".to_string());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(PrivacyError::InvalidParameter(problems.join("; ")))
    }
}

/// `(ε, best α)` spent after `steps` invocations at noise multiplier `sigma`.
pub fn epsilon_spent(q: f64, sigma: f64, steps: u64, delta: f64, conversion: Conversion) -> Result<(f64, u32), PrivacyError> {
    validate(1.0, delta, q, steps.max(1))?;
    Ok(RdpCurve::subsampled_gaussian(q, sigma)?.epsilon(steps, delta, conversion))
}

/// Result of a noise calibration, including the forward check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    /// ε actually spent at `sigma`; never above the target.
    pub epsilon: f64,
    pub best_alpha: u32,
}

/// Smallest noise multiplier (to relative precision `1e-4`) meeting the `(ε, δ)` target
/// after `steps` steps at sample rate `q`, using the improved conversion.
pub fn calibrate_sigma(epsilon: f64, delta: f64, q: f64, steps: u64) -> Result<Calibration, PrivacyError> {
    calibrate_sigma_with(epsilon, delta, q, steps, Conversion::default())
}

pub fn calibrate_sigma_with(
    epsilon: f64,
    delta: f64,
    q: f64,
    steps: u64,
    conversion: Conversion,
) -> Result<Calibration, PrivacyError> {
    validate(epsilon, delta, q, steps)?;
    let forward = |sigma: f64| -> Result<(f64, u32), PrivacyError> {
        Ok(RdpCurve::subsampled_gaussian(q, sigma)?.epsilon(steps, delta, conversion))
    };

    let (eps_hi, alpha_hi) = forward(SIGMA_HI)?;
    if eps_hi > epsilon {
        return Err(PrivacyError::CalibrationFailed { target: epsilon, sigma_max: SIGMA_HI, achieved: eps_hi });
    }
    let (eps_lo, alpha_lo) = forward(SIGMA_LO)?;
    if eps_lo <= epsilon {
        return Ok(Calibration { sigma: SIGMA_LO, epsilon: eps_lo, best_alpha: alpha_lo });
    }

    // Invariant: forward(lo) > ε ≥ forward(hi).
    let (mut lo, mut hi) = (SIGMA_LO, SIGMA_HI);
    let mut at_hi = (eps_hi, alpha_hi);
    while hi - lo >= SIGMA_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        let (eps_mid, alpha_mid) = forward(mid)?;
        if eps_mid <= epsilon {
            hi = mid;
            at_hi = (eps_mid, alpha_mid);
        } else {
            lo = mid;
        }
    }
    Ok(Calibration { sigma: hi, epsilon: at_hi.0, best_alpha: at_hi.1 })
}
