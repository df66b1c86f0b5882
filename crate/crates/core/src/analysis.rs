//! Bounds, rate fits, oracles and statistical checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{mat_pow, spectral_norm};
use crate::manifold::LinearManifold;
use crate::mask::InpaintMask;
use crate::samples::SampleBatch;
use crate::schedule::DiffusionSchedule;

fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidRate { value: lambda });
    }
    Ok(())
}

/// Smallest `R ≥ 1` with `λ^R · ‖θ*‖·‖x₁ − x₀‖/(ε√(1−β)) ≤ 1`, i.e.
/// `⌈log(‖θ*‖·‖x₁ − x₀‖/(ε√(1−β))) / log(1/λ)⌉` clamped at 1.
pub fn resampling_budget(
    epsilon: f64,
    lambda_max: f64,
    theta_norm: f64,
    init_distance: f64,
    beta: f64,
) -> Result<usize> {
    check_rate(lambda_max)?;
    if !(epsilon > 0.0) {
        return Err(Error::OutOfRange {
            what: "epsilon",
            value: epsilon,
            range: "(0, inf)",
        });
    }
    let arg = theta_norm * init_distance / (epsilon * (1.0 - beta).sqrt());
    if arg <= 1.0 {
        return Ok(1);
    }
    let r = (arg.ln() / (1.0 / lambda_max).ln()).ceil();
    Ok((r as usize).max(1))
}

/// `ζ = ‖θ̂ − θ*‖·‖x₀‖ / ((1 − λ̂)√(1−β))`, the limiting error of a
/// δ-approximate model.
pub fn noisy_error_ceiling(
    theta_gap: f64,
    x0_norm: f64,
    lambda_hat_max: f64,
    beta: f64,
) -> Result<f64> {
    if !(lambda_hat_max >= 0.0 && lambda_hat_max < 1.0) {
        return Err(Error::InvalidRate {
            value: lambda_hat_max,
        });
    }
    Ok(theta_gap * x0_norm / ((1.0 - lambda_hat_max) * (1.0 - beta).sqrt()))
}

/// Ceiling over a support of radius `κ` (`‖x₀‖ ≤ κ`).
pub fn noisy_error_ceiling_sup(
    theta_gap: f64,
    kappa: f64,
    lambda_hat_max: f64,
    beta: f64,
) -> Result<f64> {
    noisy_error_ceiling(theta_gap, kappa, lambda_hat_max, beta)
}

/// Largest perturbation norm `δ = ε(1 − λ̂)/κ` admitted for an ε target,
/// taking the constant hidden in the order bound as 1.
pub fn admissible_delta(epsilon: f64, lambda_hat_max: f64, kappa: f64) -> Result<f64> {
    if !(lambda_hat_max >= 0.0 && lambda_hat_max < 1.0) {
        return Err(Error::InvalidRate {
            value: lambda_hat_max,
        });
    }
    if !(kappa > 0.0) {
        return Err(Error::OutOfRange {
            what: "kappa",
            value: kappa,
            range: "(0, inf)",
        });
    }
    Ok(epsilon * (1.0 - lambda_hat_max) / kappa)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub lambda_max: f64,
    pub lambda_hat_max: f64,
    pub r_required: usize,
    pub error_ceiling: f64,
}

pub const ORACLE_ITERATIONS: usize = 10_000;
pub const ORACLE_AGREEMENT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Solve,
    Iterate,
}

/// Fixed point of `x ↦ M x + f`, i.e. the solution of `(I − M) x = f`.
///
/// Solves directly, then checks against plain iteration when `‖M‖ ≤ 0.99`.
pub fn fixed_point_oracle(m: &DMatrix<f64>, forcing: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = check_contraction(m, forcing)?;
    let solved = fixed_point_with(m, forcing, OracleMode::Solve)?;
    if norm <= 0.99 {
        let iterated = fixed_point_with(m, forcing, OracleMode::Iterate)?;
        let gap = (&solved - &iterated).norm();
        if gap > ORACLE_AGREEMENT * (1.0 + solved.norm()) {
            return Err(Error::AssumptionViolated(format!(
                "solve and iterate disagree by {gap}"
            )));
        }
    }
    Ok(solved)
}

fn check_contraction(m: &DMatrix<f64>, forcing: &DVector<f64>) -> Result<f64> {
    if !m.is_square() || m.nrows() != forcing.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} x {} matrix with forcing of length {}",
            m.nrows(),
            m.ncols(),
            forcing.len()
        )));
    }
    let norm = spectral_norm(m);
    if norm >= 1.0 {
        return Err(Error::NotContractive { norm });
    }
    Ok(norm)
}

pub fn fixed_point_with(
    m: &DMatrix<f64>,
    forcing: &DVector<f64>,
    mode: OracleMode,
) -> Result<DVector<f64>> {
    check_contraction(m, forcing)?;
    let d = forcing.len();
    match mode {
        OracleMode::Solve => (DMatrix::<f64>::identity(d, d) - m)
            .lu()
            .solve(forcing)
            .ok_or_else(|| Error::AssumptionViolated("I - M is singular".into())),
        OracleMode::Iterate => {
            let mut x = forcing.clone();
            for _ in 0..ORACLE_ITERATIONS {
                x = m * &x + forcing;
            }
            Ok(x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub fitted_rate: f64,
    pub r_squared: f64,
    pub rounds_used: usize,
}

/// Least-squares slope of `ln e_r` against `r`; the rate is `exp(slope)`.
///
/// Entries below `100·ε_mach·e_0` are dropped first, since rounding noise
/// dominates there.
pub fn fit_rate(errors: &[f64]) -> Result<RateFit> {
    if let Some((index, &value)) = errors
        .iter()
        .enumerate()
        .find(|(_, &e)| !(e > 0.0) || !e.is_finite())
    {
        return Err(Error::NonPositiveError { index, value });
    }
    let floor = errors.first().copied().unwrap_or(0.0) * 100.0 * f64::EPSILON;
    let kept: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e >= floor)
        .map(|(i, &e)| (i as f64, e.ln()))
        .collect();
    if kept.len() < 3 {
        return Err(Error::TooFewPoints { n: kept.len() });
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    // a flat sequence is fit perfectly by a zero slope
    let r_squared = if syy <= f64::EPSILON * n {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        fitted_rate: slope.exp(),
        r_squared,
        rounds_used: kept.len(),
    })
}

/// `‖(I − A Aᵀ) x‖`.
pub fn manifold_residual(x: &DVector<f64>, manifold: &LinearManifold) -> Result<f64> {
    if x.len() != manifold.ambient_dim() {
        return Err(Error::ShapeMismatch(format!(
            "vector has dimension {}, manifold {}",
            x.len(),
            manifold.ambient_dim()
        )));
    }
    Ok(manifold.residual(x))
}

pub const MOMENT_MIN_SAMPLES: usize = 100;
pub const OFF_MANIFOLD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub n: usize,
    pub mean_norm: f64,
    pub mean_threshold: f64,
    pub cov_error: f64,
    pub cov_threshold: f64,
    pub max_residual: f64,
}

impl MomentReport {
    pub fn mean_ok(&self) -> bool {
        self.mean_norm <= self.mean_threshold
    }

    pub fn cov_ok(&self) -> bool {
        self.cov_error <= self.cov_threshold
    }

    pub fn passed(&self) -> bool {
        self.mean_ok() && self.cov_ok()
    }
}

/// Latent mean and covariance of `ẑ = Aᵀx` against `N(0, I_k)`.
///
/// Thresholds: `‖mean‖ ≤ 4/√n` and `‖cov − I‖_F ≤ 8k/√n`. Under the null,
/// `√n·mean` is standard normal in `k` dimensions and each covariance entry
/// has standard deviation at most `√2/√n`, so both bounds sit several
/// standard deviations out for small `k`.
pub fn latent_moment_test(samples: &SampleBatch, manifold: &LinearManifold) -> Result<MomentReport> {
    let n = samples.len();
    if n < MOMENT_MIN_SAMPLES {
        return Err(Error::TooFewPoints { n });
    }
    let k = manifold.intrinsic_dim();
    let mut max_residual: f64 = 0.0;
    let mut sum = DVector::<f64>::zeros(k);
    let mut second = DMatrix::<f64>::zeros(k, k);
    for (index, x) in samples.samples.iter().enumerate() {
        let residual = manifold_residual(x, manifold)?;
        if residual > OFF_MANIFOLD_TOL {
            return Err(Error::OffManifold { index, residual });
        }
        max_residual = max_residual.max(residual);
        let z = manifold.latent(x);
        sum += &z;
        second.ger(1.0, &z, &z, 1.0);
    }
    let nf = n as f64;
    let mean = sum / nf;
    let cov = second / nf - &mean * mean.transpose();
    Ok(MomentReport {
        n,
        mean_norm: mean.norm(),
        mean_threshold: 4.0 / nf.sqrt(),
        cov_error: (cov - DMatrix::<f64>::identity(k, k)).norm(),
        cov_threshold: 8.0 * k as f64 / nf.sqrt(),
        max_residual,
    })
}

/// Deterministic part of the slow-diffusion output, split by source.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowDiffusionTerms {
    /// `(1/√2)(A Aᵀ D(m))^{T−1} A Aᵀ x_T`.
    pub prior_term: DVector<f64>,
    /// `known_terms[t−1] = 2^{−t/(2T)} √ᾱ_t (A Aᵀ D(m))^{t−1} A Aᵀ D(1−m) x₀`, `t = 1..T−1`.
    pub known_terms: Vec<DVector<f64>>,
}

impl SlowDiffusionTerms {
    pub fn total(&self) -> DVector<f64> {
        self.known_terms
            .iter()
            .fold(self.prior_term.clone(), |acc, t| acc + t)
    }
}

/// Expansion of noiseless slow-diffusion inpainting under the sampling
/// alignment, with drift `2^{−1/(2T)} A Aᵀ` at every step.
pub fn slow_diffusion_expansion(
    manifold: &LinearManifold,
    mask: &InpaintMask,
    schedule: &DiffusionSchedule,
    x0: &DVector<f64>,
    x_init: &DVector<f64>,
) -> Result<SlowDiffusionTerms> {
    let steps = schedule.steps();
    if steps < 2 {
        return Err(Error::ScheduleMismatch("expansion needs T >= 2".into()));
    }
    let d = manifold.ambient_dim();
    mask.check_len(d)?;
    for v in [x0, x_init] {
        if v.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "vector has dimension {}, manifold {d}",
                v.len()
            )));
        }
    }
    let p = manifold.projector();
    let m = &p * mask.diag();
    let tf = steps as f64;
    let prior_term = mat_pow(&m, steps - 1) * &p * x_init / 2f64.sqrt();
    let forcing = &p * mask.complement_diag() * x0;
    let known_terms = (1..steps)
        .map(|t| {
            let w = 2f64.powf(-(t as f64) / (2.0 * tf)) * schedule.alpha_bar(t).sqrt();
            mat_pow(&m, t - 1) * &forcing * w
        })
        .collect();
    Ok(SlowDiffusionTerms {
        prior_term,
        known_terms,
    })
}
