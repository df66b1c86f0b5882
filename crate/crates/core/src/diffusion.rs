//! Forward and reverse Gaussian transition kernels.
//!
//! All kernels take their noise explicitly; nothing here draws randomness
//! except [`sample_reverse_chain`], which pulls from a caller-owned stream.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::GeneratorModel;
use crate::noise::Gaussian;
use crate::schedule::{AlignmentSchedule, DiffusionSchedule};

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::OutOfRange {
            what: "beta",
            value: beta,
            range: "(0, 1)",
        });
    }
    Ok(())
}

fn check_same_len(a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// One forward step `√(1−β)·x + √β·ε`.
pub fn forward_step(x_prev: &DVector<f64>, beta: f64, eps: &DVector<f64>) -> Result<DVector<f64>> {
    check_beta(beta)?;
    check_same_len(x_prev, eps)?;
    Ok(x_prev * (1.0 - beta).sqrt() + eps * beta.sqrt())
}

/// Jump straight to step `t`: `√ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.
pub fn forward_marginal(
    x0: &DVector<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    eps: &DVector<f64>,
) -> Result<DVector<f64>> {
    schedule.check_step(t)?;
    check_same_len(x0, eps)?;
    let ab = schedule.alpha_bar(t);
    Ok(x0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// Mean of `q(x_{t−1} | x_t, x₀)`.
pub fn posterior_mean(
    x_t: &DVector<f64>,
    x0: &DVector<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<DVector<f64>> {
    let (c0, ct) = posterior_coefficients(t, schedule)?;
    check_same_len(x_t, x0)?;
    Ok(x0 * c0 + x_t * ct)
}

/// Coefficients `(c₀, c_t)` of `μ̃_t = c₀·x₀ + c_t·x_t`.
pub fn posterior_coefficients(t: usize, schedule: &DiffusionSchedule) -> Result<(f64, f64)> {
    if t == 0 {
        return Err(Error::IndexOutOfRange {
            index: 0,
            max: schedule.steps(),
        });
    }
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    if ab >= 1.0 {
        return Err(Error::DegenerateVariance { t });
    }
    let c0 = ab_prev.sqrt() * schedule.beta(t) / (1.0 - ab);
    let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    Ok((c0, ct))
}

/// Aligned reverse step `ω_t·μ_θ(x_t, t) + ξ_t·√β_t·ε`.
///
/// With `ω_t = ξ_t = 1` this is the plain reverse kernel. Callers pass
/// `eps = 0` at `t = 1`.
pub fn reverse_step(
    model: &GeneratorModel,
    x_t: &DVector<f64>,
    t: usize,
    alignment: &AlignmentSchedule,
    eps: &DVector<f64>,
) -> Result<DVector<f64>> {
    let schedule = model.schedule();
    if t == 0 || t > schedule.steps() || t > alignment.steps() {
        return Err(Error::IndexOutOfRange {
            index: t,
            max: schedule.steps().min(alignment.steps()),
        });
    }
    if eps.len() != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "noise has dimension {}, model {}",
            eps.len(),
            model.dim()
        )));
    }
    let drift = model.drift(x_t, t)?;
    let disp = alignment.xi(t) * schedule.beta(t).sqrt();
    Ok(drift * alignment.omega(t) + eps * disp)
}

/// Runs the reverse chain from `x_T` down to `x₀`, drawing fresh noise for
/// every step except the last.
pub fn sample_reverse_chain<G: Gaussian + ?Sized>(
    model: &GeneratorModel,
    alignment: &AlignmentSchedule,
    x_t: DVector<f64>,
    noise: &mut G,
) -> Result<DVector<f64>> {
    let steps = model.schedule().steps();
    alignment.check_steps(steps)?;
    let d = model.dim();
    let mut x = x_t;
    for t in (1..=steps).rev() {
        let eps = if t > 1 {
            noise.vector(d)
        } else {
            DVector::zeros(d)
        };
        x = reverse_step(model, &x, t, alignment, &eps)?;
    }
    Ok(x)
}
