//! Closed-form, trained and perturbed generators for linear-manifold data.
//!
//! The data model is `x₀ = A z₀`, `z₀ ~ N(0, I_k)`, and the reverse drift is
//! linear in the state (optionally with the step index appended). Under this
//! model the posterior-mean regression has closed-form minimizers:
//!
//! * two states (`T = 1`): `θ* = √(1−β) A Aᵀ`;
//! * `T + 1` states: `θ* = [ν A Aᵀ + γ I, 0]`, or `[ν̄ A Aᵀ, 0]` when the noise
//!   seen by the model input is independent of the noise in the regression
//!   target.
//!
//! [`population_optimum_multi_state`] solves the population normal equations
//! directly (joint expectation over `t`), which is what stochastic training
//! converges to.

use nalgebra::{DMatrix, DVector};

use crate::diffusion::{forward_marginal, posterior_coefficients, posterior_mean};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::manifold::LinearManifold;
use crate::mask::InpaintMask;
use crate::model::{GeneratorModel, ModelKind};
use crate::noise::{Gaussian, NoiseSource, NoiseStream};
use crate::schedule::DiffusionSchedule;

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// `θ* = √(1−β) A Aᵀ`.
pub fn closed_form_two_state(manifold: &LinearManifold, beta: f64) -> Result<GeneratorModel> {
    let schedule = DiffusionSchedule::constant(beta, 1)?;
    let theta = manifold.projector() * (1.0 - beta).sqrt();
    GeneratorModel::new(
        theta,
        ModelKind::ExactTwoState,
        schedule,
        manifold.intrinsic_dim(),
    )
}

/// Scalars of the multi-state closed form, each built from finite averages
/// over `t ∈ {1..T}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiStateCoefficients {
    pub nu: f64,
    pub gamma: f64,
    pub nu_bar: f64,
}

pub fn multi_state_coefficients(schedule: &DiffusionSchedule) -> Result<MultiStateCoefficients> {
    let steps = schedule.steps();
    if steps == 0 {
        return Err(Error::ScheduleMismatch("schedule has no steps".into()));
    }
    for t in 1..=steps {
        if schedule.alpha_bar(t) >= 1.0 {
            return Err(Error::DegenerateVariance { t });
        }
    }
    let mean = |f: &dyn Fn(usize) -> f64| (1..=steps).map(f).sum::<f64>() / steps as f64;
    let ab = |t: usize| schedule.alpha_bar(t);
    let sqrt_a = |t: usize| schedule.alpha(t).sqrt();

    let inv_var = mean(&|t| 1.0 / (1.0 - ab(t)));
    let signal = mean(&|t| ab(t - 1) * sqrt_a(t));
    let snr = mean(&|t| ab(t) / (1.0 - ab(t)));
    let mean_sqrt_a = mean(&|t| sqrt_a(t));
    let carry = mean(&|t| sqrt_a(t) * (1.0 - ab(t - 1)));

    Ok(MultiStateCoefficients {
        nu: inv_var * signal - snr * mean_sqrt_a,
        gamma: inv_var * carry,
        nu_bar: inv_var * signal - snr * signal,
    })
}

/// Closed-form multi-state generator. The time column is exactly zero.
pub fn closed_form_multi_state(
    manifold: &LinearManifold,
    schedule: &DiffusionSchedule,
    iid_noise: bool,
) -> Result<GeneratorModel> {
    let c = multi_state_coefficients(schedule)?;
    let d = manifold.ambient_dim();
    let p = manifold.projector();
    let left = if iid_noise {
        p * c.nu_bar
    } else {
        p * c.nu + DMatrix::<f64>::identity(d, d) * c.gamma
    };
    GeneratorModel::new(
        left.insert_column(d, 0.0),
        ModelKind::ExactMultiState,
        schedule.clone(),
        manifold.intrinsic_dim(),
    )
}

/// Solves the two-state population normal equations
/// `θ E[x₁x₁ᵀ] = E[x₀x₁ᵀ]` with `E[x₁x₁ᵀ] = (1−β)AAᵀ + βI`, `E[x₀x₁ᵀ] = √(1−β)AAᵀ`.
pub fn population_optimum_two_state(manifold: &LinearManifold, beta: f64) -> Result<DMatrix<f64>> {
    DiffusionSchedule::constant(beta, 1)?;
    let d = manifold.ambient_dim();
    let p = manifold.projector();
    let gram = &p * (1.0 - beta) + DMatrix::<f64>::identity(d, d) * beta;
    let cross = &p * (1.0 - beta).sqrt();
    solve_right(&gram, &cross)
}

/// Population posterior-mean loss `E‖x₀ − θx₁‖²` of a two-state linear model.
pub fn population_loss_two_state(
    theta: &DMatrix<f64>,
    manifold: &LinearManifold,
    beta: f64,
) -> f64 {
    let d = manifold.ambient_dim();
    let p = manifold.projector();
    let gram = &p * (1.0 - beta) + DMatrix::<f64>::identity(d, d) * beta;
    let cross = &p * (1.0 - beta).sqrt(); // E[x₀ x₁ᵀ]
    p.trace() - 2.0 * (theta * cross.transpose()).trace() + (theta * gram * theta.transpose()).trace()
}

/// Solves the multi-state population normal equations with the expectation
/// taken jointly over `(x₀, ε, t)`, for the input `[x_t; t]`.
///
/// With `iid_noise` the model input is built from a noise draw independent of
/// the one inside the regression target.
pub fn population_optimum_multi_state(
    manifold: &LinearManifold,
    schedule: &DiffusionSchedule,
    iid_noise: bool,
) -> Result<DMatrix<f64>> {
    let steps = schedule.steps();
    if steps == 0 {
        return Err(Error::ScheduleMismatch("schedule has no steps".into()));
    }
    let d = manifold.ambient_dim();
    let p = manifold.projector();
    let eye = DMatrix::<f64>::identity(d, d);
    let mut gram = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut cross = DMatrix::<f64>::zeros(d, d + 1);
    for t in 1..=steps {
        let ab = schedule.alpha_bar(t);
        let (c0, ct) = posterior_coefficients(t, schedule)?;
        // E[x_t x_tᵀ | t]
        let xx = &p * ab + &eye * (1.0 - ab);
        let mut block = gram.view_mut((0, 0), (d, d));
        block += &xx;
        gram[(d, d)] += (t * t) as f64;
        // E[μ̃_t x_tᵀ | t]; the ε–ε term only survives when the noises coincide
        let mut target_x = &p * (c0 * ab.sqrt() + ct * ab);
        if !iid_noise {
            target_x += &eye * (ct * (1.0 - ab));
        }
        let mut block = cross.view_mut((0, 0), (d, d));
        block += &target_x;
    }
    gram /= steps as f64;
    cross /= steps as f64;
    solve_right(&gram, &cross)
}

/// `X` with `X·gram = rhs` (gram symmetric positive definite).
fn solve_right(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::AssumptionViolated("normal equations are singular".into()))?;
    Ok(chol.solve(&rhs.transpose()).transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Regress the forward posterior mean `μ̃_t(x_t, x₀)`.
    PosteriorMean,
    /// Regress the injected noise `ε` with a linear `ε_θ`.
    NoisePrediction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub loss: LossKind,
    pub step_size: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::OutOfRange {
                what: "step size",
                value: self.step_size,
                range: "(0, inf)",
            });
        }
        if self.batch_size == 0 {
            return Err(Error::OutOfRange {
                what: "batch size",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        Ok(())
    }
}

/// Where training draws `x₀` from.
#[derive(Debug, Clone, Copy)]
pub enum TrainingData<'a> {
    Manifold(&'a LinearManifold),
    Samples(&'a [DVector<f64>]),
}

impl TrainingData<'_> {
    fn dim(&self) -> Result<usize> {
        match self {
            TrainingData::Manifold(m) => Ok(m.ambient_dim()),
            TrainingData::Samples(s) => s
                .first()
                .map(|x| x.len())
                .ok_or_else(|| Error::ShapeMismatch("no training samples".into())),
        }
    }

    fn intrinsic_dim(&self) -> usize {
        match self {
            TrainingData::Manifold(m) => m.intrinsic_dim(),
            TrainingData::Samples(_) => 0,
        }
    }

    fn draw(&self, rng: &mut NoiseStream) -> DVector<f64> {
        match self {
            TrainingData::Manifold(m) => {
                let z = rng.vector(m.intrinsic_dim());
                m.embed(&z)
            }
            TrainingData::Samples(s) => s[rng.uniform_index(s.len())].clone(),
        }
    }
}

/// A minibatch of regression pairs `(input, target)`.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
}

/// Draws one minibatch: `x₀ ~ data`, `ε ~ N(0, I)`, `t ~ U{1..T}`.
///
/// Inputs are `x_t` for one-step schedules and `[x_t; t]` otherwise.
pub fn draw_batch(
    data: &TrainingData<'_>,
    schedule: &DiffusionSchedule,
    loss: LossKind,
    batch_size: usize,
    rng: &mut NoiseStream,
) -> Result<TrainingBatch> {
    let d = data.dim()?;
    let steps = schedule.steps();
    let timed = steps > 1;
    let mut inputs = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let x0 = data.draw(rng);
        let eps = rng.vector(d);
        let t = 1 + rng.uniform_index(steps);
        let xt = forward_marginal(&x0, t, schedule, &eps)?;
        let target = match loss {
            LossKind::PosteriorMean => posterior_mean(&xt, &x0, t, schedule)?,
            LossKind::NoisePrediction => eps,
        };
        let input = if timed {
            let mut u = xt.insert_row(d, 0.0);
            u[d] = t as f64;
            u
        } else {
            xt
        };
        inputs.push(input);
        targets.push(target);
    }
    Ok(TrainingBatch { inputs, targets })
}

/// Mean squared residual `(1/n) Σ ‖target − θ·input‖²` and its gradient.
pub fn batch_loss_and_grad(theta: &DMatrix<f64>, batch: &TrainingBatch) -> (f64, DMatrix<f64>) {
    let n = batch.inputs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(theta.nrows(), theta.ncols());
    for (u, y) in batch.inputs.iter().zip(&batch.targets) {
        let r = y - theta * u;
        loss += r.norm_squared();
        grad.ger(-2.0, &r, u, 1.0);
    }
    (loss / n, grad / n)
}

/// Result of [`train_ddpm`].
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Drift model `μ_θ`; for noise prediction this is the induced posterior mean.
    pub model: GeneratorModel,
    /// Raw `ε_θ` weights when trained with [`LossKind::NoisePrediction`].
    pub noise_weights: Option<DMatrix<f64>>,
    pub final_loss: f64,
}

/// Minibatch gradient descent on the linear DDPM objective, from zero weights.
///
/// Noise-prediction training is limited to one-step schedules, where the
/// induced drift `(1/√α)(x − β/√(1−ᾱ) ε_θ(x))` is again linear in `x`.
pub fn train_ddpm(
    data: TrainingData<'_>,
    schedule: &DiffusionSchedule,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    config.validate()?;
    let d = data.dim()?;
    let steps = schedule.steps();
    if steps == 0 {
        return Err(Error::ScheduleMismatch("schedule has no steps".into()));
    }
    if config.loss == LossKind::NoisePrediction && steps != 1 {
        return Err(Error::ScheduleMismatch(
            "noise-prediction training supports the two-state model only".into(),
        ));
    }
    let cols = if steps > 1 { d + 1 } else { d };
    let mut rng = NoiseSource::new(config.seed, 0).stream();
    let mut theta = DMatrix::<f64>::zeros(d, cols);
    let mut final_loss = f64::NAN;
    for iteration in 0..config.iterations {
        let batch = draw_batch(&data, schedule, config.loss, config.batch_size, &mut rng)?;
        let (loss, grad) = batch_loss_and_grad(&theta, &batch);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { iteration, loss });
        }
        theta -= grad * config.step_size;
        final_loss = loss;
    }
    let (drift, noise_weights) = match config.loss {
        LossKind::PosteriorMean => (theta, None),
        LossKind::NoisePrediction => (noise_to_drift(&theta, schedule), Some(theta)),
    };
    Ok(TrainingOutcome {
        model: GeneratorModel::new(
            drift,
            ModelKind::Trained,
            schedule.clone(),
            data.intrinsic_dim(),
        )?,
        noise_weights,
        final_loss,
    })
}

/// Drift `(1/√α₁)(I − β₁/√(1−ᾱ₁)·W)` induced by a linear noise predictor at `t = 1`.
pub fn noise_to_drift(w: &DMatrix<f64>, schedule: &DiffusionSchedule) -> DMatrix<f64> {
    let d = w.nrows();
    let a = schedule.alpha(1);
    let scale = schedule.beta(1) / (1.0 - schedule.alpha_bar(1)).sqrt();
    (DMatrix::<f64>::identity(d, d) - w * scale) / a.sqrt()
}

/// A δ-perturbed two-state model and its perturbed contraction factor.
#[derive(Debug, Clone)]
pub struct PerturbedGenerator {
    pub model: GeneratorModel,
    /// `‖(A Aᵀ + δ) D(m)‖`.
    pub lambda_hat_max: f64,
}

/// `θ̂ = θ* + δ·√(1−β)`, rejected unless `‖(A Aᵀ + δ) D(m)‖ < 1`.
pub fn perturb_generator(
    exact: &GeneratorModel,
    delta: &DMatrix<f64>,
    manifold: &LinearManifold,
    mask: &InpaintMask,
) -> Result<PerturbedGenerator> {
    if exact.is_time_conditioned() || exact.schedule().steps() != 1 {
        return Err(Error::ShapeMismatch(
            "perturbation needs a two-state model".into(),
        ));
    }
    let d = exact.dim();
    if delta.shape() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "delta must be {d} x {d}, got {} x {}",
            delta.nrows(),
            delta.ncols()
        )));
    }
    mask.check_len(d)?;
    let beta = exact.schedule().beta(1);
    let lambda_hat_max = spectral_norm(&((manifold.projector() + delta) * mask.diag()));
    if lambda_hat_max >= 1.0 {
        return Err(Error::AssumptionViolated(format!(
            "perturbed lambda_max = {lambda_hat_max} >= 1"
        )));
    }
    let theta = exact.theta() + delta * (1.0 - beta).sqrt();
    Ok(PerturbedGenerator {
        model: GeneratorModel::new(
            theta,
            ModelKind::Perturbed,
            exact.schedule().clone(),
            exact.intrinsic_dim(),
        )?,
        lambda_hat_max,
    })
}
