//! Self-check suite behind `verify`. Failures are report rows, not errors.

use nalgebra::DVector;

use super::config::{DeltaSpec, ExperimentConfig, ManifoldSpec, ScheduleSpec};
use super::output::{float, write_text, Table};
use super::{run_generate, run_inpainting, RunError, CONFIG_SIDECAR, INIT_STREAM};
use crate::analysis::{fixed_point_oracle, resampling_budget, slow_diffusion_expansion};
use crate::error::{Error, Result};
use crate::generator::{
    closed_form_multi_state, closed_form_two_state, perturb_generator, train_ddpm, TrainingConfig,
    TrainingData,
};
use crate::inpainting::{
    repaint_plus_two_state, resample_two_state, slow_diffusion_inpaint, Method, ResampleNoise,
};
use crate::manifold::LinearManifold;
use crate::mask::{validate_mask, InpaintMask};
use crate::noise::{Gaussian, NoiseSource};
use crate::schedule::{AlignmentSchedule, DiffusionSchedule};

pub const VERIFY_CSV: &str = "verify.csv";

pub const TRAINED_GAP_TOL: f64 = 0.05;
pub const CEILING_DELTA: f64 = 0.01;
pub const SWEEP_EPSILON: f64 = 1e-6;
pub const SWEEP_SAMPLES: usize = 20;
/// Manifold seed of the sweep instance. Most random `6 x 3` instances have a
/// valid mask with `λ_max` within `1e-4` of 1, which needs millions of rounds;
/// on this one every valid mask has `λ_max < 0.9965`.
pub const SWEEP_MANIFOLD_SEED: u64 = 122;
pub const MOMENT_STEPS: usize = 4;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const SLOW_STEPS: [usize; 3] = [2, 8, 32];
pub const SLOW_FLOOR: f64 = 0.1;
pub const SLOW_REFERENCE_ROUNDS: usize = 32;
pub const SLOW_REFERENCE_TOL: f64 = 1e-4;
pub const EXPANSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail: String::new(),
        }
    }

    fn at_least(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: measured >= threshold,
            measured,
            threshold,
            detail: String::new(),
        }
    }

    fn failed(name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            threshold: f64::NAN,
            detail: err.to_string(),
        }
    }

    fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["check", "passed", "measured", "threshold", "detail"]);
        for c in &self.checks {
            t.push(vec![
                c.name.clone(),
                c.passed.to_string(),
                float(c.measured),
                float(c.threshold),
                c.detail.clone(),
            ]);
        }
        t
    }
}

fn or_failed(name: &str, r: std::result::Result<CheckResult, RunError>) -> CheckResult {
    r.unwrap_or_else(|e| CheckResult::failed(name, e))
}

/// Truth and starting point for sample `i`, drawn as in the inpainting runs.
fn draw_pair(cfg: &ExperimentConfig, manifold: &LinearManifold, i: usize) -> (DVector<f64>, DVector<f64>) {
    let mut init = NoiseSource::new(cfg.seed, i as u64).substream(INIT_STREAM).stream();
    let z0 = cfg
        .forced_latent()
        .unwrap_or_else(|| init.vector(manifold.intrinsic_dim()));
    let x0 = manifold.embed(&z0);
    let x1 = init.vector(manifold.ambient_dim());
    (x0, x1)
}

fn check_trained(cfg: &ExperimentConfig) -> std::result::Result<CheckResult, RunError> {
    let manifold = cfg.build_manifold()?;
    let schedule = DiffusionSchedule::constant(cfg.beta, 1)?;
    let training = TrainingConfig {
        loss: cfg.loss,
        step_size: cfg.step_size,
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let outcome = train_ddpm(TrainingData::Manifold(&manifold), &schedule, &training)?;
    let exact = closed_form_two_state(&manifold, cfg.beta)?;
    let gap = (outcome.model.theta() - exact.theta()).norm();
    Ok(CheckResult::at_most("trained_vs_closed_form", gap, TRAINED_GAP_TOL))
}

fn check_mask(cfg: &ExperimentConfig) -> std::result::Result<CheckResult, RunError> {
    let validity = validate_mask(&cfg.build_mask(), &cfg.build_manifold()?)?;
    let mut c = CheckResult {
        name: "mask_validity".into(),
        passed: validity.is_valid(),
        measured: validity.lambda_max,
        threshold: 1.0,
        detail: String::new(),
    };
    if !c.passed {
        c.detail = Error::AssumptionViolated(format!(
            "lambda_max = {} >= 1",
            validity.lambda_max
        ))
        .to_string();
    }
    Ok(c)
}

/// `‖x^r − x₀‖ ≤ λ^r·‖A Aᵀ x₁ − x₀‖` for every round and sample. The drift
/// scale can be overridden with `verify_omega` as a negative control.
fn check_pathwise(cfg: &ExperimentConfig) -> std::result::Result<CheckResult, RunError> {
    let manifold = cfg.build_manifold()?;
    let mask = cfg.build_mask();
    let lambda = validate_mask(&mask, &manifold)?.require_valid()?;
    let model = closed_form_two_state(&manifold, cfg.beta)?;
    let alignment = match cfg.verify_omega {
        Some(omega) => AlignmentSchedule::new(vec![omega], vec![1.0])?,
        None => AlignmentSchedule::two_state(cfg.beta),
    };
    let p = manifold.projector();
    // Worst ratio of slack-adjusted error to bound; ≤ 1 means the bound holds.
    let mut worst: f64 = 0.0;
    for i in 0..cfg.n {
        let (x0, x1) = draw_pair(cfg, &manifold, i);
        let prefactor = (&p * &x1 - &x0).norm();
        let (_, trajectory) =
            resample_two_state(&x0, &mask, &model, &alignment, cfg.rounds, &x1, true)?;
        for (r, y) in trajectory.unwrap_or_default().iter().enumerate() {
            let bound = lambda.powi(r as i32 + 1) * prefactor;
            let err = (y - &x0).norm();
            worst = worst.max((err - 1e-13) / bound.max(f64::MIN_POSITIVE));
        }
    }
    Ok(CheckResult::at_most("pathwise_bound", worst, 1.0)
        .detail("max over rounds and samples of error / bound"))
}

/// Limiting error of the `δ = 0.01·I` model against its ceiling, per sample.
fn check_ceiling(cfg: &ExperimentConfig) -> std::result::Result<CheckResult, RunError> {
    let manifold = cfg.build_manifold()?;
    let mask = cfg.build_mask();
    let d = manifold.ambient_dim();
    let delta = nalgebra::DMatrix::identity(d, d) * CEILING_DELTA;
    let exact = closed_form_two_state(&manifold, cfg.beta)?;
    let perturbed = perturb_generator(&exact, &delta, &manifold, &mask)?;
    let drift = perturbed.model.theta() / (1.0 - cfg.beta).sqrt();
    let m = &drift * mask.diag();
    let mut worst: f64 = 0.0;
    for i in 0..cfg.n {
        let (x0, _) = draw_pair(cfg, &manifold, i);
        let forcing = &drift * mask.complement_diag() * &x0;
        let limit = fixed_point_oracle(&m, &forcing)?;
        let ceiling = CEILING_DELTA * x0.norm() / (1.0 - perturbed.lambda_hat_max);
        let err = (limit - &x0).norm();
        worst = worst.max((err - 1e-13) / ceiling.max(f64::MIN_POSITIVE));
    }
    Ok(CheckResult::at_most("noisy_ceiling", worst, 1.0)
        .detail("max over samples of limiting error / ceiling"))
}

/// Every mask of a fixed random `6 x 3` manifold with `λ_max < 1`, one
/// generator for all of them.
fn check_sweep(cfg: &ExperimentConfig) -> std::result::Result<CheckResult, RunError> {
    let mut sweep = cfg.clone();
    sweep.manifold = ManifoldSpec::Random;
    sweep.d = 6;
    sweep.k = 3;
    sweep.manifold_seed = SWEEP_MANIFOLD_SEED;
    sweep.z0 = None;
    let manifold = sweep.build_manifold()?;
    let model = closed_form_two_state(&manifold, cfg.beta)?;
    let theta_norm = (1.0 - cfg.beta).sqrt();
    let mut worst: f64 = 0.0;
    let mut valid = 0;
    for index in 0..(1u64 << 6) {
        let mask = InpaintMask::from_index(6, index);
        let Ok(lambda) = validate_mask(&mask, &manifold)?.require_valid() else {
            continue;
        };
        valid += 1;
        for i in 0..SWEEP_SAMPLES {
            let (x0, x1) = draw_pair(&sweep, &manifold, i);
            let rounds = resampling_budget(
                SWEEP_EPSILON,
                lambda.max(f64::MIN_POSITIVE),
                theta_norm,
                (&x1 - &x0).norm(),
                cfg.beta,
            )?;
            let run = repaint_plus_two_state(&x0, &mask, &model, rounds, &x1, false, &manifold)?;
            worst = worst.max((run.output - &x0).norm());
        }
    }
    Ok(CheckResult::at_most("universal_mask_sweep", worst, SWEEP_EPSILON)
        .detail(format!("{valid} valid masks")))
}

fn check_moments(cfg: &ExperimentConfig) -> Vec<CheckResult> {
    let mut gen = cfg.clone();
    gen.steps = MOMENT_STEPS;
    gen.schedule = ScheduleSpec::Constant;
    gen.n = cfg.moment_samples;
    gen.z0 = None;
    match run_generate(&gen) {
        Ok(report) => {
            let residual = CheckResult::at_most("sampler_on_manifold", report.max_residual, RESIDUAL_TOL);
            let moments = match report.moments {
                Some(m) => CheckResult {
                    name: "sampler_moments".into(),
                    passed: m.passed(),
                    measured: m.cov_error,
                    threshold: m.cov_threshold,
                    detail: format!(
                        "mean norm {} (threshold {})",
                        float(m.mean_norm),
                        float(m.mean_threshold)
                    ),
                },
                None => CheckResult::failed("sampler_moments", "moment test not applicable"),
            };
            vec![residual, moments]
        }
        Err(e) => vec![
            CheckResult::failed("sampler_on_manifold", &e),
            CheckResult::failed("sampler_moments", e),
        ],
    }
}

/// Constant schedule with `ᾱ_T = 0.01`.
fn slow_schedule_beta(steps: usize) -> f64 {
    1.0 - 0.01f64.powf(1.0 / steps as f64)
}

fn check_slow_diffusion(cfg: &ExperimentConfig) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let reference = {
        let mut c = cfg.clone();
        c.methods = vec![Method::RepaintPlusSpecial];
        c.rounds = SLOW_REFERENCE_ROUNDS;
        c.steps = 1;
        c.schedule = ScheduleSpec::Constant;
        c.record_trajectory = false;
        c.delta = DeltaSpec::None;
        run_inpainting(&c).map(|(r, _)| r.methods[0].rmse_per_sample)
    };
    out.push(match reference {
        Ok(rmse) => CheckResult::at_most("repaint_plus_reference", rmse, SLOW_REFERENCE_TOL),
        Err(e) => CheckResult::failed("repaint_plus_reference", e),
    });
    for steps in SLOW_STEPS {
        let name = format!("slow_diffusion_floor_T{steps}");
        let mut c = cfg.clone();
        c.methods = vec![Method::SlowDiffusion];
        c.steps = steps;
        c.beta = slow_schedule_beta(steps);
        c.schedule = ScheduleSpec::Constant;
        c.record_trajectory = false;
        c.delta = DeltaSpec::None;
        out.push(match run_inpainting(&c) {
            Ok((r, _)) => CheckResult::at_least(name, r.methods[0].rmse_per_sample, SLOW_FLOOR),
            Err(e) => CheckResult::failed(name, e),
        });
    }
    out.push(or_failed("slow_diffusion_expansion", check_expansion(cfg)));
    out
}

/// Noiseless slow diffusion against its closed-form expansion.
fn check_expansion(cfg: &ExperimentConfig) -> std::result::Result<CheckResult, RunError> {
    let manifold = cfg.build_manifold()?;
    let mask = cfg.build_mask();
    let mut worst: f64 = 0.0;
    for steps in SLOW_STEPS {
        let schedule = DiffusionSchedule::constant(slow_schedule_beta(steps), steps)?;
        let model = closed_form_multi_state(&manifold, &schedule, true)?;
        let nu_bar = crate::generator::multi_state_coefficients(&schedule)?.nu_bar;
        let alignment = AlignmentSchedule::sampling(&schedule, nu_bar)?;
        for i in 0..cfg.n.min(100) {
            let (x0, x_init) = draw_pair(cfg, &manifold, i);
            let run = slow_diffusion_inpaint(
                &x0,
                &mask,
                &model,
                &alignment,
                &x_init,
                &mut ResampleNoise::zero(),
                &manifold,
            )?;
            let expected = slow_diffusion_expansion(&manifold, &mask, &schedule, &x0, &x_init)?.total();
            worst = worst.max((run.output - expected).norm());
        }
    }
    Ok(CheckResult::at_most("slow_diffusion_expansion", worst, EXPANSION_TOL))
}

fn check_single_step(cfg: &ExperimentConfig) -> std::result::Result<CheckResult, RunError> {
    let manifold = cfg.build_manifold()?;
    let schedule = DiffusionSchedule::constant(cfg.beta, 1)?;
    let multi: Result<_> = closed_form_multi_state(&manifold, &schedule, false);
    let gap = (multi?.state_block() - closed_form_two_state(&manifold, cfg.beta)?.theta()).amax();
    Ok(CheckResult::at_most("multi_state_T1_equals_two_state", gap, 0.0))
}

/// Runs the whole suite. Only configuration problems are returned as errors.
pub fn run_verify(cfg: &ExperimentConfig) -> std::result::Result<VerifyReport, RunError> {
    cfg.validate()?;
    let mut checks = vec![
        or_failed("trained_vs_closed_form", check_trained(cfg)),
        or_failed("mask_validity", check_mask(cfg)),
        or_failed("pathwise_bound", check_pathwise(cfg)),
        or_failed("noisy_ceiling", check_ceiling(cfg)),
        or_failed("universal_mask_sweep", check_sweep(cfg)),
    ];
    checks.extend(check_moments(cfg));
    checks.extend(check_slow_diffusion(cfg));
    checks.push(or_failed("multi_state_T1_equals_two_state", check_single_step(cfg)));
    Ok(VerifyReport { checks })
}

pub fn write_verify_outputs(cfg: &ExperimentConfig, report: &VerifyReport) -> std::result::Result<(), RunError> {
    report.table().write(&cfg.out, VERIFY_CSV)?;
    write_text(&cfg.out, CONFIG_SIDECAR, &cfg.to_text())
}
