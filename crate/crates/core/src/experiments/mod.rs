//! Experiment drivers behind the command-line subcommands.
//!
//! Each driver takes a resolved [`ExperimentConfig`], runs per-sample work on
//! a fixed-size worker pool with one noise stream per sample, reduces in
//! sample order, and writes CSV files plus a resolved-config sidecar.

pub mod config;
pub mod output;
pub mod verify;

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::analysis::{
    admissible_delta, fit_rate, latent_moment_test, noisy_error_ceiling_sup, resampling_budget,
    BoundReport, MomentReport,
};
use crate::diffusion::{forward_marginal, sample_reverse_chain};
use crate::error::Error;
use crate::generator::{
    closed_form_multi_state, closed_form_two_state, multi_state_coefficients, perturb_generator,
    population_optimum_multi_state, train_ddpm, TrainingConfig, TrainingData,
};
use crate::inpainting::{
    repaint_plus_general, repaint_plus_two_state, repaint_then_reverse, repaint_two_state,
    slow_diffusion_inpaint, InpaintRun, Method, ResampleNoise,
};
use crate::linalg::spectral_norm;
use crate::manifold::LinearManifold;
use crate::mask::{validate_mask, InpaintMask};
use crate::model::GeneratorModel;
use crate::noise::{Gaussian, NoiseSource};
use crate::samples::SampleBatch;
use crate::schedule::AlignmentSchedule;

pub use config::{ConfigError, ExperimentConfig};
use output::{float, write_text, Table};

pub const SAMPLES_CSV: &str = "samples.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const RMSE_CSV: &str = "rmse.csv";
pub const CONFIG_SIDECAR: &str = "config.resolved";

/// Substream tags under a sample's [`NoiseSource`].
pub(crate) const INIT_STREAM: u64 = 3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Library(#[from] Error),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl RunError {
    /// 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    /// `√((1/n) Σ‖x̂ᵢ − xᵢ‖²)`.
    pub rmse_per_sample: f64,
    /// `√(Σ‖x̂ᵢ − xᵢ‖²)`.
    pub summed_error: f64,
    pub n: usize,
    /// Mean over samples of the per-round error, when recorded.
    pub mean_trajectory: Vec<f64>,
    pub fitted_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub methods: Vec<MethodReport>,
    pub wall_clock: Duration,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Per-sample inputs and outputs kept for `samples.csv`.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub truth: DVector<f64>,
    pub prior: DVector<f64>,
    pub runs: Vec<InpaintRun>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, RunError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Io(e.to_string()))
}

/// Models shared by all samples of an inpainting run.
struct Models {
    two_state: GeneratorModel,
    multi: Option<(GeneratorModel, AlignmentSchedule, AlignmentSchedule)>,
}

fn build_models(
    cfg: &ExperimentConfig,
    manifold: &LinearManifold,
    mask: &InpaintMask,
) -> Result<Models, RunError> {
    let exact = closed_form_two_state(manifold, cfg.beta)?;
    let two_state = match cfg.build_delta() {
        Some(delta) => perturb_generator(&exact, &delta, manifold, mask)?.model,
        None => exact,
    };
    let needs_multi = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::RepaintPlusGeneral | Method::SlowDiffusion));
    let multi = if needs_multi {
        let schedule = cfg.build_schedule()?;
        let model = closed_form_multi_state(manifold, &schedule, true)?;
        let nu_bar = multi_state_coefficients(&schedule)?.nu_bar;
        let projective = AlignmentSchedule::projective(schedule.steps(), nu_bar);
        let sampling = if schedule.steps() >= 2 {
            AlignmentSchedule::sampling(&schedule, nu_bar)?
        } else {
            projective.clone()
        };
        Some((model, projective, sampling))
    } else {
        None
    };
    Ok(Models { two_state, multi })
}

fn run_sample(
    cfg: &ExperimentConfig,
    manifold: &LinearManifold,
    mask: &InpaintMask,
    models: &Models,
    index: usize,
) -> Result<SampleRecord, Error> {
    let source = NoiseSource::new(cfg.seed, index as u64);
    let mut init = source.substream(INIT_STREAM).stream();
    let z0 = match cfg.forced_latent() {
        Some(z) => z,
        None => init.vector(manifold.intrinsic_dim()),
    };
    let truth = manifold.embed(&z0);
    let prior = init.vector(manifold.ambient_dim());
    let record = cfg.record_trajectory;
    let r = cfg.rounds;
    let mut runs = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let m2 = &models.two_state;
        let run = match method {
            Method::Repaint => repaint_two_state(&truth, mask, m2, r, &prior, record, manifold)?,
            Method::RepaintPlusSpecial => {
                repaint_plus_two_state(&truth, mask, m2, r, &prior, record, manifold)?
            }
            Method::RepaintThenReverse => {
                repaint_then_reverse(&truth, mask, m2, r, &prior, record, manifold)?
            }
            Method::RepaintPlusGeneral | Method::SlowDiffusion => {
                let (model, projective, sampling) = models
                    .multi
                    .as_ref()
                    .expect("multi-state model is built when selected");
                let mut noise = ResampleNoise::from_source(&source);
                if method == Method::SlowDiffusion {
                    slow_diffusion_inpaint(&truth, mask, model, sampling, &prior, &mut noise, manifold)?
                } else {
                    repaint_plus_general(
                        &truth, mask, model, projective, r, &prior, &mut noise, record, manifold,
                    )?
                }
            }
        };
        runs.push(run);
    }
    Ok(SampleRecord { truth, prior, runs })
}

/// Runs every configured inpainting method on the same samples and noise.
pub fn run_inpainting(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<SampleRecord>), RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let manifold = cfg.build_manifold()?;
    let mask = cfg.build_mask();
    let models = build_models(cfg, &manifold, &mask)?;
    let records: Vec<SampleRecord> = pool(cfg.workers)?.install(|| {
        (0..cfg.n)
            .into_par_iter()
            .map(|i| run_sample(cfg, &manifold, &mask, &models, i))
            .collect::<Result<Vec<_>, Error>>()
    })?;

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (j, &method) in cfg.methods.iter().enumerate() {
        let mut sq = 0.0;
        let mut traj_sum: Vec<f64> = Vec::new();
        for rec in &records {
            let run = &rec.runs[j];
            sq += (&run.output - &rec.truth).norm_squared();
            if let Some(tr) = &run.trajectory {
                if traj_sum.len() < tr.len() {
                    traj_sum.resize(tr.len(), 0.0);
                }
                for (acc, y) in traj_sum.iter_mut().zip(tr) {
                    *acc += (y - &rec.truth).norm();
                }
            }
        }
        let n = records.len();
        let mean_trajectory: Vec<f64> = traj_sum.iter().map(|s| s / n as f64).collect();
        // exact zeros (e.g. z₀ = 0) end the fit window
        let positive = mean_trajectory.iter().take_while(|e| **e > 0.0).count();
        let fitted_rate = fit_rate(&mean_trajectory[..positive]).ok().map(|f| f.fitted_rate);
        methods.push(MethodReport {
            method,
            rmse_per_sample: if n == 0 { 0.0 } else { (sq / n as f64).sqrt() },
            summed_error: sq.sqrt(),
            n,
            mean_trajectory,
            fitted_rate,
        });
    }
    Ok((
        ExperimentReport {
            methods,
            wall_clock: start.elapsed(),
            config: cfg.clone(),
        },
        records,
    ))
}

fn push_vector(table: &mut Table, method: &str, id: usize, v: &DVector<f64>, kind: &str) {
    for (i, x) in v.iter().enumerate() {
        table.push(vec![
            method.to_string(),
            id.to_string(),
            i.to_string(),
            float(*x),
            kind.to_string(),
        ]);
    }
}

const SAMPLE_HEADER: [&str; 5] = ["method", "sample_id", "coord_index", "value", "kind"];

pub fn samples_table(cfg: &ExperimentConfig, records: &[SampleRecord]) -> Table {
    let mut t = Table::new(&SAMPLE_HEADER);
    for (id, rec) in records.iter().enumerate() {
        push_vector(&mut t, "data", id, &rec.truth, "true");
        push_vector(&mut t, "data", id, &rec.prior, "prior");
        for (method, run) in cfg.methods.iter().zip(&rec.runs) {
            push_vector(&mut t, method.as_str(), id, &run.output, "recovered");
        }
    }
    t
}

pub fn trajectory_table(report: &ExperimentReport) -> Table {
    let mut t = Table::new(&["method", "round", "mean_error"]);
    for m in &report.methods {
        for (r, e) in m.mean_trajectory.iter().enumerate() {
            t.push(vec![m.method.to_string(), (r + 1).to_string(), float(*e)]);
        }
    }
    t
}

pub fn rmse_table(report: &ExperimentReport) -> Table {
    let mut t = Table::new(&["method", "rmse_per_sample", "summed_error", "n"]);
    for m in &report.methods {
        t.push(vec![
            m.method.to_string(),
            float(m.rmse_per_sample),
            float(m.summed_error),
            m.n.to_string(),
        ]);
    }
    t
}

/// Writes `samples.csv`, `trajectory.csv`, `rmse.csv` and the config sidecar.
pub fn write_inpainting_outputs(
    report: &ExperimentReport,
    records: &[SampleRecord],
) -> Result<(), RunError> {
    let cfg = &report.config;
    samples_table(cfg, records).write(&cfg.out, SAMPLES_CSV)?;
    trajectory_table(report).write(&cfg.out, TRAJECTORY_CSV)?;
    rmse_table(report).write(&cfg.out, RMSE_CSV)?;
    write_text(&cfg.out, CONFIG_SIDECAR, &cfg.to_text())
}

/// Generated samples with the forward-diffused data they are compared to.
#[derive(Debug, Clone)]
pub struct GenerateReport {
    pub data: Vec<DVector<f64>>,
    pub forward: Vec<DVector<f64>>,
    pub priors: Vec<DVector<f64>>,
    pub generated: SampleBatch,
    pub max_residual: f64,
    pub moments: Option<MomentReport>,
    pub wall_clock: Duration,
}

/// Draws `x_T ~ N(0, I)` and runs the aligned reverse chain: the two-state
/// projector for `T = 1`, the sampling-aligned multi-state chain otherwise.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<GenerateReport, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let manifold = cfg.build_manifold()?;
    let schedule = cfg.build_schedule()?;
    let (model, alignment) = if schedule.steps() == 1 {
        let beta = schedule.beta(1);
        (
            closed_form_two_state(&manifold, beta)?,
            AlignmentSchedule::two_state(beta),
        )
    } else {
        let nu_bar = multi_state_coefficients(&schedule)?.nu_bar;
        (
            closed_form_multi_state(&manifold, &schedule, true)?,
            AlignmentSchedule::sampling(&schedule, nu_bar)?,
        )
    };
    let steps = schedule.steps();
    let d = manifold.ambient_dim();
    let k = manifold.intrinsic_dim();
    type Draw = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);
    let draws: Vec<Draw> = pool(cfg.workers)?.install(|| {
        (0..cfg.n)
            .into_par_iter()
            .map(|i| -> Result<Draw, Error> {
                let source = NoiseSource::new(cfg.seed, i as u64);
                let mut init = source.substream(INIT_STREAM).stream();
                let z0 = init.vector(k);
                let x0 = manifold.embed(&z0);
                let forward = forward_marginal(&x0, steps, &schedule, &init.vector(d))?;
                let prior = init.vector(d);
                let mut reverse = source.substream(1).stream();
                let generated = sample_reverse_chain(&model, &alignment, prior.clone(), &mut reverse)?;
                Ok((x0, forward, prior, generated, z0))
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let mut data = Vec::with_capacity(draws.len());
    let mut forward = Vec::with_capacity(draws.len());
    let mut priors = Vec::with_capacity(draws.len());
    let mut generated = Vec::with_capacity(draws.len());
    let mut latents = Vec::with_capacity(draws.len());
    for (x0, f, p, g, z) in draws {
        data.push(x0);
        forward.push(f);
        priors.push(p);
        generated.push(g);
        latents.push(z);
    }
    let max_residual = generated
        .iter()
        .map(|x| manifold.residual(x))
        .fold(0.0, f64::max);
    let generated = SampleBatch::new(generated, Some(latents), cfg.seed);
    let moments = match latent_moment_test(&generated, &manifold) {
        Ok(m) => Some(m),
        Err(Error::TooFewPoints { .. }) | Err(Error::OffManifold { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(GenerateReport {
        data,
        forward,
        priors,
        generated,
        max_residual,
        moments,
        wall_clock: start.elapsed(),
    })
}

pub fn write_generate_outputs(cfg: &ExperimentConfig, report: &GenerateReport) -> Result<(), RunError> {
    let mut t = Table::new(&SAMPLE_HEADER);
    for (id, x) in report.data.iter().enumerate() {
        push_vector(&mut t, "forward", id, x, "true");
        push_vector(&mut t, "forward", id, &report.forward[id], "prior");
    }
    for (id, x) in report.priors.iter().enumerate() {
        push_vector(&mut t, "reverse", id, x, "prior");
        push_vector(&mut t, "reverse", id, &report.generated.samples[id], "recovered");
    }
    t.write(&cfg.out, SAMPLES_CSV)?;
    write_text(&cfg.out, CONFIG_SIDECAR, &cfg.to_text())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOutput {
    pub report: BoundReport,
    pub admissible_delta: f64,
}

/// Resampling budget, noisy-model ceiling and admissible perturbation.
///
/// `λ_max` comes from the `lambda_max` key or the configured mask; `λ̂_max`
/// from `lambda_hat_max` or the upper bound `λ_max + delta_norm`.
pub fn run_bound(cfg: &ExperimentConfig) -> Result<BoundOutput, RunError> {
    cfg.validate()?;
    let lambda_max = match cfg.lambda_max {
        Some(l) => l,
        None => validate_mask(&cfg.build_mask(), &cfg.build_manifold()?)?.lambda_max,
    };
    let lambda_hat_max = cfg.lambda_hat_max.unwrap_or(lambda_max + cfg.delta_norm);
    let theta_norm = (1.0 - cfg.beta).sqrt();
    let r_required = resampling_budget(cfg.epsilon, lambda_max, theta_norm, cfg.init_distance, cfg.beta)?;
    let theta_gap = cfg.delta_norm * theta_norm;
    let error_ceiling = noisy_error_ceiling_sup(theta_gap, cfg.kappa, lambda_hat_max, cfg.beta)?;
    let admissible = admissible_delta(cfg.epsilon, lambda_hat_max, cfg.kappa)?;
    Ok(BoundOutput {
        report: BoundReport {
            lambda_max,
            lambda_hat_max,
            r_required,
            error_ceiling,
        },
        admissible_delta: admissible,
    })
}

pub fn write_bound_outputs(cfg: &ExperimentConfig, out: &BoundOutput) -> Result<(), RunError> {
    let mut t = Table::new(&[
        "lambda_max",
        "lambda_hat_max",
        "r_required",
        "error_ceiling",
        "admissible_delta",
    ]);
    t.push(vec![
        float(out.report.lambda_max),
        float(out.report.lambda_hat_max),
        out.report.r_required.to_string(),
        float(out.report.error_ceiling),
        float(out.admissible_delta),
    ]);
    t.write(&cfg.out, "bound.csv")?;
    write_text(&cfg.out, CONFIG_SIDECAR, &cfg.to_text())
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: GeneratorModel,
    /// Frobenius distance to the population optimum.
    pub gap: f64,
    /// Operator-norm distance to the population optimum.
    pub gap_operator: f64,
    pub final_loss: f64,
    pub wall_clock: Duration,
}

/// Trains on the configured manifold and compares against the population
/// optimum (the closed form for `T = 1`, the joint normal equations otherwise).
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let manifold = cfg.build_manifold()?;
    let schedule = cfg.build_schedule()?;
    let training = TrainingConfig {
        loss: cfg.loss,
        step_size: cfg.step_size,
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let outcome = train_ddpm(TrainingData::Manifold(&manifold), &schedule, &training)?;
    let reference = if schedule.steps() == 1 {
        closed_form_two_state(&manifold, schedule.beta(1))?.theta().clone()
    } else {
        population_optimum_multi_state(&manifold, &schedule, false)?
    };
    let diff = outcome.model.theta() - reference;
    Ok(TrainReport {
        gap: diff.norm(),
        gap_operator: spectral_norm(&diff),
        model: outcome.model,
        final_loss: outcome.final_loss,
        wall_clock: start.elapsed(),
    })
}

pub fn write_train_outputs(cfg: &ExperimentConfig, report: &TrainReport) -> Result<(), RunError> {
    write_text(&cfg.out, "model.txt", &report.model.to_text())?;
    write_text(&cfg.out, CONFIG_SIDECAR, &cfg.to_text())
}
