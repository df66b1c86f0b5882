use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use repaint_plus::experiments::config::{ConfigError, ExperimentConfig};
use repaint_plus::experiments::verify::{run_verify, write_verify_outputs};
use repaint_plus::experiments::{
    run_bound, run_generate, run_inpainting, run_train, write_bound_outputs,
    write_generate_outputs, write_inpainting_outputs, write_train_outputs, ExperimentReport,
    RunError,
};

/// Diffusion inpainting experiments on linear manifolds.
///
/// Settings are resolved as defaults, then the `--config` file, then flags
/// and `--set` overrides. The output directory defaults to `$REPAINT_PLUS_OUT`
/// or `out`.
#[derive(Parser, Debug)]
#[command(name = "repaint-plus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Record the per-round error trajectory.
    #[arg(long, global = true)]
    record_trajectory: bool,

    /// Override any config key, e.g. `--set R=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Inpaint the two-dimensional toy set with every configured method.
    Toy,
    /// Sample from the aligned reverse chain.
    Generate,
    /// Run the self-check suite; exits 1 on any failed check.
    Verify,
    /// Resampling budget, error ceiling and admissible perturbation.
    Bound,
    /// Train a generator by SGD and compare it to the population optimum.
    Train,
    /// Inpaint a single sample and print the recovered vectors.
    Inpaint,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    if matches!(cli.command, Command::Inpaint) {
        cfg.n = 1;
    }
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            field: "config".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        cfg.apply_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if cli.record_trajectory {
        cfg.record_trajectory = true;
    }
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_inpainting(report: &ExperimentReport) {
    println!("method,rmse_per_sample,summed_error,fitted_rate");
    for m in &report.methods {
        let rate = m.fitted_rate.map(|r| format!("{r:.6}")).unwrap_or_default();
        println!(
            "{},{:.6e},{:.6e},{rate}",
            m.method, m.rmse_per_sample, m.summed_error
        );
    }
    eprintln!(
        "{} samples in {:.3}s, written to {}",
        report.config.n,
        report.wall_clock.as_secs_f64(),
        report.config.out.display()
    );
}

fn run(command: Command, cfg: &ExperimentConfig) -> Result<bool, RunError> {
    match command {
        Command::Toy => {
            let (report, records) = run_inpainting(cfg)?;
            write_inpainting_outputs(&report, &records)?;
            print_inpainting(&report);
        }
        Command::Inpaint => {
            let (report, records) = run_inpainting(cfg)?;
            write_inpainting_outputs(&report, &records)?;
            for (id, rec) in records.iter().enumerate() {
                println!("sample {id}: true {:?}", rec.truth.as_slice());
                for (method, run) in cfg.methods.iter().zip(&rec.runs) {
                    println!("  {method}: {:?}", run.output.as_slice());
                }
            }
            print_inpainting(&report);
        }
        Command::Generate => {
            let report = run_generate(cfg)?;
            write_generate_outputs(cfg, &report)?;
            println!("samples: {}", report.generated.len());
            println!("max manifold residual: {:e}", report.max_residual);
            match &report.moments {
                Some(m) => println!(
                    "latent moments: mean {:e} (<= {:e}), covariance {:e} (<= {:e}), {}",
                    m.mean_norm,
                    m.mean_threshold,
                    m.cov_error,
                    m.cov_threshold,
                    if m.passed() { "pass" } else { "fail" }
                ),
                None => println!("latent moments: not enough samples"),
            }
        }
        Command::Bound => {
            let out = run_bound(cfg)?;
            write_bound_outputs(cfg, &out)?;
            println!("lambda_max: {}", out.report.lambda_max);
            println!("lambda_hat_max: {}", out.report.lambda_hat_max);
            println!("required R: {}", out.report.r_required);
            println!("error ceiling: {:e}", out.report.error_ceiling);
            println!("admissible delta: {:e}", out.admissible_delta);
        }
        Command::Train => {
            let report = run_train(cfg)?;
            write_train_outputs(cfg, &report)?;
            println!("final loss: {:e}", report.final_loss);
            println!("gap to optimum (Frobenius): {:e}", report.gap);
            println!("gap to optimum (operator): {:e}", report.gap_operator);
        }
        Command::Verify => {
            let report = run_verify(cfg)?;
            write_verify_outputs(cfg, &report)?;
            for c in &report.checks {
                println!(
                    "{} {} measured={:e} threshold={:e} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.threshold,
                    c.detail
                );
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
