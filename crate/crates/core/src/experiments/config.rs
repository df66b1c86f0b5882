//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, and the
//! defaults reproduce the two-dimensional toy experiment. Later assignments
//! (including command-line overrides) replace earlier ones.

use std::fmt;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::inpainting::Method;
use crate::linalg::spectral_norm;
use crate::manifold::LinearManifold;
use crate::mask::InpaintMask;
use crate::schedule::DiffusionSchedule;
use crate::generator::LossKind;

/// Environment variable consulted for the default output directory.
pub const OUT_ENV: &str = "REPAINT_PLUS_OUT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(line: Option<usize>, field: &str, message: impl Into<String>) -> Self {
        Self {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}, field `{}`: {}", self.field, self.message),
            None => write!(f, "config field `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldSpec {
    Toy,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Constant,
    Linear { start: f64, end: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    Bits(Vec<u8>),
    Density(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaSpec {
    None,
    Identity(f64),
    /// Gaussian matrix rescaled to the given spectral norm.
    Random(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifold: ManifoldSpec,
    pub d: usize,
    pub k: usize,
    pub manifold_seed: u64,
    pub steps: usize,
    pub rounds: usize,
    pub n: usize,
    pub beta: f64,
    pub schedule: ScheduleSpec,
    pub mask: MaskSpec,
    pub mask_seed: u64,
    pub delta: DeltaSpec,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub workers: usize,
    pub record_trajectory: bool,
    /// Latent forced for every sample, if set.
    pub z0: Option<Vec<f64>>,
    pub epsilon: f64,
    pub init_distance: f64,
    pub kappa: f64,
    pub delta_norm: f64,
    pub lambda_max: Option<f64>,
    pub lambda_hat_max: Option<f64>,
    pub loss: LossKind,
    pub step_size: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Drift rescaling used by the bound check in `verify`; unset means aligned.
    pub verify_omega: Option<f64>,
    pub moment_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifold: ManifoldSpec::Toy,
            d: 2,
            k: 1,
            manifold_seed: 0,
            steps: 1,
            rounds: 100,
            n: 1000,
            beta: 0.9,
            schedule: ScheduleSpec::Constant,
            mask: MaskSpec::Bits(vec![0, 1]),
            mask_seed: 0,
            delta: DeltaSpec::None,
            seed: 42,
            methods: vec![
                Method::Repaint,
                Method::RepaintPlusSpecial,
                Method::RepaintThenReverse,
            ],
            out: default_out_dir(),
            workers: 1,
            record_trajectory: false,
            z0: None,
            epsilon: 1e-8,
            init_distance: 3.0,
            kappa: 1.0,
            delta_norm: 0.0,
            lambda_max: None,
            lambda_hat_max: None,
            loss: LossKind::PosteriorMean,
            step_size: 0.05,
            iterations: 20_000,
            batch_size: 64,
            verify_omega: None,
            moment_samples: 100_000,
        }
    }
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Documented keys, in the order they are echoed.
pub const KEYS: &[&str] = &[
    "manifold",
    "d",
    "k",
    "manifold_seed",
    "T",
    "R",
    "n",
    "beta",
    "schedule",
    "mask",
    "mask_seed",
    "delta",
    "seed",
    "methods",
    "out",
    "workers",
    "record_trajectory",
    "z0",
    "epsilon",
    "init_distance",
    "kappa",
    "delta_norm",
    "lambda_max",
    "lambda_hat_max",
    "loss",
    "step_size",
    "iterations",
    "batch_size",
    "verify_omega",
    "moment_samples",
];

fn parse<T: std::str::FromStr>(line: Option<usize>, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| ConfigError::new(line, key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list(line: Option<usize>, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|v| parse::<f64>(line, key, v.trim()))
        .collect()
}

fn parse_optional<T: std::str::FromStr>(
    line: Option<usize>,
    key: &str,
    value: &str,
) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if value == "none" || value.is_empty() {
        Ok(None)
    } else {
        parse(line, key, value).map(Some)
    }
}

fn parse_bits(line: Option<usize>, key: &str, bits: &str) -> Result<Vec<u8>, ConfigError> {
    bits.chars()
        .filter(|c| *c != ',' && !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(ConfigError::new(line, key, format!("mask bit `{other}` is not 0 or 1"))),
        })
        .collect()
}

fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

impl ExperimentConfig {
    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = Some(i + 1);
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                ConfigError::new(line, content, "expected `key = value`")
            })?;
            self.set_at(line, key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(None, assignment, "expected `key=value`"))?;
        self.set_at(None, key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_at(None, key, value)
    }

    fn set_at(&mut self, line: Option<usize>, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "manifold" => {
                self.manifold = match value {
                    "toy" => ManifoldSpec::Toy,
                    "random" => ManifoldSpec::Random,
                    _ => return Err(ConfigError::new(line, key, "expected `toy` or `random`")),
                }
            }
            "d" => self.d = parse(line, key, value)?,
            "k" => self.k = parse(line, key, value)?,
            "manifold_seed" => self.manifold_seed = parse(line, key, value)?,
            "T" => self.steps = parse(line, key, value)?,
            "R" => self.rounds = parse(line, key, value)?,
            "n" => self.n = parse(line, key, value)?,
            "beta" => self.beta = parse(line, key, value)?,
            "schedule" => {
                self.schedule = if value == "constant" {
                    ScheduleSpec::Constant
                } else if let Some(rest) = value.strip_prefix("linear:") {
                    let ends = parse_list(line, key, rest)?;
                    if ends.len() != 2 {
                        return Err(ConfigError::new(line, key, "expected `linear:start,end`"));
                    }
                    ScheduleSpec::Linear {
                        start: ends[0],
                        end: ends[1],
                    }
                } else {
                    return Err(ConfigError::new(
                        line,
                        key,
                        "expected `constant` or `linear:start,end`",
                    ));
                }
            }
            "mask" => {
                self.mask = if let Some(rest) = value.strip_prefix("density:") {
                    MaskSpec::Density(parse(line, key, rest)?)
                } else {
                    MaskSpec::Bits(parse_bits(line, key, value.strip_prefix("bits:").unwrap_or(value))?)
                }
            }
            "mask_seed" => self.mask_seed = parse(line, key, value)?,
            "delta" => {
                self.delta = if value == "none" {
                    DeltaSpec::None
                } else if let Some(rest) = value.strip_prefix("identity:") {
                    DeltaSpec::Identity(parse(line, key, rest)?)
                } else if let Some(rest) = value.strip_prefix("random:") {
                    DeltaSpec::Random(parse(line, key, rest)?)
                } else {
                    return Err(ConfigError::new(
                        line,
                        key,
                        "expected `none`, `identity:c` or `random:norm`",
                    ));
                }
            }
            "seed" => self.seed = parse(line, key, value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|m| {
                        m.trim()
                            .parse::<Method>()
                            .map_err(|e| ConfigError::new(line, key, e.to_string()))
                    })
                    .collect::<Result<_, _>>()?
            }
            "out" => self.out = PathBuf::from(value),
            "workers" => self.workers = parse(line, key, value)?,
            "record_trajectory" => self.record_trajectory = parse(line, key, value)?,
            "z0" => {
                self.z0 = if value == "none" {
                    None
                } else {
                    Some(parse_list(line, key, value)?)
                }
            }
            "epsilon" => self.epsilon = parse(line, key, value)?,
            "init_distance" => self.init_distance = parse(line, key, value)?,
            "kappa" => self.kappa = parse(line, key, value)?,
            "delta_norm" => self.delta_norm = parse(line, key, value)?,
            "lambda_max" => self.lambda_max = parse_optional(line, key, value)?,
            "lambda_hat_max" => self.lambda_hat_max = parse_optional(line, key, value)?,
            "loss" => {
                self.loss = match value {
                    "posterior_mean" => LossKind::PosteriorMean,
                    "noise_pred" => LossKind::NoisePrediction,
                    _ => {
                        return Err(ConfigError::new(
                            line,
                            key,
                            "expected `posterior_mean` or `noise_pred`",
                        ))
                    }
                }
            }
            "step_size" => self.step_size = parse(line, key, value)?,
            "iterations" => self.iterations = parse(line, key, value)?,
            "batch_size" => self.batch_size = parse(line, key, value)?,
            "verify_omega" => self.verify_omega = parse_optional(line, key, value)?,
            "moment_samples" => self.moment_samples = parse(line, key, value)?,
            _ => return Err(ConfigError::new(line, key, "unknown key")),
        }
        Ok(())
    }

    /// Checks cross-field consistency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |field: &str, msg: String| Err(ConfigError::new(None, field, msg));
        if self.manifold == ManifoldSpec::Toy && (self.d != 2 || self.k != 1) {
            return err("d", format!("toy manifold is 2 x 1, got d = {}, k = {}", self.d, self.k));
        }
        if self.d == 0 || self.k == 0 || self.k > self.d {
            return err("k", format!("need 1 <= k <= d, got d = {}, k = {}", self.d, self.k));
        }
        if self.steps == 0 {
            return err("T", "T must be at least 1".into());
        }
        if self.workers == 0 {
            return err("workers", "workers must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return err("beta", format!("beta = {} is outside (0, 1)", self.beta));
        }
        if let ScheduleSpec::Linear { start, end } = self.schedule {
            for b in [start, end] {
                if !(b > 0.0 && b < 1.0) {
                    return err("schedule", format!("beta endpoint {b} is outside (0, 1)"));
                }
            }
        }
        match &self.mask {
            MaskSpec::Bits(bits) if bits.len() != self.d => {
                return err("mask", format!("mask has {} bits, d = {}", bits.len(), self.d));
            }
            MaskSpec::Density(p) if !(0.0..=1.0).contains(p) => {
                return err("mask", format!("density {p} is outside [0, 1]"));
            }
            _ => {}
        }
        if let Some(z) = &self.z0 {
            if z.len() != self.k {
                return err("z0", format!("z0 has {} entries, k = {}", z.len(), self.k));
            }
        }
        if self.methods.is_empty() {
            return err("methods", "no methods selected".into());
        }
        if !(self.epsilon > 0.0) {
            return err("epsilon", "epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn build_manifold(&self) -> Result<LinearManifold, ConfigError> {
        match self.manifold {
            ManifoldSpec::Toy => Ok(LinearManifold::toy()),
            ManifoldSpec::Random => {
                let mut rng = ChaCha20Rng::seed_from_u64(self.manifold_seed);
                LinearManifold::random(self.d, self.k, &mut rng)
                    .map_err(|e| ConfigError::new(None, "manifold", e.to_string()))
            }
        }
    }

    /// Schedule with `T` steps; `beta` fills a constant schedule.
    pub fn build_schedule(&self) -> Result<DiffusionSchedule, ConfigError> {
        let s = match self.schedule {
            ScheduleSpec::Constant => DiffusionSchedule::constant(self.beta, self.steps),
            ScheduleSpec::Linear { start, end } => DiffusionSchedule::linear(start, end, self.steps),
        };
        s.map_err(|e| ConfigError::new(None, "schedule", e.to_string()))
    }

    pub fn build_mask(&self) -> InpaintMask {
        match &self.mask {
            MaskSpec::Bits(bits) => InpaintMask::new(bits.iter().map(|&b| b == 1).collect()),
            MaskSpec::Density(p) => {
                let mut rng = ChaCha20Rng::seed_from_u64(self.mask_seed);
                InpaintMask::new((0..self.d).map(|_| rng.random::<f64>() < *p).collect())
            }
        }
    }

    pub fn build_delta(&self) -> Option<DMatrix<f64>> {
        let d = self.d;
        match self.delta {
            DeltaSpec::None => None,
            DeltaSpec::Identity(c) => Some(DMatrix::identity(d, d) * c),
            DeltaSpec::Random(norm) => {
                let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0xD17A);
                let raw = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let s = spectral_norm(&raw);
                Some(if s > 0.0 { raw * (norm / s) } else { raw })
            }
        }
    }

    pub fn forced_latent(&self) -> Option<DVector<f64>> {
        self.z0.as_ref().map(|z| DVector::from_column_slice(z))
    }

    /// Every key with its resolved value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.value_of(key));
            out.push('\n');
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_else(|| "none".into());
        match key {
            "manifold" => match self.manifold {
                ManifoldSpec::Toy => "toy".into(),
                ManifoldSpec::Random => "random".into(),
            },
            "d" => self.d.to_string(),
            "k" => self.k.to_string(),
            "manifold_seed" => self.manifold_seed.to_string(),
            "T" => self.steps.to_string(),
            "R" => self.rounds.to_string(),
            "n" => self.n.to_string(),
            "beta" => format_f64(self.beta),
            "schedule" => match self.schedule {
                ScheduleSpec::Constant => "constant".into(),
                ScheduleSpec::Linear { start, end } => {
                    format!("linear:{},{}", format_f64(start), format_f64(end))
                }
            },
            "mask" => match &self.mask {
                MaskSpec::Bits(bits) => bits.iter().map(|b| b.to_string()).collect(),
                MaskSpec::Density(p) => format!("density:{}", format_f64(*p)),
            },
            "mask_seed" => self.mask_seed.to_string(),
            "delta" => match self.delta {
                DeltaSpec::None => "none".into(),
                DeltaSpec::Identity(c) => format!("identity:{}", format_f64(c)),
                DeltaSpec::Random(c) => format!("random:{}", format_f64(c)),
            },
            "seed" => self.seed.to_string(),
            "methods" => self
                .methods
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(","),
            "out" => self.out.display().to_string(),
            "workers" => self.workers.to_string(),
            "record_trajectory" => self.record_trajectory.to_string(),
            "z0" => self
                .z0
                .as_ref()
                .map(|z| z.iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(","))
                .unwrap_or_else(|| "none".into()),
            "epsilon" => format_f64(self.epsilon),
            "init_distance" => format_f64(self.init_distance),
            "kappa" => format_f64(self.kappa),
            "delta_norm" => format_f64(self.delta_norm),
            "lambda_max" => opt(self.lambda_max),
            "lambda_hat_max" => opt(self.lambda_hat_max),
            "loss" => match self.loss {
                LossKind::PosteriorMean => "posterior_mean".into(),
                LossKind::NoisePrediction => "noise_pred".into(),
            },
            "step_size" => format_f64(self.step_size),
            "iterations" => self.iterations.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "verify_omega" => opt(self.verify_omega),
            "moment_samples" => self.moment_samples.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }
}
