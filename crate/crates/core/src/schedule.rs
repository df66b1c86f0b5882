//! Variance schedules and the drift/dispersion alignment coefficients.

use crate::error::{Error, Result};

/// `{β_t}` with `β₀ = 0` prepended, and the derived `α_t`, `ᾱ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// `betas` holds `β_1..β_T`, each in the open interval (0, 1).
    pub fn new(betas: &[f64]) -> Result<Self> {
        for &b in betas {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::OutOfRange {
                    what: "beta",
                    value: b,
                    range: "(0, 1)",
                });
            }
        }
        let mut all = Vec::with_capacity(betas.len() + 1);
        all.push(0.0);
        all.extend_from_slice(betas);
        let alphas: Vec<f64> = all.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas: all,
            alphas,
            alpha_bars,
        })
    }

    pub fn constant(beta: f64, steps: usize) -> Result<Self> {
        Self::new(&vec![beta; steps])
    }

    /// Linearly spaced `β_1 = start, …, β_T = end`.
    pub fn linear(start: f64, end: f64, steps: usize) -> Result<Self> {
        let betas: Vec<f64> = match steps {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..steps)
                .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
                .collect(),
        };
        Self::new(&betas)
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `β_0..β_T` (with the leading zero).
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::IndexOutOfRange {
                index: t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}

/// Builds a schedule from `β_1..β_T`.
pub fn make_schedule(betas: &[f64]) -> Result<DiffusionSchedule> {
    DiffusionSchedule::new(betas)
}

/// Drift (`ω_t`) and dispersion (`ξ_t`) rescaling for `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSchedule {
    omegas: Vec<f64>,
    xis: Vec<f64>,
}

impl AlignmentSchedule {
    pub fn new(omegas: Vec<f64>, xis: Vec<f64>) -> Result<Self> {
        if omegas.len() != xis.len() {
            return Err(Error::ScheduleMismatch(format!(
                "{} drift coefficients vs {} dispersion coefficients",
                omegas.len(),
                xis.len()
            )));
        }
        Ok(Self { omegas, xis })
    }

    /// `ω_t = ξ_t = 1`: the plain reverse kernel.
    pub fn unaligned(steps: usize) -> Self {
        Self {
            omegas: vec![1.0; steps],
            xis: vec![1.0; steps],
        }
    }

    /// Two-state alignment `ω₁ = 1/√(1−β)`.
    pub fn two_state(beta: f64) -> Self {
        Self {
            omegas: vec![1.0 / (1.0 - beta).sqrt()],
            xis: vec![1.0],
        }
    }

    /// Constant drift rescaling `ω_t = 1/scale` with untouched dispersion.
    ///
    /// With `scale = ν̄` and the iid-noise closed form the drift becomes the
    /// exact projector at every step.
    pub fn projective(steps: usize, scale: f64) -> Self {
        Self {
            omegas: vec![1.0 / scale; steps],
            xis: vec![1.0; steps],
        }
    }

    /// Coefficients under which the `[ν̄ A Aᵀ, 0]` reverse chain samples the data
    /// distribution exactly: `ω = 1/(ν̄ 2^{1/(2T)})` and
    /// `ξ_t = √(2^{(t−1)/T} / (2 β_t (T−1)))` for `t ≥ 2`.
    ///
    /// `ξ_1` is stored as 0; the last reverse step is noiseless.
    pub fn sampling(schedule: &DiffusionSchedule, nu_bar: f64) -> Result<Self> {
        let steps = schedule.steps();
        if steps < 2 {
            return Err(Error::ScheduleMismatch(
                "sampling alignment needs T >= 2".into(),
            ));
        }
        let tf = steps as f64;
        let omega = 1.0 / (nu_bar * 2f64.powf(1.0 / (2.0 * tf)));
        let xis = (1..=steps)
            .map(|t| {
                if t == 1 {
                    0.0
                } else {
                    (2f64.powf((t - 1) as f64 / tf) / (2.0 * schedule.beta(t) * (tf - 1.0))).sqrt()
                }
            })
            .collect();
        Ok(Self {
            omegas: vec![omega; steps],
            xis,
        })
    }

    pub fn steps(&self) -> usize {
        self.omegas.len()
    }

    /// `ω_t`, `t ≥ 1`.
    pub fn omega(&self, t: usize) -> f64 {
        self.omegas[t - 1]
    }

    /// `ξ_t`, `t ≥ 1`.
    pub fn xi(&self, t: usize) -> f64 {
        self.xis[t - 1]
    }

    pub fn check_steps(&self, steps: usize) -> Result<()> {
        if self.steps() != steps {
            return Err(Error::ScheduleMismatch(format!(
                "alignment covers {} steps, schedule has {}",
                self.steps(),
                steps
            )));
        }
        Ok(())
    }
}
