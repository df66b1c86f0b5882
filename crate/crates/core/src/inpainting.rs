//! Resampling-based inpainting: RePaint, RePaint⁺ (two-state and general) and
//! single-pass slow diffusion.
//!
//! Every routine takes the known image `x0_known`; only its unmasked
//! coordinates are read. Noise is injected through [`ResampleNoise`], which
//! keeps the forward, reverse and pushforward draws on separate streams.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::diffusion::reverse_step;
use crate::error::{Error, Result};
use crate::mask::{validate_mask, InpaintMask};
use crate::manifold::LinearManifold;
use crate::model::GeneratorModel;
use crate::noise::{Gaussian, NoiseSource, NoiseStream, ZeroNoise};
use crate::schedule::AlignmentSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Repaint,
    RepaintPlusSpecial,
    RepaintPlusGeneral,
    SlowDiffusion,
    RepaintThenReverse,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Repaint,
        Method::RepaintPlusSpecial,
        Method::RepaintPlusGeneral,
        Method::SlowDiffusion,
        Method::RepaintThenReverse,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Repaint => "repaint",
            Method::RepaintPlusSpecial => "repaint_plus_special",
            Method::RepaintPlusGeneral => "repaint_plus_general",
            Method::SlowDiffusion => "slow_diffusion",
            Method::RepaintThenReverse => "repaint_then_reverse",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRun {
    pub method: Method,
    pub rounds: usize,
    /// `trajectory[r-1]` is the output the method would return with `R = r`.
    pub trajectory: Option<Vec<DVector<f64>>>,
    pub output: DVector<f64>,
}

/// Forward (known part), reverse (dispersion) and pushforward noise.
#[derive(Debug, Clone)]
pub struct ResampleNoise<G> {
    pub forward: G,
    pub reverse: G,
    pub push: G,
}

impl ResampleNoise<NoiseStream> {
    pub fn from_source(source: &NoiseSource) -> Self {
        Self {
            forward: source.substream(0).stream(),
            reverse: source.substream(1).stream(),
            push: source.substream(2).stream(),
        }
    }
}

impl ResampleNoise<ZeroNoise> {
    pub fn zero() -> Self {
        Self {
            forward: ZeroNoise,
            reverse: ZeroNoise,
            push: ZeroNoise,
        }
    }
}

fn check_inputs(
    x0_known: &DVector<f64>,
    x_init: &DVector<f64>,
    mask: &InpaintMask,
    model: &GeneratorModel,
) -> Result<()> {
    let d = model.dim();
    mask.check_len(d)?;
    for v in [x0_known, x_init] {
        if v.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "vector has dimension {}, model {d}",
                v.len()
            )));
        }
    }
    Ok(())
}

fn require_two_state(model: &GeneratorModel) -> Result<()> {
    if model.schedule().steps() != 1 {
        return Err(Error::ScheduleMismatch(format!(
            "two-state inpainting needs T = 1, model has T = {}",
            model.schedule().steps()
        )));
    }
    Ok(())
}

/// Paste-then-drift loop shared by the two-state methods, with an arbitrary
/// alignment. Returns the last drift and, when recording, the drift after
/// every round.
pub fn resample_two_state(
    x0_known: &DVector<f64>,
    mask: &InpaintMask,
    model: &GeneratorModel,
    alignment: &AlignmentSchedule,
    rounds: usize,
    x1_init: &DVector<f64>,
    record: bool,
) -> Result<(DVector<f64>, Option<Vec<DVector<f64>>>)> {
    check_inputs(x0_known, x1_init, mask, model)?;
    require_two_state(model)?;
    alignment.check_steps(1)?;
    let zero = DVector::zeros(model.dim());
    let mut trajectory = record.then(|| Vec::with_capacity(rounds));
    let mut y = reverse_step(model, x1_init, 1, alignment, &zero)?;
    for _ in 0..rounds {
        mask.paste(&mut y, x0_known);
        y = reverse_step(model, &y, 1, alignment, &zero)?;
        if let Some(tr) = trajectory.as_mut() {
            tr.push(y.clone());
        }
    }
    Ok((y, trajectory))
}

/// RePaint⁺ with two states: drift aligned by `1/√(1−β)`, `R` paste/drift
/// rounds, then one final aligned drift.
///
/// `R = 0` returns the aligned drift of `x1_init`.
pub fn repaint_plus_two_state(
    x0_known: &DVector<f64>,
    mask: &InpaintMask,
    model: &GeneratorModel,
    rounds: usize,
    x1_init: &DVector<f64>,
    record: bool,
    manifold: &LinearManifold,
) -> Result<InpaintRun> {
    check_inputs(x0_known, x1_init, mask, model)?;
    require_two_state(model)?;
    validate_mask(mask, manifold)?.require_valid()?;
    let alignment = AlignmentSchedule::two_state(model.schedule().beta(1));
    let (output, trajectory) =
        resample_two_state(x0_known, mask, model, &alignment, rounds, x1_init, record)?;
    Ok(InpaintRun {
        method: Method::RepaintPlusSpecial,
        rounds,
        trajectory,
        output,
    })
}

/// Plain RePaint: the same loop without drift alignment. The output is the
/// last drift with the known coordinates pasted back.
pub fn repaint_two_state(
    x0_known: &DVector<f64>,
    mask: &InpaintMask,
    model: &GeneratorModel,
    rounds: usize,
    x1_init: &DVector<f64>,
    record: bool,
    manifold: &LinearManifold,
) -> Result<InpaintRun> {
    check_inputs(x0_known, x1_init, mask, model)?;
    require_two_state(model)?;
    validate_mask(mask, manifold)?.require_valid()?;
    let alignment = AlignmentSchedule::unaligned(1);
    let (mut output, trajectory) =
        resample_two_state(x0_known, mask, model, &alignment, rounds, x1_init, record)?;
    mask.paste(&mut output, x0_known);
    let trajectory = trajectory.map(|tr| {
        tr.into_iter()
            .map(|mut y| {
                mask.paste(&mut y, x0_known);
                y
            })
            .collect()
    });
    Ok(InpaintRun {
        method: Method::Repaint,
        rounds,
        trajectory,
        output,
    })
}

/// RePaint followed by one more unaligned drift `θ·x`.
pub fn repaint_then_reverse(
    x0_known: &DVector<f64>,
    mask: &InpaintMask,
    model: &GeneratorModel,
    rounds: usize,
    x1_init: &DVector<f64>,
    record: bool,
    manifold: &LinearManifold,
) -> Result<InpaintRun> {
    let run = repaint_two_state(x0_known, mask, model, rounds, x1_init, record, manifold)?;
    let trajectory = run
        .trajectory
        .map(|tr| tr.iter().map(|y| model.drift(y, 1)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(InpaintRun {
        method: Method::RepaintThenReverse,
        rounds,
        trajectory,
        output: model.drift(&run.output, 1)?,
    })
}

/// RePaint⁺ over `T + 1` states: `R` resampling rounds at every level, each
/// synthesizing the known part at level `t−1`, taking an aligned reverse
/// step, pasting, and pushing forward again unless it is the last round or
/// `t = 1`. Ends with one aligned noiseless drift at `t = 1`.
///
/// The trajectory records the `t = 1` rounds.
#[allow(clippy::too_many_arguments)]
pub fn repaint_plus_general<G: Gaussian>(
    x0_known: &DVector<f64>,
    mask: &InpaintMask,
    model: &GeneratorModel,
    alignment: &AlignmentSchedule,
    rounds: usize,
    x_init: &DVector<f64>,
    noise: &mut ResampleNoise<G>,
    record: bool,
    manifold: &LinearManifold,
) -> Result<InpaintRun> {
    check_inputs(x0_known, x_init, mask, model)?;
    validate_mask(mask, manifold)?.require_valid()?;
    let schedule = model.schedule();
    let steps = schedule.steps();
    if steps == 0 {
        return Err(Error::ScheduleMismatch("schedule has no steps".into()));
    }
    alignment.check_steps(steps)?;
    let d = model.dim();
    let zero = DVector::zeros(d);
    let mut trajectory = record.then(|| Vec::with_capacity(rounds));
    let mut x = x_init.clone();
    for t in (1..=steps).rev() {
        let ab_prev = schedule.alpha_bar(t - 1);
        for r in 1..=rounds {
            let (eps_fwd, eps_rev) = if t > 1 {
                (noise.forward.vector(d), noise.reverse.vector(d))
            } else {
                (zero.clone(), zero.clone())
            };
            let known = x0_known * ab_prev.sqrt() + eps_fwd * (1.0 - ab_prev).sqrt();
            let mut prev = reverse_step(model, &x, t, alignment, &eps_rev)?;
            mask.paste(&mut prev, &known);
            if r < rounds && t > 1 {
                let eps = noise.push.vector(d);
                let beta = schedule.beta(t);
                x = prev * (1.0 - beta).sqrt() + eps * beta.sqrt();
            } else {
                x = prev;
            }
            if t == 1 {
                if let Some(tr) = trajectory.as_mut() {
                    tr.push(reverse_step(model, &x, 1, alignment, &zero)?);
                }
            }
        }
    }
    let output = reverse_step(model, &x, 1, alignment, &zero)?;
    Ok(InpaintRun {
        method: Method::RepaintPlusGeneral,
        rounds,
        trajectory,
        output,
    })
}

/// One reverse pass from `x_T` with the known part pasted at every
/// intermediate level `T−1, …, 1` and no resampling. Level 0 is not pasted
/// and no extra drift is applied.
pub fn slow_diffusion_inpaint<G: Gaussian>(
    x0_known: &DVector<f64>,
    mask: &InpaintMask,
    model: &GeneratorModel,
    alignment: &AlignmentSchedule,
    x_init: &DVector<f64>,
    noise: &mut ResampleNoise<G>,
    manifold: &LinearManifold,
) -> Result<InpaintRun> {
    check_inputs(x0_known, x_init, mask, model)?;
    validate_mask(mask, manifold)?.require_valid()?;
    let schedule = model.schedule();
    let steps = schedule.steps();
    if steps < 2 {
        return Err(Error::ScheduleMismatch(
            "slow diffusion needs T >= 2".into(),
        ));
    }
    alignment.check_steps(steps)?;
    let d = model.dim();
    let mut x = x_init.clone();
    for t in (1..=steps).rev() {
        let eps_rev = if t > 1 {
            noise.reverse.vector(d)
        } else {
            DVector::zeros(d)
        };
        x = reverse_step(model, &x, t, alignment, &eps_rev)?;
        if t > 1 {
            let ab = schedule.alpha_bar(t - 1);
            let known = x0_known * ab.sqrt() + noise.forward.vector(d) * (1.0 - ab).sqrt();
            mask.paste(&mut x, &known);
        }
    }
    Ok(InpaintRun {
        method: Method::SlowDiffusion,
        rounds: 1,
        trajectory: None,
        output: x,
    })
}
