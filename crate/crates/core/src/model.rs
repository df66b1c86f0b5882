//! Linear reverse-process generators `μ_θ(x, t) = θ·x` or `θ·[x; t]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::matvec;
use crate::schedule::DiffusionSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    ExactTwoState,
    ExactMultiState,
    Trained,
    Perturbed,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::ExactTwoState => "exact_two_state",
            ModelKind::ExactMultiState => "exact_multi_state",
            ModelKind::Trained => "trained",
            ModelKind::Perturbed => "perturbed",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_two_state" => Ok(ModelKind::ExactTwoState),
            "exact_multi_state" => Ok(ModelKind::ExactMultiState),
            "trained" => Ok(ModelKind::Trained),
            "perturbed" => Ok(ModelKind::Perturbed),
            other => Err(Error::Parse(format!("unknown model kind `{other}`"))),
        }
    }
}

/// A reverse-kernel weight matrix with its provenance and schedule.
///
/// `theta` is `d × d` for two-state models and `d × (d+1)` for time-conditioned
/// multi-state models, whose last column multiplies the step index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    theta: DMatrix<f64>,
    kind: ModelKind,
    schedule: DiffusionSchedule,
    intrinsic_dim: usize,
}

impl GeneratorModel {
    pub fn new(
        theta: DMatrix<f64>,
        kind: ModelKind,
        schedule: DiffusionSchedule,
        intrinsic_dim: usize,
    ) -> Result<Self> {
        let (d, cols) = theta.shape();
        if cols != d && cols != d + 1 {
            return Err(Error::ShapeMismatch(format!(
                "theta must be d x d or d x (d+1), got {d} x {cols}"
            )));
        }
        Ok(Self {
            theta,
            kind,
            schedule,
            intrinsic_dim,
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn is_time_conditioned(&self) -> bool {
        self.theta.ncols() == self.theta.nrows() + 1
    }

    /// The `d × d` block acting on the state.
    pub fn state_block(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.theta.columns(0, d).into_owned()
    }

    /// The column multiplying `t`, if any.
    pub fn time_column(&self) -> Option<DVector<f64>> {
        self.is_time_conditioned()
            .then(|| self.theta.column(self.dim()).into_owned())
    }

    /// `μ_θ(x, t)`.
    pub fn drift(&self, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "model expects dimension {d}, got {}",
                x.len()
            )));
        }
        if self.is_time_conditioned() {
            let mut input = Vec::with_capacity(d + 1);
            input.extend_from_slice(x.as_slice());
            input.push(t as f64);
            Ok(matvec(&self.theta, &input))
        } else {
            Ok(matvec(&self.theta, x.as_slice()))
        }
    }

    /// Same weights with an all-zero time column appended.
    pub fn with_time_column(&self) -> Self {
        if self.is_time_conditioned() {
            return self.clone();
        }
        let d = self.dim();
        let theta = self.theta.clone().insert_column(d, 0.0);
        Self {
            theta,
            ..self.clone()
        }
    }

    /// Header `kind d k T`, then one line per row with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.kind,
            self.dim(),
            self.intrinsic_dim,
            self.schedule.steps()
        );
        for i in 0..self.theta.nrows() {
            let row: Vec<String> = (0..self.theta.ncols())
                .map(|j| format!("{:.16e}", self.theta[(i, j)]))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output. The schedule is not part of the
    /// file and must have the recorded number of steps.
    pub fn from_text(text: &str, schedule: DiffusionSchedule) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty model file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        let kind: ModelKind = fields[0].parse()?;
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad header field `{s}`: {e}")))
        };
        let d = parse_usize(fields[1])?;
        let k = parse_usize(fields[2])?;
        let steps = parse_usize(fields[3])?;
        if steps != schedule.steps() {
            return Err(Error::ScheduleMismatch(format!(
                "model file has T = {steps}, schedule has T = {}",
                schedule.steps()
            )));
        }
        let mut entries = Vec::new();
        let mut cols = None;
        for line in lines {
            let row = line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad entry `{v}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::Parse("ragged matrix rows".into()));
                }
                _ => {}
            }
            entries.extend(row);
        }
        let cols = cols.unwrap_or(0);
        if entries.len() != d * cols {
            return Err(Error::Parse(format!(
                "expected {d} rows, got {}",
                entries.len() / cols.max(1)
            )));
        }
        let theta = DMatrix::from_row_slice(d, cols, &entries);
        Self::new(theta, kind, schedule, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(theta: DMatrix<f64>) -> GeneratorModel {
        GeneratorModel::new(
            theta,
            ModelKind::Trained,
            DiffusionSchedule::constant(0.3, 2).unwrap(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GeneratorModel::new(
            DMatrix::zeros(2, 4),
            ModelKind::Trained,
            DiffusionSchedule::constant(0.5, 1).unwrap(),
            1
        )
        .is_err());
    }

    #[test]
    fn drift_appends_time() {
        let m = model(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 2.0, -1.0]));
        let out = m.drift(&DVector::from_column_slice(&[1.0, 1.0]), 2).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 0.0]);
        assert!(m.drift(&DVector::zeros(3), 1).is_err());
    }

    #[test]
    fn zero_time_column_keeps_drift_bits() {
        let m = model(DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.7, 0.2]));
        let lifted = m.with_time_column();
        let x = DVector::from_column_slice(&[0.123456789, -9.87654321]);
        assert_eq!(m.drift(&x, 1).unwrap(), lifted.drift(&x, 1).unwrap());
        assert_eq!(lifted.time_column().unwrap(), DVector::zeros(2));
    }

    #[test]
    fn rejects_schedule_length_mismatch() {
        let text = model(DMatrix::identity(2, 2)).to_text();
        let err = GeneratorModel::from_text(&text, DiffusionSchedule::constant(0.3, 3).unwrap());
        assert!(matches!(err, Err(Error::ScheduleMismatch(_))));
        assert!(GeneratorModel::from_text("trained 2 1", DiffusionSchedule::constant(0.3, 2).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(entries in prop::collection::vec(-1e6f64..1e6, 6), timed in any::<bool>()) {
            let theta = if timed {
                DMatrix::from_row_slice(2, 3, &entries)
            } else {
                DMatrix::from_row_slice(3, 3, &[entries.clone(), entries[..3].to_vec()].concat())
            };
            let m = model(theta);
            let back = GeneratorModel::from_text(&m.to_text(), m.schedule().clone()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
