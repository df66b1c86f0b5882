//! Binary inpainting masks (`1` = missing coordinate).

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::manifold::LinearManifold;

/// Masks with `λ_max ≥ 1 − MASK_TOL` are rejected.
pub const MASK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InpaintMask {
    missing: Vec<bool>,
}

impl InpaintMask {
    pub fn new(missing: Vec<bool>) -> Self {
        Self { missing }
    }

    /// From 0/1 entries. Anything other than 0 or 1 is an error.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::OutOfRange {
                    what: "mask entry",
                    value: other as f64,
                    range: "{0, 1}",
                }),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    /// Mask number `index` among the `2^d` masks of length `d`; bit `i` of
    /// `index` marks coordinate `i` missing.
    pub fn from_index(d: usize, index: u64) -> Self {
        Self::new((0..d).map(|i| (index >> i) & 1 == 1).collect())
    }

    pub fn none(d: usize) -> Self {
        Self::new(vec![false; d])
    }

    pub fn all(d: usize) -> Self {
        Self::new(vec![true; d])
    }

    pub fn len(&self) -> usize {
        self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.missing[i]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn bits(&self) -> impl Iterator<Item = u8> + '_ {
        self.missing.iter().map(|&m| m as u8)
    }

    /// `D(m)`.
    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.len(),
            self.missing.iter().map(|&m| if m { 1.0 } else { 0.0 }),
        ))
    }

    /// `D(1 − m)`.
    pub fn complement_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.len(),
            self.missing.iter().map(|&m| if m { 0.0 } else { 1.0 }),
        ))
    }

    /// `m ⊙ generated + (1 − m) ⊙ known`, in place on `generated`.
    pub fn paste(&self, generated: &mut DVector<f64>, known: &DVector<f64>) {
        for (i, &m) in self.missing.iter().enumerate() {
            if !m {
                generated[i] = known[i];
            }
        }
    }

    pub fn check_len(&self, d: usize) -> Result<()> {
        if self.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for InpaintMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Result of checking a mask against a manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskValidity {
    /// `‖A Aᵀ D(m)‖`.
    pub lambda_max: f64,
}

impl MaskValidity {
    pub fn is_valid(&self) -> bool {
        self.lambda_max < 1.0 - MASK_TOL
    }

    pub fn require_valid(&self) -> Result<f64> {
        if self.is_valid() {
            Ok(self.lambda_max)
        } else {
            Err(Error::InvalidMask {
                lambda_max: self.lambda_max,
            })
        }
    }
}

/// Computes `λ_max = ‖A Aᵀ D(m)‖` and whether the mask leaves enough signal.
pub fn validate_mask(mask: &InpaintMask, manifold: &LinearManifold) -> Result<MaskValidity> {
    mask.check_len(manifold.ambient_dim())?;
    let m = manifold.projector() * mask.diag();
    Ok(MaskValidity {
        lambda_max: spectral_norm(&m),
    })
}
