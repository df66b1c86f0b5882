//! The linear data manifold `x₀ = A z₀` with orthonormal `A`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative singular-value floor below which a basis is considered rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// A `k`-dimensional linear subspace of `ℝ^d` with orthonormal basis columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearManifold {
    a: DMatrix<f64>,
}

impl LinearManifold {
    /// Orthonormalizes `raw` (Householder QR) keeping its column span.
    ///
    /// Column signs are fixed so that `R` has a positive diagonal, i.e. each
    /// basis vector points the same way as the raw column it came from.
    pub fn from_raw(raw: &DMatrix<f64>) -> Result<Self> {
        let (d, k) = raw.shape();
        if k == 0 || k > d {
            return Err(Error::RankDeficient {
                smallest: 0.0,
                largest: 0.0,
            });
        }
        let sv = raw.singular_values();
        let largest = sv.max();
        let smallest = sv.min();
        if !(largest > 0.0) || smallest < RANK_TOL * largest {
            return Err(Error::RankDeficient { smallest, largest });
        }
        let qr = raw.clone().qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..k {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Ok(Self { a: q })
    }

    /// The two-dimensional line through `(2, 3)` used throughout the examples.
    pub fn toy() -> Self {
        Self::from_raw(&DMatrix::from_column_slice(2, 1, &[2.0, 3.0]))
            .expect("toy basis has full rank")
    }

    /// A random subspace: Gaussian raw basis, orthonormalized.
    pub fn random<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Self> {
        let raw = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::from_raw(&raw)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn ambient_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.a.ncols()
    }

    /// Orthogonal projector `A Aᵀ` onto the manifold.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.a * self.a.transpose()
    }

    /// `A z`.
    pub fn embed(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z
    }

    /// Latent coordinates `Aᵀ x`.
    pub fn latent(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(x)
    }

    /// Distance to the manifold, `‖x − A Aᵀ x‖`. Panics on a length mismatch.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (x - &self.a * self.a.tr_mul(x)).norm()
    }

    /// Frobenius norm of `AᵀA − I_k`.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.intrinsic_dim();
        (self.a.tr_mul(&self.a) - DMatrix::<f64>::identity(k, k)).norm()
    }
}

/// Builds a manifold from a raw `d × k` basis.
pub fn make_manifold(raw: &DMatrix<f64>) -> Result<LinearManifold> {
    LinearManifold::from_raw(raw)
}
