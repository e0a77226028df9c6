//! Ellipsoids `E(M, c) = { θ : (θ - c)ᵀ M⁻¹ (θ - c) ≤ 1 }` and the closed-form
//! central-cut update used by the ellipsoid pricing learner.
//!
//! All operations are pure: a cut returns a new ellipsoid and leaves the input
//! untouched.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, TradeError};

/// Which half of a central cut to keep, relative to the direction `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    /// `{ θ : aᵀ(θ - c) ≤ 0 }`
    Lower,
    /// `{ θ : aᵀ(θ - c) ≥ 0 }`
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    /// Builds an ellipsoid from a center and a symmetric positive-definite shape.
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let d = center.len();
        if d == 0 {
            return Err(TradeError::InvalidArgument("dimension must be >= 1".into()));
        }
        if shape.nrows() != d || shape.ncols() != d {
            return Err(TradeError::Dimension { expected: d, got: shape.nrows() });
        }
        let scale = shape.amax().max(f64::MIN_POSITIVE);
        if (&shape - shape.transpose()).amax() > 1e-12 * scale {
            return Err(TradeError::InvalidArgument("shape matrix is not symmetric".into()));
        }
        let shape = symmetrize(shape);
        if Cholesky::new(shape.clone()).is_none() {
            return Err(TradeError::NotPositiveDefinite);
        }
        Ok(Self { center, shape })
    }

    /// The `d`-dimensional ball of the given radius centered at the origin.
    pub fn ball(d: usize, radius: f64) -> Result<Self> {
        if d == 0 {
            return Err(TradeError::InvalidArgument("dimension must be >= 1".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(TradeError::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        Ok(Self {
            center: DVector::zeros(d),
            shape: DMatrix::identity(d, d) * (radius * radius),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// `(θ - c)ᵀ M⁻¹ (θ - c)`.
    pub fn mahalanobis_sq(&self, theta: &DVector<f64>) -> Result<f64> {
        let chol = self.cholesky()?;
        let diff = theta - &self.center;
        let y = chol.solve(&diff);
        Ok(diff.dot(&y))
    }

    pub fn contains(&self, theta: &DVector<f64>) -> Result<bool> {
        Ok(self.mahalanobis_sq(theta)? <= 1.0)
    }

    /// Range of `xᵀθ` over the ellipsoid: `xᵀc ∓ √(xᵀMx)`.
    pub fn support_interval(&self, x: &DVector<f64>) -> (f64, f64) {
        let mid = x.dot(&self.center);
        let half = (&self.shape * x).dot(x).max(0.0).sqrt();
        (mid - half, mid + half)
    }

    /// Löwner-John ellipsoid of the half `E ∩ { aᵀ(θ - c) ≤ 0 }` (or `≥ 0`).
    ///
    /// In one dimension the half is an interval and is returned exactly.
    pub fn central_cut(&self, a: &DVector<f64>, keep: Half) -> Result<Self> {
        let d = self.dim();
        if a.len() != d {
            return Err(TradeError::Dimension { expected: d, got: a.len() });
        }
        let a = match keep {
            Half::Lower => a.clone(),
            Half::Upper => -a,
        };
        let ma = &self.shape * &a;
        let quad = a.dot(&ma);
        let tol = 1e-14 * self.shape.trace() * a.norm_squared();
        if !(quad > tol) {
            return Err(TradeError::DegenerateDirection { quad, tol });
        }
        let root = quad.sqrt();
        let df = d as f64;

        if d == 1 {
            // interval bisection
            let center = &self.center - &ma * (0.5 / root);
            let shape = &self.shape * 0.25;
            return Ok(Self { center, shape });
        }

        let center = &self.center - &ma * (1.0 / ((df + 1.0) * root));
        let update = &ma * ma.transpose() * (2.0 / ((df + 1.0) * quad));
        let shape = (&self.shape - update) * (df * df / (df * df - 1.0));
        let shape = symmetrize(shape);
        if Cholesky::new(shape.clone()).is_none() {
            return Err(TradeError::NotPositiveDefinite);
        }
        Ok(Self { center, shape })
    }

    /// Central cut through the hyperplane `aᵀθ = level`, which must pass
    /// through the center (to within rounding).
    pub fn cut_through(&self, a: &DVector<f64>, level: f64, keep: Half) -> Result<Self> {
        let at_center = a.dot(&self.center);
        let width = (&self.shape * a).dot(a).max(0.0).sqrt();
        let offset = level - at_center;
        if offset.abs() > 1e-9 * (1.0 + at_center.abs() + width) {
            return Err(TradeError::NonCentralCut { offset });
        }
        self.central_cut(a, keep)
    }

    /// `½ log det M`; the unit-ball volume constant is dropped.
    pub fn log_volume(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(chol.l().diagonal().iter().map(|v| v.ln()).sum())
    }

    /// Ratio of largest to smallest eigenvalue of the shape matrix.
    pub fn condition_number(&self) -> f64 {
        let eig = self.shape.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        max / min
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.shape.clone()).ok_or(TradeError::NotPositiveDefinite)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}
