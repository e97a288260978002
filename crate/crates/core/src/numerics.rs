//! Dense linear algebra and calculus helpers shared by every filter.
//!
//! Matrices are small (state dimensions in the single digits), so everything
//! here favours clarity over blocking or allocation tricks.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter levels tried, in order, when a Cholesky factorization fails.
/// Each level adds `delta * trace(A) / dim` to the diagonal.
pub const JITTER_LADDER: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// A square matrix that has been explicitly symmetrized.
///
/// Covariances and Fisher metrics are always stored as `SymMatrix` so that
/// round-off asymmetry never reaches a Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m`. Panics if `m` is not square.
    pub fn new(m: DMatrix<f64>) -> Self {
        symmetrize(&m)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        SymMatrix(DMatrix::identity(dim, dim) * scale)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, factor: f64) -> Self {
        SymMatrix(&self.0 * factor)
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    /// Largest absolute entry of `A - Aᵀ` relative to the largest absolute entry of `A`.
    pub fn asymmetry(&self) -> f64 {
        asymmetry(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(m: SymMatrix) -> Self {
        m.0
    }
}

/// How a model Jacobian is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianSpec {
    Analytic,
    /// Central differences. `step = None` uses [`default_fd_step`] per coordinate.
    FiniteDifference { step: Option<f64> },
}

impl JacobianSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            JacobianSpec::FiniteDifference { step: Some(h) } if !(h > 0.0 && h.is_finite()) => Err(
                Error::DomainError(format!("finite-difference step must be positive, got {h}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Returns `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> SymMatrix {
    assert!(a.is_square(), "symmetrize needs a square matrix");
    SymMatrix((a + a.transpose()) * 0.5)
}

pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).amax() / scale
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Ratio of extreme singular values; infinite when the smallest is zero.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factor of `a`, escalating through [`JITTER_LADDER`] on failure.
pub fn cholesky_psd(a: &SymMatrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix passed to an SPD solve".into()));
    }
    if let Some(chol) = Cholesky::new(a.as_matrix().clone()) {
        return Ok(chol);
    }
    let n = a.dim();
    let base = a.trace() / n as f64;
    if base > 0.0 {
        for delta in JITTER_LADDER {
            let mut jittered = a.as_matrix().clone();
            for i in 0..n {
                jittered[(i, i)] += delta * base;
            }
            if let Some(chol) = Cholesky::new(jittered) {
                return Ok(chol);
            }
        }
    }
    Err(Error::SingularMatrix(format!(
        "{n}x{n} matrix is not positive definite (min eigenvalue {:.3e})",
        a.min_eigenvalue()
    )))
}

/// Solves `A X = B` for symmetric positive definite `A` without forming `A⁻¹`.
pub fn solve_psd(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.dim() != b.nrows() {
        return Err(Error::Dimension(format!(
            "solve_psd: {}x{} system with {} right-hand rows",
            a.dim(),
            a.dim(),
            b.nrows()
        )));
    }
    let chol = cholesky_psd(a)?;
    Ok(chol.solve(b))
}

pub fn solve_psd_vec(a: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.dim() != b.len() {
        return Err(Error::Dimension(format!(
            "solve_psd: {}x{} system with right-hand side of length {}",
            a.dim(),
            a.dim(),
            b.len()
        )));
    }
    let chol = cholesky_psd(a)?;
    Ok(chol.solve(b))
}

/// `A⁻¹` for SPD `A`, symmetrized.
pub fn inverse_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.dim();
    Ok(symmetrize(&solve_psd(a, &DMatrix::identity(n, n))?))
}

/// Default central-difference step for coordinate value `x`: `cbrt(eps) * (1 + |x|)`.
pub fn default_fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

/// Central-difference Jacobian of `map` at `x`.
///
/// Column `j` is `(map(x + h e_j) - map(x - h e_j)) / 2h`, with `h = step` when
/// given and [`default_fd_step`] otherwise.
pub fn fd_jacobian<M>(map: M, x: &DVector<f64>, step: Option<f64>) -> Result<DMatrix<f64>>
where
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    let center = map(x);
    if center.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("map value at the expansion point".into()));
    }
    let mut jac = DMatrix::zeros(center.len(), x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let h = step.unwrap_or_else(|| default_fd_step(x[j]));
        probe[j] = x[j] + h;
        let plus = map(&probe);
        probe[j] = x[j] - h;
        let minus = map(&probe);
        probe[j] = x[j];
        if plus.len() != center.len() || minus.len() != center.len() {
            return Err(Error::Dimension("map changed output length".into()));
        }
        let col = (plus - minus) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("map value at probe along coordinate {j}")));
        }
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// One classical fourth-order Runge–Kutta step of `dx/dt = deriv(t, x)`.
pub fn rk4_step<D>(deriv: D, state: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    D: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::DomainError(format!("rk4 step must be positive, got {dt}")));
    }
    let check = |k: DVector<f64>, stage: usize| -> Result<DVector<f64>> {
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::NonFinite(format!("rk4 stage {stage} at t = {t}")))
        }
    };
    let half = 0.5 * dt;
    let k1 = check(deriv(t, state)?, 1)?;
    let k2 = check(deriv(t + half, &(state + &k1 * half))?, 2)?;
    let k3 = check(deriv(t + half, &(state + &k2 * half))?, 3)?;
    let k4 = check(deriv(t + dt, &(state + &k3 * dt))?, 4)?;
    Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}
