//! Continuous-time counterparts: the extended Kalman–Bucy filter with pure
//! fading memory (`Q = α P`) and the continuous online natural gradient written
//! in the chart of the current state, with its learning rate driven by
//! `dη/dt = α η − η²`.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::model::ContinuousModel;
use crate::numerics::{rk4_step, solve_psd, solve_psd_vec, symmetrize, SymMatrix};
use crate::schedule::TimeSchedule;

/// Floor on `min eig / norm` below which a covariance or metric counts as degenerate.
pub const POSITIVITY_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct BucyState {
    pub s: DVector<f64>,
    pub p: SymMatrix,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CngdState {
    pub s: DVector<f64>,
    /// Metric expressed in the chart of the current state.
    pub jcc: SymMatrix,
    pub eta: f64,
    pub t: f64,
}

/// Instantaneous log-likelihood against the Wiener measure:
/// `yᵀ R⁻¹ ŷ − ½ ŷᵀ R⁻¹ ŷ` with `ŷ = h(s, u)`.
pub fn inst_loglik(y: &DVector<f64>, prediction: &DVector<f64>, r: &SymMatrix) -> Result<f64> {
    let weighted = solve_psd_vec(r, prediction)?;
    Ok(y.dot(&weighted) - 0.5 * prediction.dot(&weighted))
}

/// Gradient of [`inst_loglik`] with respect to the state: `(y − ŷ)ᵀ R⁻¹ H`.
pub fn inst_loglik_grad(
    y: &DVector<f64>,
    prediction: &DVector<f64>,
    r: &SymMatrix,
    h: &DMatrix<f64>,
) -> Result<RowDVector<f64>> {
    Ok(solve_psd_vec(r, &(y - prediction))?.transpose() * h)
}

/// Instantaneous Fisher matrix in the chart of the current state: `Hᵀ R⁻¹ H`.
pub fn inst_fisher(r: &SymMatrix, h: &DMatrix<f64>) -> Result<SymMatrix> {
    Ok(symmetrize(&(h.transpose() * solve_psd(r, h)?)))
}

/// `dη/dt = α η − η²`
pub fn eta_ode(eta: f64, alpha: f64) -> f64 {
    alpha * eta - eta * eta
}

/// Kalman–Bucy field with `Q = α P`:
/// `ds/dt = f + K (y − h)`, `dP/dt = F P + P Fᵀ − K H P + α P`, `K = P Hᵀ R⁻¹`.
pub fn bucy_deriv(
    state: &BucyState,
    y: &DVector<f64>,
    model: &ContinuousModel,
    alpha: f64,
) -> Result<(DVector<f64>, SymMatrix)> {
    let t = state.t;
    let p = state.p.as_matrix();
    let f = model.jacobian_f(&state.s, t)?;
    let h = model.jacobian_h(&state.s, t)?;
    let r = model.obs_cov(t);
    // Kᵀ = R⁻¹ H P
    let gain_t = solve_psd(&r, &(&h * p))?;
    let ds = model.field(&state.s, t)? + gain_t.transpose() * (y - model.observe(&state.s, t)?);
    let dp = &f * p + p * f.transpose() - gain_t.transpose() * &h * p + p * alpha;
    Ok((ds, symmetrize(&dp)))
}

/// Continuous natural gradient in the current-state chart:
/// `dJ/dt = −Fᵀ J − J F − γ J + γ Hᵀ R⁻¹ H`,
/// `ds/dt = f + η J⁻¹ Hᵀ R⁻¹ (y − h)`.
pub fn cngd_deriv(
    state: &CngdState,
    y: &DVector<f64>,
    model: &ContinuousModel,
    gamma: f64,
) -> Result<(DVector<f64>, SymMatrix)> {
    let t = state.t;
    let j = state.jcc.as_matrix();
    let f = model.jacobian_f(&state.s, t)?;
    let h = model.jacobian_h(&state.s, t)?;
    let r = model.obs_cov(t);
    let fisher = inst_fisher(&r, &h)?;
    let dj = -(f.transpose() * j) - j * &f - j * gamma + fisher.as_matrix() * gamma;
    let score = inst_loglik_grad(y, &model.observe(&state.s, t)?, &r, &h)?;
    let ds = model.field(&state.s, t)? + solve_psd_vec(&state.jcc, &score.transpose())? * state.eta;
    Ok((ds, symmetrize(&dj)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Bucy,
    Cngd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub alpha: TimeSchedule,
    /// `None` couples `γ = η`; anything else breaks the equivalence with the filter.
    pub gamma: Option<TimeSchedule>,
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: f64, alpha: TimeSchedule) -> Self {
        IntegratorConfig { dt, horizon, alpha, gamma: None }
    }

    /// Number of fixed steps; `horizon` must be a whole multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.dt <= self.horizon) {
            return Err(Error::DomainError(format!(
                "need 0 < dt <= horizon, got dt = {}, horizon = {}",
                self.dt, self.horizon
            )));
        }
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::DomainError(format!(
                "horizon {} is not a multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Initial condition for [`integrate`].
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Bucy { s0: DVector<f64>, p0: SymMatrix },
    Cngd { s0: DVector<f64>, j0: SymMatrix, eta0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSample {
    pub t: f64,
    pub s: DVector<f64>,
    /// `P` for the Kalman–Bucy filter, the chart metric for the natural gradient.
    pub matrix: SymMatrix,
    pub eta: Option<f64>,
}

impl ContinuousSample {
    /// Covariance implied by the sample: `P`, or `η J⁻¹`.
    pub fn covariance(&self) -> Result<SymMatrix> {
        match self.eta {
            None => Ok(self.matrix.clone()),
            Some(eta) => Ok(crate::numerics::inverse_psd(&self.matrix)?.scale(eta)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTrace {
    pub kind: FilterKind,
    pub samples: Vec<ContinuousSample>,
}

fn pack(s: &DVector<f64>, m: &SymMatrix, eta: Option<f64>) -> DVector<f64> {
    let n = s.len();
    let extra = usize::from(eta.is_some());
    let mut x = DVector::zeros(n + n * n + extra);
    x.rows_mut(0, n).copy_from(s);
    x.rows_mut(n, n * n).copy_from_slice(m.as_matrix().as_slice());
    if let Some(e) = eta {
        x[n + n * n] = e;
    }
    x
}

fn unpack(x: &DVector<f64>, n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let s = x.rows(0, n).into_owned();
    let m = DMatrix::from_column_slice(n, n, x.rows(n, n * n).as_slice());
    (s, m)
}

fn check_positive(m: &SymMatrix, t: f64, what: &str) -> Result<()> {
    let min = m.min_eigenvalue();
    if !(min > 0.0 && min >= POSITIVITY_FLOOR * m.norm()) {
        return Err(Error::PositivityLost { t, what: format!("{what} min eigenvalue {min:.3e}") });
    }
    Ok(())
}

/// Fixed-step RK4 integration over `[0, horizon]`, one sample per step.
/// For the natural gradient the learning rate is co-integrated with
/// [`eta_ode`].
pub fn integrate(model: &ContinuousModel, init: &InitialCondition, cfg: &IntegratorConfig) -> Result<ContinuousTrace> {
    let steps = cfg.steps()?;
    let n = model.dim_state();
    let (kind, s0, m0, eta0) = match init {
        InitialCondition::Bucy { s0, p0 } => (FilterKind::Bucy, s0, p0, None),
        InitialCondition::Cngd { s0, j0, eta0 } => {
            if !(*eta0 > 0.0) {
                return Err(Error::DomainError(format!("eta0 must be positive, got {eta0}")));
            }
            (FilterKind::Cngd, s0, j0, Some(*eta0))
        }
    };
    if s0.len() != n || m0.dim() != n {
        return Err(Error::Dimension(format!(
            "initial condition of size {}/{} for dimension {n}",
            s0.len(),
            m0.dim()
        )));
    }
    let label = if kind == FilterKind::Bucy { "P" } else { "J" };
    check_positive(m0, 0.0, label)?;

    let deriv = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let (s, m) = unpack(x, n);
        let y = model.obs(t);
        let alpha = cfg.alpha.at(t);
        match kind {
            FilterKind::Bucy => {
                let state = BucyState { s, p: SymMatrix::new(m), t };
                let (ds, dp) = bucy_deriv(&state, &y, model, alpha)?;
                Ok(pack(&ds, &dp, None))
            }
            FilterKind::Cngd => {
                let eta = x[n + n * n];
                let gamma = cfg.gamma.as_ref().map_or(eta, |g| g.at(t));
                let state = CngdState { s, jcc: SymMatrix::new(m), eta, t };
                let (ds, dj) = cngd_deriv(&state, &y, model, gamma)?;
                Ok(pack(&ds, &dj, Some(eta_ode(eta, alpha))))
            }
        }
    };

    let mut x = pack(s0, m0, eta0);
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(ContinuousSample { t: 0.0, s: s0.clone(), matrix: m0.clone(), eta: eta0 });
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        x = rk4_step(deriv, &x, t, cfg.dt)?;
        let t_next = (k + 1) as f64 * cfg.dt;
        let (s, m) = unpack(&x, n);
        let m = symmetrize(&m);
        x.rows_mut(n, n * n).copy_from_slice(m.as_matrix().as_slice());
        check_positive(&m, t_next, label)?;
        let eta = eta0.map(|_| x[n + n * n]);
        if let Some(e) = eta {
            if !(e > 0.0) {
                return Err(Error::PositivityLost { t: t_next, what: format!("learning rate {e}") });
            }
        }
        samples.push(ContinuousSample { t: t_next, s, matrix: m, eta });
    }
    Ok(ContinuousTrace { kind, samples })
}
