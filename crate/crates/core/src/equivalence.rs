//! Hyperparameter correspondence between the fading-memory filter and the
//! trajectory natural gradient, and side-by-side comparisons of the two.
//!
//! Discrete time: `γ_t = η_t`, `1/η_t = 1/((1 + α_t) η_{t-1}) + 1` and
//! `P_0 = η_0 J_0⁻¹`. Under this map the filter mean equals the natural
//! gradient chart value and `P_t = η_t J_t⁻¹` at every step.
//!
//! Continuous time: `γ = η`, `dη/dt = α η − η²`, same initialization.

use nalgebra::DVector;

use crate::bucy::{integrate, ContinuousTrace, InitialCondition, IntegratorConfig};
use crate::ekf::{self, EkfConfig};
use crate::error::{Error, Result};
use crate::model::{ContinuousModel, Scenario};
use crate::natgrad::{self, NatGradConfig};
use crate::numerics::{inverse_psd, SymMatrix};
use crate::schedule::{Schedule, TimeSchedule};

/// Default initial learning rate.
pub const DEFAULT_ETA0: f64 = 0.5;
/// Discrete equivalence tolerance (relative).
pub const DISCRETE_TOL: f64 = 1e-8;

/// Learning-rate schedule matched to a fading schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperMap {
    pub alpha: Schedule,
    /// `η_0 ..= η_T`
    pub eta: Vec<f64>,
}

impl HyperMap {
    pub fn eta0(&self) -> f64 {
        self.eta[0]
    }

    pub fn eta_schedule(&self) -> Schedule {
        Schedule::Values(self.eta.clone())
    }

    /// `γ_t = η_t`.
    pub fn gamma_schedule(&self) -> Schedule {
        self.eta_schedule()
    }
}

/// Iterates `1/η_t = 1/((1 + α_t) η_{t-1}) + 1` for `t = 1 ..= horizon`.
pub fn map_alpha_to_eta(alpha: &Schedule, eta0: f64, horizon: usize) -> Result<HyperMap> {
    if !(eta0 > 0.0 && eta0 <= 1.0) {
        return Err(Error::DomainError(format!("eta0 must lie in (0, 1], got {eta0}")));
    }
    alpha.check_range("alpha", 1, horizon, 0.0, None)?;
    // Iterate on 1/η so that integer-valued reciprocals stay exact.
    let mut eta = Vec::with_capacity(horizon + 1);
    eta.push(eta0);
    let mut inv = 1.0 / eta0;
    for t in 1..=horizon {
        inv = inv / (1.0 + alpha.at(t)) + 1.0;
        eta.push(1.0 / inv);
    }
    Ok(HyperMap { alpha: alpha.clone(), eta })
}

/// Inverse map: `α_t = η_t / ((1 − η_t) η_{t-1}) − 1`. Entry 0 of the result is
/// a placeholder `0`.
pub fn map_eta_to_alpha(eta: &[f64]) -> Result<Schedule> {
    let mut alpha = vec![0.0; eta.len()];
    for t in 1..eta.len() {
        let (cur, prev) = (eta[t], eta[t - 1]);
        if !(cur > 0.0 && cur < 1.0) {
            return Err(Error::DomainError(format!(
                "eta_{t} = {cur} has no finite fading rate (need 0 < eta < 1)"
            )));
        }
        if !(prev > 0.0) {
            return Err(Error::DomainError(format!("eta_{} = {prev} must be positive", t - 1)));
        }
        alpha[t] = cur / ((1.0 - cur) * prev) - 1.0;
    }
    Ok(Schedule::Values(alpha))
}

/// Deliberate breakages used as negative controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mutation {
    None,
    /// Filter side uses `F P Fᵀ` instead of `(1 + α) F P Fᵀ`.
    DropFadingFactor,
    /// Gradient side uses `γ_t = η_t / 2`.
    HalfGamma,
    /// Gradient side carries the metric across charts untransformed.
    SkipTransport,
    /// Gradient side uses `η_t + delta` at one step.
    PerturbEta { step: usize, delta: f64 },
}

impl Mutation {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Mutation::None),
            "drop_fading_factor" => Some(Mutation::DropFadingFactor),
            "half_gamma" => Some(Mutation::HalfGamma),
            "skip_transport" => Some(Mutation::SkipTransport),
            "perturb_eta" => Some(Mutation::PerturbEta { step: 1, delta: 1e-3 }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// `max_t ‖s_filter − s_gradient‖∞ / max(1, sup_t ‖s_filter‖∞)`
    pub max_state_dev: f64,
    /// `max_t ‖P_t − η_t J_t⁻¹‖_F / ‖P_t‖_F`
    pub max_metric_dev: f64,
    /// Time of each entry of the per-step series.
    pub times: Vec<f64>,
    pub state_dev: Vec<f64>,
    pub metric_dev: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

impl ComparisonReport {
    fn from_series(times: Vec<f64>, state_dev: Vec<f64>, metric_dev: Vec<f64>, tol: f64) -> Self {
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let max_state_dev = max(&state_dev);
        let max_metric_dev = max(&metric_dev);
        let finite = state_dev.iter().chain(&metric_dev).all(|x| x.is_finite());
        ComparisonReport {
            max_state_dev,
            max_metric_dev,
            times,
            state_dev,
            metric_dev,
            tol,
            passed: finite && max_state_dev <= tol && max_metric_dev <= tol,
        }
    }

    /// The larger of the two deviations.
    pub fn max_dev(&self) -> f64 {
        self.max_state_dev.max(self.max_metric_dev)
    }
}

/// Options for [`check_discrete`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCheck {
    pub alpha: Schedule,
    pub eta0: f64,
    pub tol: f64,
    pub mutation: Mutation,
}

impl DiscreteCheck {
    pub fn new(alpha: Schedule) -> Self {
        DiscreteCheck { alpha, eta0: DEFAULT_ETA0, tol: DISCRETE_TOL, mutation: Mutation::None }
    }
}

/// Both discrete runs plus the report comparing them.
#[derive(Debug, Clone)]
pub struct DiscreteComparison {
    pub hyper: HyperMap,
    pub filter: ekf::FilterTrace,
    pub gradient: natgrad::GradTrace,
    pub report: ComparisonReport,
}

fn metric_deviation(p: &SymMatrix, eta: f64, metric: &SymMatrix) -> Result<f64> {
    let implied = inverse_psd(metric)?.scale(eta);
    Ok((p.as_matrix() - implied.as_matrix()).norm() / p.norm())
}

fn state_scale<'a>(states: impl Iterator<Item = &'a DVector<f64>>) -> f64 {
    states.map(|s| s.amax()).fold(1.0, f64::max)
}

/// Runs the fading-memory filter (gain form) and the trajectory natural
/// gradient (exact Fisher) with matched hyperparameters and compares them.
pub fn check_discrete(scenario: &Scenario, s0: &DVector<f64>, p0: &SymMatrix, check: &DiscreteCheck) -> Result<DiscreteComparison> {
    let horizon = scenario.horizon();
    let hyper = map_alpha_to_eta(&check.alpha, check.eta0, horizon)?;
    let j0 = inverse_psd(p0)?.scale(hyper.eta0());

    let filter_alpha = match check.mutation {
        Mutation::DropFadingFactor => Schedule::Constant(0.0),
        _ => check.alpha.clone(),
    };
    let mut eta = hyper.eta.clone();
    let mut gamma = hyper.eta.clone();
    match check.mutation {
        Mutation::HalfGamma => gamma.iter_mut().for_each(|g| *g *= 0.5),
        Mutation::PerturbEta { step, delta } if step <= horizon => eta[step] += delta,
        _ => {}
    }
    let mut grad_cfg = NatGradConfig::new(Schedule::Values(eta), Schedule::Values(gamma));
    grad_cfg.transport_metric = check.mutation != Mutation::SkipTransport;

    let filter = ekf::run(scenario, &EkfConfig::fading(filter_alpha), s0.clone(), p0.clone())?;
    let gradient = natgrad::run(scenario, &grad_cfg, s0.clone(), j0)?;

    let scale = state_scale((0..=horizon).map(|t| &filter.posterior(t).mean));
    let mut state_dev = Vec::with_capacity(horizon + 1);
    let mut metric_dev = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let (fb, gs) = (filter.posterior(t), gradient.state(t));
        state_dev.push((&fb.mean - &gs.chart_value).amax() / scale);
        metric_dev.push(metric_deviation(&fb.cov, hyper.eta[t], &gs.metric)?);
    }
    let times = (0..=horizon).map(|t| t as f64).collect();
    let report = ComparisonReport::from_series(times, state_dev, metric_dev, check.tol);
    Ok(DiscreteComparison { hyper, filter, gradient, report })
}

/// Options for [`check_continuous`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousCheck {
    pub alpha: TimeSchedule,
    pub eta0: f64,
    pub horizon: f64,
    pub dts: Vec<f64>,
    pub tol: f64,
    /// Minimum convergence order of the deviation as `dt` shrinks.
    pub min_order: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRow {
    pub dt: f64,
    pub report: ComparisonReport,
    pub bucy: ContinuousTrace,
    pub cngd: ContinuousTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousComparison {
    pub rows: Vec<ContinuousRow>,
    /// `log(dev_coarse / dev_fine) / log(dt_coarse / dt_fine)` over the extreme step sizes.
    pub order: f64,
    /// Order between each consecutive pair of step sizes, coarse to fine.
    pub pairwise_orders: Vec<f64>,
    pub passed: bool,
}

impl ContinuousComparison {
    pub fn finest(&self) -> &ContinuousRow {
        self.rows.last().expect("at least one step size")
    }
}

fn convergence_order(coarse: (f64, f64), fine: (f64, f64)) -> f64 {
    let (dt_c, dev_c) = coarse;
    let (dt_f, dev_f) = fine;
    if dev_f == 0.0 {
        return f64::INFINITY;
    }
    (dev_c / dev_f).ln() / (dt_c / dt_f).ln()
}

/// Integrates the Kalman–Bucy filter and the continuous natural gradient on a
/// shared grid for every step size (sorted coarse to fine) and compares them
/// sample by sample.
pub fn check_continuous(model: &ContinuousModel, s0: &DVector<f64>, p0: &SymMatrix, check: &ContinuousCheck) -> Result<ContinuousComparison> {
    if check.dts.is_empty() {
        return Err(Error::DomainError("no step sizes given".into()));
    }
    if !(check.eta0 > 0.0 && check.eta0 <= 1.0) {
        return Err(Error::DomainError(format!("eta0 must lie in (0, 1], got {}", check.eta0)));
    }
    let mut dts = check.dts.clone();
    dts.sort_by(|a, b| b.total_cmp(a));
    let j0 = inverse_psd(p0)?.scale(check.eta0);

    let mut rows = Vec::with_capacity(dts.len());
    for dt in dts {
        let cfg = IntegratorConfig::new(dt, check.horizon, check.alpha.clone());
        let bucy = integrate(model, &InitialCondition::Bucy { s0: s0.clone(), p0: p0.clone() }, &cfg)?;
        let cngd = integrate(
            model,
            &InitialCondition::Cngd { s0: s0.clone(), j0: j0.clone(), eta0: check.eta0 },
            &cfg,
        )?;
        let scale = state_scale(bucy.samples.iter().map(|x| &x.s));
        let mut times = Vec::with_capacity(bucy.samples.len());
        let mut state_dev = Vec::with_capacity(bucy.samples.len());
        let mut metric_dev = Vec::with_capacity(bucy.samples.len());
        for (b, c) in bucy.samples.iter().zip(&cngd.samples) {
            times.push(b.t);
            state_dev.push((&b.s - &c.s).amax() / scale);
            metric_dev.push(metric_deviation(&b.matrix, c.eta.unwrap_or(1.0), &c.matrix)?);
        }
        let report = ComparisonReport::from_series(times, state_dev, metric_dev, check.tol);
        rows.push(ContinuousRow { dt, report, bucy, cngd });
    }

    let point = |r: &ContinuousRow| (r.dt, r.report.max_dev());
    let pairwise_orders: Vec<f64> = rows.windows(2).map(|w| convergence_order(point(&w[0]), point(&w[1]))).collect();
    let order = if rows.len() > 1 {
        convergence_order(point(&rows[0]), point(rows.last().unwrap()))
    } else {
        f64::NAN
    };
    let finest_ok = rows.last().unwrap().report.passed;
    let order_ok = rows.len() < 2 || order >= check.min_order;
    Ok(ContinuousComparison { rows, order, pairwise_orders, passed: finest_ok && order_ok })
}
