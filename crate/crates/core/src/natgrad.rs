//! Online natural gradient descent over trajectories.
//!
//! A trajectory of the noiseless system is parameterized by its state at the
//! current time. Moving from time `t − 1` to `t` changes that chart by `f`, so
//! the chart value is pushed through `f` and the Fisher metric is pushed
//! forward by `F`: `J ← F⁻ᵀ J F⁻¹`. The metric is then blended with the
//! Fisher information of the new observation and the chart value takes a
//! natural-gradient step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::expfam::{Observation, ObservationFamily};
use crate::model::{DynamicalModel, Scenario};
use crate::numerics::{condition_number, solve_psd_vec, symmetrize, SymMatrix};
use crate::rng;
use crate::schedule::Schedule;

/// Condition number above which a chart change is treated as singular.
pub const MAX_CHART_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct NatGradState {
    /// The current trajectory expressed in the current chart (its present state).
    pub chart_value: DVector<f64>,
    /// Fisher metric in the current chart.
    pub metric: SymMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherMode {
    /// `Hᵀ Cov(T)⁻¹ H`, the expectation over `y` in closed form.
    Exact,
    /// Squared score at the actual observation.
    OuterProduct,
    /// Squared score averaged over `n` synthetic draws from the model.
    MonteCarlo(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NatGradConfig {
    pub eta: Schedule,
    pub gamma: Schedule,
    pub fisher_mode: FisherMode,
    /// When false the metric is carried unchanged across charts. Only useful
    /// as a negative control; the result is not a natural gradient.
    pub transport_metric: bool,
}

impl NatGradConfig {
    pub fn new(eta: Schedule, gamma: Schedule) -> Self {
        NatGradConfig { eta, gamma, fisher_mode: FisherMode::Exact, transport_metric: true }
    }

    pub fn with_fisher_mode(mut self, mode: FisherMode) -> Self {
        self.fisher_mode = mode;
        self
    }
}

/// Expresses metric `J` in new coordinates `x' = Ψ x`: `Ψ⁻ᵀ J Ψ⁻¹`.
pub fn pushforward_metric(metric: &SymMatrix, psi: &DMatrix<f64>) -> Result<SymMatrix> {
    if !psi.is_square() || psi.nrows() != metric.dim() {
        return Err(Error::Dimension(format!(
            "{}x{} chart change for a {}-dimensional metric",
            psi.nrows(),
            psi.ncols(),
            metric.dim()
        )));
    }
    let cond = condition_number(psi);
    if !(cond <= MAX_CHART_CONDITION) {
        return Err(Error::SingularMatrix(format!(
            "chart change has condition number {cond:.3e}"
        )));
    }
    let lu = psi.transpose().lu();
    let singular = || Error::SingularMatrix("chart change is not invertible".into());
    // Ψᵀ Xᵀ = J gives X = J Ψ⁻¹; then Ψᵀ Y = X gives Y = Ψ⁻ᵀ J Ψ⁻¹.
    let x = lu.solve(metric.as_matrix()).ok_or_else(singular)?.transpose();
    let y = lu.solve(&x).ok_or_else(singular)?;
    Ok(symmetrize(&y))
}

/// Moves the state to the chart of time `t`: the value goes through `f`, the
/// metric is pushed forward by `F_{t-1}`.
pub fn chart_transport(
    state: &NatGradState,
    model: &DynamicalModel,
    t: usize,
) -> Result<(NatGradState, DMatrix<f64>)> {
    let f = model.jacobian_f(&state.chart_value, t)?;
    let metric = pushforward_metric(&state.metric, &f)?;
    let chart_value = model.step_dynamics(&state.chart_value, t)?;
    Ok((NatGradState { chart_value, metric }, f))
}

/// Fisher information of the observation at `ŷ`, pulled back through `H`.
pub fn fisher_term<R: Rng + ?Sized>(
    mean_obs: &DVector<f64>,
    h: &DMatrix<f64>,
    family: &ObservationFamily,
    mode: FisherMode,
    y: &Observation,
    rng: &mut R,
) -> Result<SymMatrix> {
    let score = |obs: &Observation| -> Result<DMatrix<f64>> {
        let g = family.grad_logp_wrt_mean(obs, mean_obs)? * h;
        Ok(g.transpose() * g)
    };
    let m = match mode {
        FisherMode::Exact => {
            let fisher = family.fisher_wrt_mean(mean_obs)?;
            h.transpose() * fisher.as_matrix() * h
        }
        FisherMode::OuterProduct => score(y)?,
        FisherMode::MonteCarlo(n) => {
            if n == 0 {
                return Err(Error::DomainError("monte-carlo Fisher needs at least one draw".into()));
            }
            let mut acc = DMatrix::zeros(h.ncols(), h.ncols());
            for _ in 0..n {
                acc += score(&family.sample(mean_obs, rng))?;
            }
            acc / n as f64
        }
    };
    Ok(symmetrize(&m))
}

/// Observation step in the current chart. `state.chart_value` must already be
/// the predicted state `s_{t|t-1}` and `state.metric` the transported metric.
#[allow(clippy::too_many_arguments)]
pub fn update<R: Rng + ?Sized>(
    state: &NatGradState,
    y: &Observation,
    mean_obs: &DVector<f64>,
    model: &DynamicalModel,
    family: &ObservationFamily,
    config: &NatGradConfig,
    t: usize,
    rng: &mut R,
) -> Result<NatGradState> {
    let h = model.jacobian_h(&state.chart_value, t)?;
    let (eta, gamma) = (config.eta.at(t), config.gamma.at(t));
    let fisher = fisher_term(mean_obs, &h, family, config.fisher_mode, y, rng)?;
    let metric = symmetrize(&(state.metric.as_matrix() * (1.0 - gamma) + fisher.as_matrix() * gamma));
    let score = family.grad_logp_wrt_mean(y, mean_obs)? * &h;
    let direction = solve_psd_vec(&metric, &score.transpose())?;
    Ok(NatGradState { chart_value: &state.chart_value + direction * eta, metric })
}

#[derive(Debug, Clone)]
pub struct GradStep {
    pub t: usize,
    /// `s_{t|t-1}`
    pub predicted: DVector<f64>,
    /// Metric after transport, before blending in the new Fisher term.
    pub transported_metric: SymMatrix,
    pub mean_obs: DVector<f64>,
    pub posterior: NatGradState,
}

#[derive(Debug, Clone)]
pub struct GradTrace {
    pub prior: NatGradState,
    pub steps: Vec<GradStep>,
}

impl GradTrace {
    pub fn state(&self, t: usize) -> &NatGradState {
        if t == 0 {
            &self.prior
        } else {
            &self.steps[t - 1].posterior
        }
    }

    pub fn last(&self) -> &NatGradState {
        self.state(self.steps.len())
    }
}

fn check_config(config: &NatGradConfig, horizon: usize) -> Result<()> {
    config.eta.check_range("eta", 1, horizon, 0.0, None)?;
    config.gamma.check_range("gamma", 1, horizon, 0.0, Some(1.0))?;
    Ok(())
}

fn check_prior(s0: &DVector<f64>, j0: &SymMatrix, dim: usize) -> Result<()> {
    if s0.len() != dim || j0.dim() != dim {
        return Err(Error::Dimension(format!(
            "initial state/metric of size {}/{} for dimension {dim}",
            s0.len(),
            j0.dim()
        )));
    }
    if j0.min_eigenvalue() <= 0.0 {
        return Err(Error::SingularMatrix("initial metric is not positive definite".into()));
    }
    Ok(())
}

/// Runs the trajectory natural gradient over every observation of `scenario`.
/// Monte Carlo Fisher draws use a substream of the scenario seed.
pub fn run(scenario: &Scenario, config: &NatGradConfig, s0: DVector<f64>, j0: SymMatrix) -> Result<GradTrace> {
    let model = &scenario.model;
    check_prior(&s0, &j0, model.dim_state())?;
    check_config(config, scenario.horizon())?;
    let mut rng = rng::stream(scenario.seed, rng::ids::FISHER);
    let prior = NatGradState { chart_value: s0, metric: j0 };
    let mut state = prior.clone();
    let mut steps = Vec::with_capacity(scenario.horizon());
    for t in 1..=scenario.horizon() {
        let transported = if config.transport_metric {
            chart_transport(&state, model, t)?.0
        } else {
            NatGradState { chart_value: model.step_dynamics(&state.chart_value, t)?, metric: state.metric.clone() }
        };
        let mean_obs = model.observe(&transported.chart_value, t)?;
        let y = scenario.observation(t);
        state = update(&transported, y, &mean_obs, model, &scenario.family, config, t, &mut rng)?;
        steps.push(GradStep {
            t,
            predicted: transported.chart_value,
            transported_metric: transported.metric,
            mean_obs,
            posterior: state.clone(),
        });
    }
    Ok(GradTrace { prior, steps })
}

/// Ordinary online natural gradient for a static regression model
/// `y_t ~ p(· | h(θ, u_t))`, with no chart machinery.
#[allow(clippy::too_many_arguments)]
pub fn plain_online_natgrad<H, HJ>(
    inputs: &[DVector<f64>],
    observations: &[Observation],
    h: H,
    h_jac: HJ,
    family: &ObservationFamily,
    config: &NatGradConfig,
    theta0: DVector<f64>,
    j0: SymMatrix,
    seed: u64,
) -> Result<GradTrace>
where
    H: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    HJ: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
{
    if inputs.len() != observations.len() {
        return Err(Error::Dimension(format!(
            "{} inputs for {} observations",
            inputs.len(),
            observations.len()
        )));
    }
    check_prior(&theta0, &j0, theta0.len())?;
    check_config(config, observations.len())?;
    let mut rng = rng::stream(seed, rng::ids::FISHER);
    let prior = NatGradState { chart_value: theta0, metric: j0 };
    let mut theta = prior.chart_value.clone();
    let mut metric = prior.metric.clone();
    let mut steps = Vec::with_capacity(observations.len());
    for (i, (u, y)) in inputs.iter().zip(observations).enumerate() {
        let t = i + 1;
        let (eta, gamma) = (config.eta.at(t), config.gamma.at(t));
        let mean_obs = h(&theta, u);
        let jac = h_jac(&theta, u);
        let fisher = fisher_term(&mean_obs, &jac, family, config.fisher_mode, y, &mut rng)?;
        let previous_metric = metric.clone();
        metric = symmetrize(&(metric.as_matrix() * (1.0 - gamma) + fisher.as_matrix() * gamma));
        let grad = (family.grad_logp_wrt_mean(y, &mean_obs)? * &jac).transpose();
        let predicted = theta.clone();
        theta += solve_psd_vec(&metric, &grad)? * eta;
        steps.push(GradStep {
            t,
            predicted,
            transported_metric: previous_metric,
            mean_obs,
            posterior: NatGradState { chart_value: theta.clone(), metric: metric.clone() },
        });
    }
    Ok(GradTrace { prior, steps })
}
