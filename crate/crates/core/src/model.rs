//! Dynamical systems, the built-in test systems, and synthetic scenarios.

use std::fmt;
use std::sync::Arc;

use nalgebra::{dmatrix, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::{Observation, ObservationFamily};
use crate::numerics::{fd_jacobian, JacobianSpec, SymMatrix};
use crate::rng;

/// `(state, input) -> vector`
pub type StateMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `(state, input) -> Jacobian with respect to state`
pub type JacobianMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

fn check_finite(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Discrete-time system `s_t = f(s_{t-1}, u_t)`, `ŷ_t = h(s_t, u_t)`.
#[derive(Clone)]
pub struct DynamicalModel {
    name: String,
    dim_state: usize,
    dim_input: usize,
    dim_obs: usize,
    transition: StateMap,
    observation: StateMap,
    transition_jac: Option<JacobianMap>,
    observation_jac: Option<JacobianMap>,
    jacobian: JacobianSpec,
    inputs: Arc<dyn Fn(usize) -> DVector<f64> + Send + Sync>,
    initial_state: DVector<f64>,
}

impl fmt::Debug for DynamicalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicalModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_input", &self.dim_input)
            .field("dim_obs", &self.dim_obs)
            .field("jacobian", &self.jacobian)
            .finish_non_exhaustive()
    }
}

impl DynamicalModel {
    /// A model without inputs whose Jacobians are taken by central differences.
    pub fn new<F, H>(name: impl Into<String>, dim_state: usize, dim_obs: usize, f: F, h: H) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        DynamicalModel {
            name: name.into(),
            dim_state,
            dim_input: 0,
            dim_obs,
            transition: Arc::new(f),
            observation: Arc::new(h),
            transition_jac: None,
            observation_jac: None,
            jacobian: JacobianSpec::FiniteDifference { step: None },
            inputs: Arc::new(|_| DVector::zeros(0)),
            initial_state: DVector::zeros(dim_state),
        }
    }

    /// Installs analytic Jacobians and switches the model to use them.
    pub fn with_jacobians<FJ, HJ>(mut self, f_jac: FJ, h_jac: HJ) -> Self
    where
        FJ: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        HJ: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.transition_jac = Some(Arc::new(f_jac));
        self.observation_jac = Some(Arc::new(h_jac));
        self.jacobian = JacobianSpec::Analytic;
        self
    }

    pub fn with_jacobian_spec(mut self, spec: JacobianSpec) -> Self {
        self.jacobian = spec;
        self
    }

    /// Input sequence `t ↦ u_t` (called for `t ≥ 1`).
    pub fn with_inputs<U>(mut self, dim_input: usize, inputs: U) -> Self
    where
        U: Fn(usize) -> DVector<f64> + Send + Sync + 'static,
    {
        self.dim_input = dim_input;
        self.inputs = Arc::new(inputs);
        self
    }

    pub fn with_initial_state(mut self, s0: DVector<f64>) -> Self {
        self.initial_state = s0;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_input(&self) -> usize {
        self.dim_input
    }

    pub fn dim_obs(&self) -> usize {
        self.dim_obs
    }

    pub fn jacobian_spec(&self) -> JacobianSpec {
        self.jacobian
    }

    /// Ground-truth `s_0` used by [`generate_scenario`].
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn input(&self, t: usize) -> DVector<f64> {
        (self.inputs)(t)
    }

    /// `f(s, u_t)`.
    pub fn step_dynamics(&self, s: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        self.check_state(s)?;
        check_finite((self.transition)(s, &self.input(t)), "transition output")
    }

    /// `h(s, u_t)`.
    pub fn observe(&self, s: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        self.check_state(s)?;
        check_finite((self.observation)(s, &self.input(t)), "observation output")
    }

    /// `F = ∂f(s, u_t)/∂s`.
    pub fn jacobian_f(&self, s: &DVector<f64>, t: usize) -> Result<DMatrix<f64>> {
        self.check_state(s)?;
        let u = self.input(t);
        self.jacobian_of(&self.transition, self.transition_jac.as_ref(), s, &u)
    }

    /// `H = ∂h(s, u_t)/∂s`.
    pub fn jacobian_h(&self, s: &DVector<f64>, t: usize) -> Result<DMatrix<f64>> {
        self.check_state(s)?;
        let u = self.input(t);
        self.jacobian_of(&self.observation, self.observation_jac.as_ref(), s, &u)
    }

    /// Central-difference Jacobians regardless of the configured spec.
    pub fn fd_jacobian_f(&self, s: &DVector<f64>, t: usize, step: Option<f64>) -> Result<DMatrix<f64>> {
        let u = self.input(t);
        fd_jacobian(|x| (self.transition)(x, &u), s, step)
    }

    pub fn fd_jacobian_h(&self, s: &DVector<f64>, t: usize, step: Option<f64>) -> Result<DMatrix<f64>> {
        let u = self.input(t);
        fd_jacobian(|x| (self.observation)(x, &u), s, step)
    }

    fn jacobian_of(
        &self,
        map: &StateMap,
        analytic: Option<&JacobianMap>,
        s: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let jac = match (self.jacobian, analytic) {
            (JacobianSpec::Analytic, Some(j)) => j(s, u),
            (JacobianSpec::Analytic, None) => {
                return Err(Error::Dimension(format!(
                    "model `{}` has no analytic Jacobian",
                    self.name
                )))
            }
            (JacobianSpec::FiniteDifference { step }, _) => {
                self.jacobian.validate()?;
                fd_jacobian(|x| map(x, u), s, step)?
            }
        };
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model Jacobian".into()));
        }
        Ok(jac)
    }

    fn check_state(&self, s: &DVector<f64>) -> Result<()> {
        if s.len() != self.dim_state {
            return Err(Error::Dimension(format!(
                "model `{}` expects state dimension {}, got {}",
                self.name,
                self.dim_state,
                s.len()
            )));
        }
        Ok(())
    }
}

/// A ground-truth trajectory with sampled observations.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: DynamicalModel,
    pub family: ObservationFamily,
    /// `s_0 ..= s_T`
    pub true_states: Vec<DVector<f64>>,
    /// `y_1 ..= y_T`, stored at index `t - 1`.
    pub observations: Vec<Observation>,
    pub seed: u64,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    /// `y_t` for `1 ≤ t ≤ T`.
    pub fn observation(&self, t: usize) -> &Observation {
        &self.observations[t - 1]
    }

    /// Assembles a scenario from stored parts, checking dimensions and supports.
    pub fn from_parts(
        model: DynamicalModel,
        family: ObservationFamily,
        true_states: Vec<DVector<f64>>,
        observations: Vec<Observation>,
        seed: u64,
    ) -> Result<Self> {
        if true_states.len() != observations.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} states for {} observations",
                true_states.len(),
                observations.len()
            )));
        }
        if let Some(s) = true_states.iter().find(|s| s.len() != model.dim_state()) {
            return Err(Error::Dimension(format!("state of length {}", s.len())));
        }
        for y in &observations {
            family.sufficient_stats(y)?;
        }
        Ok(Scenario { model, family, true_states, observations, seed })
    }

    /// Same truth and observations with a different filter-side model, e.g.
    /// one that uses finite-difference Jacobians.
    pub fn with_model(&self, model: DynamicalModel) -> Self {
        Scenario { model, ..self.clone() }
    }
}

/// Noiseless ground truth from the model's initial state plus observations
/// `y_t ~ p_obs(· | h(s_t, u_t))`, reproducible from `seed`.
pub fn generate_scenario(
    model: &DynamicalModel,
    family: &ObservationFamily,
    horizon: usize,
    seed: u64,
) -> Result<Scenario> {
    if family.stat_dim() != model.dim_obs() {
        return Err(Error::Dimension(format!(
            "model `{}` predicts {} statistics but the {} family has {}",
            model.name(),
            model.dim_obs(),
            family.name(),
            family.stat_dim()
        )));
    }
    let mut rng = rng::stream(seed, rng::ids::OBSERVATIONS);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon);
    let mut s = model.initial_state().clone();
    states.push(s.clone());
    for t in 1..=horizon {
        s = model.step_dynamics(&s, t)?;
        let mean = model.observe(&s, t)?;
        family.check_mean(&mean)?;
        observations.push(family.sample(&mean, &mut rng));
        states.push(s.clone());
    }
    Ok(Scenario {
        model: model.clone(),
        family: family.clone(),
        true_states: states,
        observations,
        seed,
    })
}

/// Continuous-time system `ds/dt = f(s, u(t))` observed through `h(s, u(t))`
/// with a smooth observation path `y(t)` and observation covariance `R(t)`.
#[derive(Clone)]
pub struct ContinuousModel {
    name: String,
    dim_state: usize,
    dim_obs: usize,
    field: StateMap,
    observation: StateMap,
    field_jac: Option<JacobianMap>,
    observation_jac: Option<JacobianMap>,
    input: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    obs_cov: Arc<dyn Fn(f64) -> SymMatrix + Send + Sync>,
    obs_path: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    initial_state: DVector<f64>,
}

impl fmt::Debug for ContinuousModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_obs", &self.dim_obs)
            .finish_non_exhaustive()
    }
}

impl ContinuousModel {
    /// Model with constant observation covariance `obs_cov`, no inputs,
    /// finite-difference Jacobians and a zero observation path.
    pub fn new<F, H>(
        name: impl Into<String>,
        dim_state: usize,
        dim_obs: usize,
        field: F,
        observation: H,
        obs_cov: SymMatrix,
    ) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ContinuousModel {
            name: name.into(),
            dim_state,
            dim_obs,
            field: Arc::new(field),
            observation: Arc::new(observation),
            field_jac: None,
            observation_jac: None,
            input: Arc::new(|_| DVector::zeros(0)),
            obs_cov: Arc::new(move |_| obs_cov.clone()),
            obs_path: Arc::new(move |_| DVector::zeros(dim_obs)),
            initial_state: DVector::zeros(dim_state),
        }
    }

    pub fn with_jacobians<FJ, HJ>(mut self, f_jac: FJ, h_jac: HJ) -> Self
    where
        FJ: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        HJ: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.field_jac = Some(Arc::new(f_jac));
        self.observation_jac = Some(Arc::new(h_jac));
        self
    }

    pub fn with_input<U>(mut self, input: U) -> Self
    where
        U: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.input = Arc::new(input);
        self
    }

    pub fn with_obs_cov<R>(mut self, obs_cov: R) -> Self
    where
        R: Fn(f64) -> SymMatrix + Send + Sync + 'static,
    {
        self.obs_cov = Arc::new(obs_cov);
        self
    }

    pub fn with_obs_path<Y>(mut self, path: Y) -> Self
    where
        Y: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.obs_path = Arc::new(path);
        self
    }

    pub fn with_initial_state(mut self, s0: DVector<f64>) -> Self {
        self.initial_state = s0;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_obs(&self) -> usize {
        self.dim_obs
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn input(&self, t: f64) -> DVector<f64> {
        (self.input)(t)
    }

    pub fn field(&self, s: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        check_finite((self.field)(s, &self.input(t)), "vector field")
    }

    pub fn observe(&self, s: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        check_finite((self.observation)(s, &self.input(t)), "observation map")
    }

    pub fn jacobian_f(&self, s: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        let u = self.input(t);
        match &self.field_jac {
            Some(j) => Ok(j(s, &u)),
            None => fd_jacobian(|x| (self.field)(x, &u), s, None),
        }
    }

    pub fn jacobian_h(&self, s: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        let u = self.input(t);
        match &self.observation_jac {
            Some(j) => Ok(j(s, &u)),
            None => fd_jacobian(|x| (self.observation)(x, &u), s, None),
        }
    }

    pub fn obs_cov(&self, t: f64) -> SymMatrix {
        (self.obs_cov)(t)
    }

    /// The observation path `y(t)`.
    pub fn obs(&self, t: f64) -> DVector<f64> {
        (self.obs_path)(t)
    }
}

/// A registered model.
#[derive(Debug, Clone)]
pub enum Builtin {
    Discrete(DynamicalModel),
    Continuous(ContinuousModel),
}

impl Builtin {
    pub fn discrete(self) -> Result<DynamicalModel> {
        match self {
            Builtin::Discrete(m) => Ok(m),
            Builtin::Continuous(m) => Err(Error::UnknownModel(format!(
                "{} is a continuous-time model",
                m.name()
            ))),
        }
    }

    pub fn continuous(self) -> Result<ContinuousModel> {
        match self {
            Builtin::Continuous(m) => Ok(m),
            Builtin::Discrete(m) => Err(Error::UnknownModel(format!(
                "{} is a discrete-time model",
                m.name()
            ))),
        }
    }
}

/// Registered names, sorted.
pub const BUILTIN_NAMES: [&str; 6] = [
    "linear-ct",
    "linear2d",
    "logistic-static",
    "pendulum-ct",
    "static",
    "tanhspring",
];

/// Step size of the tanh spring; with `‖A‖₂ ≤ 2` it keeps `‖F − I‖₂ ≤ 0.2`.
pub const TANHSPRING_EPS: f64 = 0.1;

pub fn tanhspring_matrix() -> DMatrix<f64> {
    dmatrix![0.0, 1.5; -1.5, -0.3]
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic regressor `u_t = (1, 2 sin(0.9 t + 0.3))` shared by the static models.
fn regressor(t: usize) -> DVector<f64> {
    DVector::from_row_slice(&[1.0, 2.0 * (0.9 * t as f64 + 0.3).sin()])
}

pub fn builtin(name: &str) -> Result<Builtin> {
    let model = match name {
        "static" => Builtin::Discrete(
            DynamicalModel::new(
                "static",
                2,
                1,
                |s, _| s.clone(),
                |s, u| DVector::from_element(1, u.dot(s)),
            )
            .with_jacobians(|s, _| DMatrix::identity(s.len(), s.len()), |_, u| DMatrix::from_row_slice(1, u.len(), u.as_slice()))
            .with_inputs(2, regressor)
            .with_initial_state(DVector::from_row_slice(&[0.5, -1.0])),
        ),
        "logistic-static" => Builtin::Discrete(
            DynamicalModel::new(
                "logistic-static",
                2,
                1,
                |s, _| s.clone(),
                |s, u| DVector::from_element(1, sigmoid(u.dot(s))),
            )
            .with_jacobians(
                |s, _| DMatrix::identity(s.len(), s.len()),
                |s, u| {
                    let p = sigmoid(u.dot(s));
                    DMatrix::from_row_slice(1, u.len(), u.as_slice()) * (p * (1.0 - p))
                },
            )
            .with_inputs(2, regressor)
            .with_initial_state(DVector::from_row_slice(&[0.3, 1.5])),
        ),
        "linear2d" => {
            let (c, s) = (0.3f64.cos(), 0.3f64.sin());
            let a = dmatrix![c, -s; s, c] * 0.99;
            let a_jac = a.clone();
            Builtin::Discrete(
                DynamicalModel::new("linear2d", 2, 2, move |x, _| &a * x, |x, _| x.clone())
                    .with_jacobians(move |_, _| a_jac.clone(), |_, _| DMatrix::identity(2, 2))
                    .with_initial_state(DVector::from_row_slice(&[1.0, 0.0])),
            )
        }
        "tanhspring" => {
            let a = tanhspring_matrix();
            let a_jac = a.clone();
            Builtin::Discrete(
                DynamicalModel::new(
                    "tanhspring",
                    2,
                    2,
                    move |x, _| x + (&a * x).map(f64::tanh) * TANHSPRING_EPS,
                    |x, _| DVector::from_row_slice(&[x[0], x[1] + 0.1 * x[0] * x[0]]),
                )
                .with_jacobians(
                    move |x, _| {
                        let slope = (&a_jac * x).map(|v| 1.0 - v.tanh().powi(2));
                        DMatrix::identity(2, 2)
                            + DMatrix::from_diagonal(&slope) * &a_jac * TANHSPRING_EPS
                    },
                    |x, _| dmatrix![1.0, 0.0; 0.2 * x[0], 1.0],
                )
                .with_initial_state(DVector::from_row_slice(&[1.0, -1.0])),
            )
        }
        "pendulum-ct" => Builtin::Continuous(
            ContinuousModel::new(
                "pendulum-ct",
                2,
                1,
                |s, _| DVector::from_row_slice(&[s[1], -s[0].sin()]),
                |s, _| DVector::from_element(1, s[0]),
                SymMatrix::from_diagonal(&[0.1]),
            )
            .with_jacobians(
                |s, _| dmatrix![0.0, 1.0; -s[0].cos(), 0.0],
                |_, _| dmatrix![1.0, 0.0],
            )
            // Swing of amplitude 0.8 with a small smooth perturbation.
            .with_obs_path(|t| DVector::from_element(1, 0.8 * (0.95 * t).cos() + 0.05 * (3.0 * t).sin()))
            .with_initial_state(DVector::from_row_slice(&[0.6, 0.2])),
        ),
        "linear-ct" => Builtin::Continuous(
            ContinuousModel::new(
                "linear-ct",
                1,
                1,
                |s, u| DVector::from_element(1, -0.5 * s[0] + u[0]),
                |s, _| s.clone(),
                SymMatrix::from_diagonal(&[0.05]),
            )
            .with_jacobians(|_, _| DMatrix::from_element(1, 1, -0.5), |_, _| DMatrix::identity(1, 1))
            .with_input(|t| DVector::from_element(1, (2.0 * t).sin()))
            .with_obs_path(|t| DVector::from_element(1, 1.0 - 0.6 * t + 0.3 * (2.0 * t).sin()))
            .with_initial_state(DVector::from_element(1, 0.5)),
        ),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(model)
}

/// The observation family each built-in discrete model is paired with by default.
pub fn default_family(name: &str) -> Result<ObservationFamily> {
    match name {
        "static" => ObservationFamily::gaussian_isotropic(1, 0.25),
        "logistic-static" => Ok(ObservationFamily::Bernoulli),
        "linear2d" | "tanhspring" => ObservationFamily::gaussian_isotropic(2, 0.1),
        "pendulum-ct" | "linear-ct" => Err(Error::UnknownModel(format!(
            "{name} is continuous-time and carries its own observation covariance"
        ))),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}
