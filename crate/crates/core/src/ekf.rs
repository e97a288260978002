//! Discrete-time extended Kalman filter with exponential-family observations.
//!
//! The transition step supports an explicit process-noise sequence `Q_t` or
//! pure fading memory, `P_{t|t-1} = (1 + α_t) F P Fᵀ`. The observation step
//! comes in three algebraically equivalent forms: the usual gain form, the
//! information form acting on `P⁻¹`, and a gradient form where the state moves
//! along `P_t` times the score of the observation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::{Observation, ObservationFamily};
use crate::model::{DynamicalModel, Scenario};
use crate::numerics::{inverse_psd, solve_psd, symmetrize, SymMatrix};
use crate::schedule::Schedule;

/// Gaussian approximation `N(mean, cov)` of the state posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Dimension(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(GaussianBelief { mean, cov })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessNoise {
    /// Explicit `Q_t`, stored at index `t - 1`. A single entry is used for every step.
    General(Vec<SymMatrix>),
    /// `Q_t = α_t F P Fᵀ`.
    Fading(Schedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateForm {
    Gain,
    Information,
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfConfig {
    pub noise: ProcessNoise,
    pub form: UpdateForm,
}

impl EkfConfig {
    pub fn fading(alpha: Schedule) -> Self {
        EkfConfig { noise: ProcessNoise::Fading(alpha), form: UpdateForm::Gain }
    }

    pub fn general(q: Vec<SymMatrix>) -> Self {
        EkfConfig { noise: ProcessNoise::General(q), form: UpdateForm::Gain }
    }

    pub fn with_form(mut self, form: UpdateForm) -> Self {
        self.form = form;
        self
    }
}

/// Output of the transition step.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub belief: GaussianBelief,
    /// `ŷ_t = h(s_{t|t-1}, u_t)`
    pub mean_obs: DVector<f64>,
    /// `F_{t-1}`, evaluated at the previous posterior mean.
    pub f_jac: DMatrix<f64>,
}

/// Transition step: push the belief through `f` and add process noise.
pub fn transition(belief: &GaussianBelief, model: &DynamicalModel, t: usize, config: &EkfConfig) -> Result<Prediction> {
    let mean = model.step_dynamics(&belief.mean, t)?;
    let f = model.jacobian_f(&belief.mean, t)?;
    let propagated = &f * belief.cov.as_matrix() * f.transpose();
    let cov = match &config.noise {
        ProcessNoise::General(qs) => {
            let q = match qs.len() {
                0 => return Err(Error::Dimension("empty process-noise sequence".into())),
                1 => &qs[0],
                _ => qs.get(t - 1).ok_or_else(|| {
                    Error::Dimension(format!("no process noise given for t = {t}"))
                })?,
            };
            symmetrize(&(propagated + q.as_matrix()))
        }
        ProcessNoise::Fading(alpha) => symmetrize(&(propagated * (1.0 + alpha.at(t)))),
    };
    if !cov.is_finite() {
        return Err(Error::NonFinite(format!("predicted covariance at t = {t}")));
    }
    let mean_obs = model.observe(&mean, t)?;
    Ok(Prediction { belief: GaussianBelief { mean, cov }, mean_obs, f_jac: f })
}

struct ObservationTerms {
    h: DMatrix<f64>,
    innovation: DVector<f64>,
    obs_cov: SymMatrix,
}

fn observation_terms(
    predicted: &GaussianBelief,
    y: &Observation,
    mean_obs: &DVector<f64>,
    model: &DynamicalModel,
    family: &ObservationFamily,
    t: usize,
) -> Result<ObservationTerms> {
    let h = model.jacobian_h(&predicted.mean, t)?;
    let obs_cov = family.cov_suffstats(mean_obs)?;
    let innovation = family.sufficient_stats(y)? - mean_obs;
    Ok(ObservationTerms { h, innovation, obs_cov })
}

/// Gain form: `K = P Hᵀ (H P Hᵀ + R)⁻¹`, `P_t = (I − K H) P`, `s_t = s + K E`.
pub fn observe_gain(
    predicted: &GaussianBelief,
    y: &Observation,
    mean_obs: &DVector<f64>,
    model: &DynamicalModel,
    family: &ObservationFamily,
    t: usize,
) -> Result<GaussianBelief> {
    let ObservationTerms { h, innovation, obs_cov } =
        observation_terms(predicted, y, mean_obs, model, family, t)?;
    let p = predicted.cov.as_matrix();
    let hp = &h * p;
    let innovation_cov = symmetrize(&(&hp * h.transpose() + obs_cov.as_matrix()));
    // S Kᵀ = H P, since S and P are symmetric.
    let gain = solve_psd(&innovation_cov, &hp)?.transpose();
    let n = p.nrows();
    let cov = symmetrize(&((DMatrix::identity(n, n) - &gain * &h) * p));
    let mean = &predicted.mean + &gain * innovation;
    Ok(GaussianBelief { mean, cov })
}

/// Information form: `P_t⁻¹ = P⁻¹ + Hᵀ R⁻¹ H`, then `s_t = s + P_t Hᵀ R⁻¹ E`.
pub fn observe_information(
    predicted: &GaussianBelief,
    y: &Observation,
    mean_obs: &DVector<f64>,
    model: &DynamicalModel,
    family: &ObservationFamily,
    t: usize,
) -> Result<GaussianBelief> {
    let ObservationTerms { h, innovation, obs_cov } =
        observation_terms(predicted, y, mean_obs, model, family, t)?;
    let cov = posterior_cov_information(&predicted.cov, &h, &obs_cov)?;
    let weighted = solve_psd(&obs_cov, &DMatrix::from_column_slice(innovation.len(), 1, innovation.as_slice()))?;
    let mean = &predicted.mean + cov.as_matrix() * h.transpose() * weighted.column(0);
    Ok(GaussianBelief { mean, cov })
}

/// Gradient form: `P_t` as in the information form and
/// `s_t = s + P_t (∂ ln p(y | ŷ)/∂s)ᵀ` with the score taken through `H`.
pub fn observe_gradient(
    predicted: &GaussianBelief,
    y: &Observation,
    mean_obs: &DVector<f64>,
    model: &DynamicalModel,
    family: &ObservationFamily,
    t: usize,
) -> Result<GaussianBelief> {
    let h = model.jacobian_h(&predicted.mean, t)?;
    let obs_cov = family.cov_suffstats(mean_obs)?;
    let cov = posterior_cov_information(&predicted.cov, &h, &obs_cov)?;
    let score = family.grad_logp_wrt_mean(y, mean_obs)? * &h;
    let mean = &predicted.mean + cov.as_matrix() * score.transpose();
    Ok(GaussianBelief { mean, cov })
}

fn posterior_cov_information(prior: &SymMatrix, h: &DMatrix<f64>, obs_cov: &SymMatrix) -> Result<SymMatrix> {
    let info = inverse_psd(prior)?;
    let fisher = h.transpose() * solve_psd(obs_cov, h)?;
    inverse_psd(&symmetrize(&(info.as_matrix() + fisher)))
}

pub fn observe(
    form: UpdateForm,
    predicted: &GaussianBelief,
    y: &Observation,
    mean_obs: &DVector<f64>,
    model: &DynamicalModel,
    family: &ObservationFamily,
    t: usize,
) -> Result<GaussianBelief> {
    match form {
        UpdateForm::Gain => observe_gain(predicted, y, mean_obs, model, family, t),
        UpdateForm::Information => observe_information(predicted, y, mean_obs, model, family, t),
        UpdateForm::Gradient => observe_gradient(predicted, y, mean_obs, model, family, t),
    }
}

#[derive(Debug, Clone)]
pub struct FilterStep {
    pub t: usize,
    pub predicted: GaussianBelief,
    pub mean_obs: DVector<f64>,
    pub posterior: GaussianBelief,
}

#[derive(Debug, Clone)]
pub struct FilterTrace {
    pub prior: GaussianBelief,
    pub steps: Vec<FilterStep>,
}

impl FilterTrace {
    /// Posterior at time `t` (`t = 0` is the prior).
    pub fn posterior(&self, t: usize) -> &GaussianBelief {
        if t == 0 {
            &self.prior
        } else {
            &self.steps[t - 1].posterior
        }
    }

    pub fn last(&self) -> &GaussianBelief {
        self.posterior(self.steps.len())
    }
}

/// Runs the filter over every observation of `scenario`.
pub fn run(scenario: &Scenario, config: &EkfConfig, s0: DVector<f64>, p0: SymMatrix) -> Result<FilterTrace> {
    let prior = GaussianBelief::new(s0, p0)?;
    if prior.mean.len() != scenario.model.dim_state() {
        return Err(Error::Dimension(format!(
            "initial state of length {} for a {}-dimensional model",
            prior.mean.len(),
            scenario.model.dim_state()
        )));
    }
    if prior.cov.min_eigenvalue() <= 0.0 {
        return Err(Error::SingularMatrix("initial covariance is not positive definite".into()));
    }
    if let ProcessNoise::Fading(alpha) = &config.noise {
        alpha.check_range("alpha", 1, scenario.horizon(), 0.0, None)?;
    }
    let mut belief = prior.clone();
    let mut steps = Vec::with_capacity(scenario.horizon());
    for t in 1..=scenario.horizon() {
        let pred = transition(&belief, &scenario.model, t, config)?;
        let posterior = observe(
            config.form,
            &pred.belief,
            scenario.observation(t),
            &pred.mean_obs,
            &scenario.model,
            &scenario.family,
            t,
        )?;
        belief = posterior.clone();
        steps.push(FilterStep { t, predicted: pred.belief, mean_obs: pred.mean_obs, posterior });
    }
    Ok(FilterTrace { prior, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, default_family, generate_scenario};
    use nalgebra::dmatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn scalar_model(gain: f64) -> DynamicalModel {
        DynamicalModel::new("scalar", 1, 1, move |s, _| s * gain, |s, _| s.clone())
            .with_jacobians(move |_, _| DMatrix::from_element(1, 1, gain), |_, _| DMatrix::identity(1, 1))
    }

    #[test]
    fn transition_examples() {
        let m = scalar_model(1.0);
        let b = GaussianBelief::new(v(&[0.7]), SymMatrix::from_diagonal(&[0.3])).unwrap();
        let pred = transition(&b, &m, 1, &EkfConfig::fading(Schedule::Constant(0.0))).unwrap();
        assert_eq!(pred.belief, b);
        assert_eq!(pred.mean_obs, v(&[0.7]));

        let m2 = scalar_model(2.0);
        let b = GaussianBelief::new(v(&[1.0]), SymMatrix::identity(1)).unwrap();
        let pred = transition(&b, &m2, 1, &EkfConfig::general(vec![SymMatrix::zeros(1)])).unwrap();
        assert_eq!(pred.belief.cov[(0, 0)], 4.0);

        let id2 = builtin("static").unwrap().discrete().unwrap();
        let b = GaussianBelief::new(v(&[0.0, 0.0]), SymMatrix::identity(2)).unwrap();
        let pred = transition(&b, &id2, 1, &EkfConfig::fading(Schedule::Constant(1.0))).unwrap();
        assert_eq!(*pred.belief.cov, DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn zero_fading_equals_zero_noise() {
        let m = builtin("tanhspring").unwrap().discrete().unwrap();
        let b = GaussianBelief::new(v(&[0.4, -0.9]), SymMatrix::new(dmatrix![0.5, 0.1; 0.1, 0.3])).unwrap();
        let a = transition(&b, &m, 3, &EkfConfig::fading(Schedule::Constant(0.0))).unwrap();
        let g = transition(&b, &m, 3, &EkfConfig::general(vec![SymMatrix::zeros(2)])).unwrap();
        assert_eq!(a.belief, g.belief);
    }

    #[test]
    fn scalar_update_in_every_form() {
        let m = scalar_model(1.0);
        let fam = ObservationFamily::gaussian_isotropic(1, 1.0).unwrap();
        let pred = GaussianBelief::new(v(&[0.2]), SymMatrix::identity(1)).unwrap();
        let y = v(&[1.4]);
        for form in [UpdateForm::Gain, UpdateForm::Information, UpdateForm::Gradient] {
            let post = observe(form, &pred, &y, &v(&[0.2]), &m, &fam, 1).unwrap();
            assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15, "{form:?}");
            assert!((post.mean[0] - (0.2 + 1.2 / 2.0)).abs() < 1e-15, "{form:?}");
        }
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_cov() {
        let m = builtin("linear2d").unwrap().discrete().unwrap();
        let fam = default_family("linear2d").unwrap();
        let pred = GaussianBelief::new(v(&[0.3, 0.1]), SymMatrix::identity(2)).unwrap();
        let post = observe_gain(&pred, &v(&[0.3, 0.1]), &v(&[0.3, 0.1]), &m, &fam, 1).unwrap();
        assert_eq!(post.mean, pred.mean);
        assert!(post.cov[(0, 0)] < 1.0 && post.cov[(1, 1)] < 1.0);
    }

    #[test]
    fn uninformative_observation() {
        let m = DynamicalModel::new("flat", 2, 1, |s, _| s.clone(), |_, _| v(&[0.0]))
            .with_jacobians(|_, _| DMatrix::identity(2, 2), |_, _| DMatrix::zeros(1, 2));
        let fam = ObservationFamily::gaussian_isotropic(1, 0.5).unwrap();
        let pred = GaussianBelief::new(v(&[1.0, 2.0]), SymMatrix::new(dmatrix![1.0, 0.2; 0.2, 2.0])).unwrap();
        for form in [UpdateForm::Gain, UpdateForm::Information, UpdateForm::Gradient] {
            let post = observe(form, &pred, &v(&[3.0]), &v(&[0.0]), &m, &fam, 1).unwrap();
            assert!((&post.mean - &pred.mean).amax() < 1e-14);
            assert!((post.cov.as_matrix() - pred.cov.as_matrix()).amax() < 1e-14);
        }
    }

    #[test]
    fn recursive_average_on_static_scalar() {
        let m = DynamicalModel::new("id", 1, 1, |s, _| s.clone(), |s, _| s.clone())
            .with_jacobians(|_, _| DMatrix::identity(1, 1), |_, _| DMatrix::identity(1, 1));
        let fam = ObservationFamily::gaussian_isotropic(1, 1.0).unwrap();
        let c = 2.5;
        let sc = Scenario::from_parts(m, fam, vec![v(&[c]); 21], vec![v(&[c]); 20], 0).unwrap();
        let s0 = -1.0;
        let trace = run(&sc, &EkfConfig::fading(Schedule::Constant(0.0)), v(&[s0]), SymMatrix::identity(1)).unwrap();
        for t in 1..=20 {
            let dev = trace.posterior(t).mean[0] - c;
            assert!((dev - (s0 - c) / (t as f64 + 1.0)).abs() < 1e-13, "t = {t}");
        }
    }

    #[test]
    fn empty_horizon_and_determinism() {
        let m = builtin("linear2d").unwrap().discrete().unwrap();
        let fam = default_family("linear2d").unwrap();
        let cfg = EkfConfig::fading(Schedule::Constant(0.1));
        let empty = generate_scenario(&m, &fam, 0, 1).unwrap();
        let trace = run(&empty, &cfg, v(&[0.0, 0.0]), SymMatrix::identity(2)).unwrap();
        assert!(trace.steps.is_empty());
        assert_eq!(trace.last().mean, v(&[0.0, 0.0]));

        let sc = generate_scenario(&m, &fam, 50, 1).unwrap();
        let a = run(&sc, &cfg, v(&[0.0, 0.0]), SymMatrix::identity(2)).unwrap();
        let b = run(&sc, &cfg, v(&[0.0, 0.0]), SymMatrix::identity(2)).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.posterior, y.posterior);
        }
    }

    #[test]
    fn singular_innovation_is_reported() {
        let m = scalar_model(1.0);
        let fam = ObservationFamily::Bernoulli;
        let pred = GaussianBelief::new(v(&[0.5]), SymMatrix::identity(1)).unwrap();
        let r = observe_gain(&pred, &v(&[1.0]), &v(&[0.0]), &m, &fam, 1);
        assert!(matches!(r, Err(Error::DomainError(_))));
    }

    #[test]
    fn negative_alpha_is_rejected() {
        let m = builtin("linear2d").unwrap().discrete().unwrap();
        let sc = generate_scenario(&m, &default_family("linear2d").unwrap(), 3, 1).unwrap();
        let r = run(&sc, &EkfConfig::fading(Schedule::Constant(-0.5)), v(&[0.0, 0.0]), SymMatrix::identity(2));
        assert!(matches!(r, Err(Error::DomainError(_))));
    }
}
