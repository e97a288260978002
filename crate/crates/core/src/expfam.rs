//! Exponential-family observation models in mean parameterization.
//!
//! A family is described by its sufficient statistics `T(y)` and the mean
//! parameter `ŷ = E[T(y)]`. In these coordinates the Fisher matrix is the
//! inverse covariance of `T`, and the score is `(T(y) - ŷ)ᵀ Cov(T)⁻¹`.
//!
//! Observations are plain vectors:
//! * gaussian: the observed vector itself,
//! * bernoulli: a single entry, `0` or `1`,
//! * categorical: a single entry holding the class index `0..K`.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{inverse_psd, solve_psd_vec, symmetrize, SymMatrix};

pub type Observation = DVector<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationFamily {
    /// Gaussian with fixed covariance; `T(y) = y`.
    Gaussian { cov: SymMatrix, chol: DMatrix<f64> },
    /// `T(y) = y ∈ {0, 1}`, mean `ŷ ∈ (0, 1)`.
    Bernoulli,
    /// One-hot over the first `K − 1` classes; the last class is the reference.
    Categorical { classes: usize },
}

impl ObservationFamily {
    pub fn gaussian(cov: SymMatrix) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(cov.as_matrix().clone())
            .ok_or_else(|| {
                Error::SingularMatrix("gaussian observation covariance is not SPD".into())
            })?
            .l();
        Ok(ObservationFamily::Gaussian { cov, chol })
    }

    /// Isotropic gaussian `N(ŷ, var·I)` in dimension `dim`.
    pub fn gaussian_isotropic(dim: usize, var: f64) -> Result<Self> {
        Self::gaussian(SymMatrix::scaled_identity(dim, var))
    }

    pub fn categorical(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::DomainError(format!(
                "categorical family needs at least 2 classes, got {classes}"
            )));
        }
        Ok(ObservationFamily::Categorical { classes })
    }

    /// Length of the sufficient-statistic (and mean-parameter) vector.
    pub fn stat_dim(&self) -> usize {
        match self {
            ObservationFamily::Gaussian { cov, .. } => cov.dim(),
            ObservationFamily::Bernoulli => 1,
            ObservationFamily::Categorical { classes } => classes - 1,
        }
    }

    /// Length of a raw observation vector.
    pub fn obs_dim(&self) -> usize {
        match self {
            ObservationFamily::Gaussian { cov, .. } => cov.dim(),
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObservationFamily::Gaussian { .. } => "gaussian",
            ObservationFamily::Bernoulli => "bernoulli",
            ObservationFamily::Categorical { .. } => "categorical",
        }
    }

    /// Checks that `mean` lies strictly inside the mean-parameter domain.
    pub fn check_mean(&self, mean: &DVector<f64>) -> Result<()> {
        if mean.len() != self.stat_dim() {
            return Err(Error::Dimension(format!(
                "{} mean has length {}, expected {}",
                self.name(),
                mean.len(),
                self.stat_dim()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} mean parameter", self.name())));
        }
        match self {
            ObservationFamily::Gaussian { .. } => Ok(()),
            ObservationFamily::Bernoulli => {
                let p = mean[0];
                if p > 0.0 && p < 1.0 {
                    Ok(())
                } else {
                    Err(Error::DomainError(format!("bernoulli mean {p} not in (0, 1)")))
                }
            }
            ObservationFamily::Categorical { .. } => {
                let total: f64 = mean.iter().sum();
                if mean.iter().all(|&p| p > 0.0 && p < 1.0) && total < 1.0 {
                    Ok(())
                } else {
                    Err(Error::DomainError(format!(
                        "categorical mean {:?} not in the open simplex",
                        mean.as_slice()
                    )))
                }
            }
        }
    }

    /// `T(y)`.
    pub fn sufficient_stats(&self, y: &Observation) -> Result<DVector<f64>> {
        if y.len() != self.obs_dim() {
            return Err(Error::OutOfSupport(format!(
                "{} observation has length {}, expected {}",
                self.name(),
                y.len(),
                self.obs_dim()
            )));
        }
        match self {
            ObservationFamily::Gaussian { .. } => {
                if y.iter().all(|v| v.is_finite()) {
                    Ok(y.clone())
                } else {
                    Err(Error::OutOfSupport("non-finite gaussian observation".into()))
                }
            }
            ObservationFamily::Bernoulli => {
                if y[0] == 0.0 || y[0] == 1.0 {
                    Ok(y.clone())
                } else {
                    Err(Error::OutOfSupport(format!("bernoulli observation {}", y[0])))
                }
            }
            ObservationFamily::Categorical { classes } => {
                let k = y[0];
                if k < 0.0 || k.fract() != 0.0 || k >= *classes as f64 {
                    return Err(Error::OutOfSupport(format!(
                        "class index {k} with {classes} classes"
                    )));
                }
                let mut t = DVector::zeros(classes - 1);
                if (k as usize) < classes - 1 {
                    t[k as usize] = 1.0;
                }
                Ok(t)
            }
        }
    }

    /// `Cov(T | ŷ)`.
    pub fn cov_suffstats(&self, mean: &DVector<f64>) -> Result<SymMatrix> {
        self.check_mean(mean)?;
        Ok(match self {
            ObservationFamily::Gaussian { cov, .. } => cov.clone(),
            ObservationFamily::Bernoulli => SymMatrix::from_diagonal(&[mean[0] * (1.0 - mean[0])]),
            ObservationFamily::Categorical { .. } => {
                symmetrize(&(DMatrix::from_diagonal(mean) - mean * mean.transpose()))
            }
        })
    }

    /// `ln p(y | ŷ)` up to a constant that does not depend on `ŷ`.
    pub fn log_density(&self, y: &Observation, mean: &DVector<f64>) -> Result<f64> {
        let t = self.sufficient_stats(y)?;
        self.check_mean(mean)?;
        Ok(match self {
            ObservationFamily::Gaussian { cov, .. } => {
                let r = &t - mean;
                -0.5 * r.dot(&solve_psd_vec(cov, &r)?)
            }
            ObservationFamily::Bernoulli => {
                let p = mean[0];
                t[0] * p.ln() + (1.0 - t[0]) * (1.0 - p).ln()
            }
            ObservationFamily::Categorical { classes } => {
                let k = y[0] as usize;
                if k < classes - 1 {
                    mean[k].ln()
                } else {
                    (1.0 - mean.sum()).ln()
                }
            }
        })
    }

    /// `∂ ln p(y | ŷ) / ∂ŷ = (T(y) − ŷ)ᵀ Cov(T)⁻¹`, as a row vector.
    pub fn grad_logp_wrt_mean(&self, y: &Observation, mean: &DVector<f64>) -> Result<RowDVector<f64>> {
        let t = self.sufficient_stats(y)?;
        let cov = self.cov_suffstats(mean)?;
        Ok(solve_psd_vec(&cov, &(t - mean))?.transpose())
    }

    /// Fisher matrix with respect to the mean parameter: `Cov(T)⁻¹`.
    pub fn fisher_wrt_mean(&self, mean: &DVector<f64>) -> Result<SymMatrix> {
        inverse_psd(&self.cov_suffstats(mean)?)
    }

    /// Draws one observation from `p(· | ŷ)`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &DVector<f64>, rng: &mut R) -> Observation {
        match self {
            ObservationFamily::Gaussian { chol, .. } => {
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                mean + chol * z
            }
            ObservationFamily::Bernoulli => {
                let u: f64 = rng.random();
                DVector::from_element(1, if u < mean[0] { 1.0 } else { 0.0 })
            }
            ObservationFamily::Categorical { classes } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut class = classes - 1;
                for (k, p) in mean.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        class = k;
                        break;
                    }
                }
                DVector::from_element(1, class as f64)
            }
        }
    }

    /// Empirical `Cov(f(y), T(y))` over `n` draws at `ŷ`; this is the natural
    /// gradient of `E f` in the natural parameterization.
    pub fn natgrad_of_expectation<F, R>(
        &self,
        mean: &DVector<f64>,
        f: F,
        n: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>>
    where
        F: Fn(&Observation) -> f64,
        R: Rng + ?Sized,
    {
        self.check_mean(mean)?;
        let n = n.max(1);
        let mut values = Vec::with_capacity(n);
        let mut stats = Vec::with_capacity(n);
        for _ in 0..n {
            let y = self.sample(mean, rng);
            values.push(f(&y));
            stats.push(self.sufficient_stats(&y)?);
        }
        let f_mean = values.iter().sum::<f64>() / n as f64;
        let t_mean = stats.iter().fold(DVector::zeros(self.stat_dim()), |acc, t| acc + t) / n as f64;
        let cov = values
            .iter()
            .zip(&stats)
            .fold(DVector::zeros(self.stat_dim()), |acc, (v, t)| {
                acc + (t - &t_mean) * (v - f_mean)
            });
        Ok(cov / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::dmatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn sufficient_stats_examples() {
        let g = ObservationFamily::gaussian_isotropic(2, 1.0).unwrap();
        assert_eq!(g.sufficient_stats(&v(&[1.5, -2.0])).unwrap(), v(&[1.5, -2.0]));
        let c = ObservationFamily::categorical(3).unwrap();
        assert_eq!(c.sufficient_stats(&v(&[2.0])).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(c.sufficient_stats(&v(&[1.0])).unwrap(), v(&[0.0, 1.0]));
        let b = ObservationFamily::Bernoulli;
        assert_eq!(b.sufficient_stats(&v(&[1.0])).unwrap(), v(&[1.0]));
    }

    #[test]
    fn out_of_support() {
        let c = ObservationFamily::categorical(3).unwrap();
        assert!(matches!(c.sufficient_stats(&v(&[3.0])), Err(Error::OutOfSupport(_))));
        assert!(matches!(c.sufficient_stats(&v(&[0.5])), Err(Error::OutOfSupport(_))));
        let b = ObservationFamily::Bernoulli;
        assert!(matches!(b.sufficient_stats(&v(&[0.3])), Err(Error::OutOfSupport(_))));
        assert!(ObservationFamily::categorical(1).is_err());
    }

    #[test]
    fn covariance_examples() {
        let g = ObservationFamily::gaussian(SymMatrix::from_diagonal(&[0.1, 0.1])).unwrap();
        assert_eq!(*g.cov_suffstats(&v(&[3.0, 4.0])).unwrap(), dmatrix![0.1, 0.0; 0.0, 0.1]);
        let b = ObservationFamily::Bernoulli;
        assert_eq!(b.cov_suffstats(&v(&[0.5])).unwrap()[(0, 0)], 0.25);
        let c = ObservationFamily::categorical(3).unwrap();
        let cov = c.cov_suffstats(&v(&[0.2, 0.3])).unwrap();
        assert!((cov.as_matrix() - dmatrix![0.16, -0.06; -0.06, 0.21]).amax() < 1e-15);
    }

    #[test]
    fn boundary_means_are_rejected() {
        let b = ObservationFamily::Bernoulli;
        assert!(matches!(b.cov_suffstats(&v(&[0.0])), Err(Error::DomainError(_))));
        assert!(matches!(b.fisher_wrt_mean(&v(&[1.0])), Err(Error::DomainError(_))));
        let c = ObservationFamily::categorical(3).unwrap();
        assert!(matches!(c.cov_suffstats(&v(&[0.5, 0.5])), Err(Error::DomainError(_))));
    }

    #[test]
    fn categorical_covariance_matches_monte_carlo() {
        let c = ObservationFamily::categorical(3).unwrap();
        let mean = v(&[0.2, 0.3]);
        let exact = c.cov_suffstats(&mean).unwrap();
        let mut rng = rng::stream(11, 0);
        let n = 1_000_000;
        // z_ij = (T_i - ŷ_i)(T_j - ŷ_j) has expectation Cov_ij.
        let mut sum = DMatrix::<f64>::zeros(2, 2);
        let mut sum_sq = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let d = c.sufficient_stats(&c.sample(&mean, &mut rng)).unwrap() - &mean;
            let z = &d * d.transpose();
            sum_sq += z.component_mul(&z);
            sum += z;
        }
        for i in 0..2 {
            for j in 0..2 {
                let m = sum[(i, j)] / n as f64;
                let var = sum_sq[(i, j)] / n as f64 - m * m;
                let se = (var / n as f64).sqrt();
                assert!(
                    (m - exact[(i, j)]).abs() < 3.0 * se,
                    "entry ({i},{j}): {m} vs {}",
                    exact[(i, j)]
                );
            }
        }
    }

    #[test]
    fn log_density_examples() {
        let g = ObservationFamily::gaussian_isotropic(1, 1.0).unwrap();
        let d = g.log_density(&v(&[0.0]), &v(&[1.0])).unwrap() - g.log_density(&v(&[0.0]), &v(&[0.0])).unwrap();
        assert!((d + 0.5).abs() < 1e-15);
        let at_mode = g.log_density(&v(&[0.7]), &v(&[0.7])).unwrap();
        for m in [-1.0, 0.0, 0.5, 0.69, 0.71, 2.0] {
            assert!(g.log_density(&v(&[0.7]), &v(&[m])).unwrap() < at_mode);
        }
        let b = ObservationFamily::Bernoulli;
        assert_eq!(
            b.log_density(&v(&[0.0]), &v(&[0.5])).unwrap(),
            b.log_density(&v(&[1.0]), &v(&[0.5])).unwrap()
        );
    }

    #[test]
    fn gradient_examples() {
        let g = ObservationFamily::gaussian_isotropic(1, 2.0).unwrap();
        assert!((g.grad_logp_wrt_mean(&v(&[3.0]), &v(&[1.0])).unwrap()[0] - 1.0).abs() < 1e-15);
        let g2 = ObservationFamily::gaussian_isotropic(2, 0.3).unwrap();
        assert_eq!(g2.grad_logp_wrt_mean(&v(&[0.2, 0.4]), &v(&[0.2, 0.4])).unwrap().amax(), 0.0);

        let b = ObservationFamily::Bernoulli;
        let grad = b.grad_logp_wrt_mean(&v(&[1.0]), &v(&[0.25])).unwrap()[0];
        let h = 1e-6;
        let fd = (b.log_density(&v(&[1.0]), &v(&[0.25 + h])).unwrap()
            - b.log_density(&v(&[1.0]), &v(&[0.25 - h])).unwrap())
            / (2.0 * h);
        assert!((grad - fd).abs() < 1e-6 * grad.abs());
    }

    #[test]
    fn fisher_examples() {
        let r = SymMatrix::new(dmatrix![2.0, 0.3; 0.3, 1.0]);
        let g = ObservationFamily::gaussian(r.clone()).unwrap();
        let fisher = g.fisher_wrt_mean(&v(&[0.0, 0.0])).unwrap();
        assert!((fisher.as_matrix() * r.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-12);
        let b = ObservationFamily::Bernoulli;
        assert!((b.fisher_wrt_mean(&v(&[0.5])).unwrap()[(0, 0)] - 4.0).abs() < 1e-14);
        let c = ObservationFamily::categorical(3).unwrap();
        let mean = v(&[0.2, 0.3]);
        let prod = c.fisher_wrt_mean(&mean).unwrap().as_matrix() * c.cov_suffstats(&mean).unwrap().as_matrix();
        assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn sampling_examples() {
        let mut rng = rng::stream(3, 0);
        let g = ObservationFamily::gaussian_isotropic(1, 0.5).unwrap();
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| g.sample(&v(&[1.2]), &mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 1.2).abs() < 4.0 * (0.5 / n as f64).sqrt());

        let b = ObservationFamily::Bernoulli;
        let ones = (0..10_000)
            .filter(|_| b.sample(&v(&[1.0 - 1e-9]), &mut rng)[0] == 1.0)
            .count();
        assert!(ones as f64 / 1e4 >= 0.999);

        let c = ObservationFamily::categorical(3).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[c.sample(&v(&[1.0 / 3.0, 1.0 / 3.0]), &mut rng)[0] as usize] += 1;
        }
        for k in counts {
            assert!((k as f64 / 1e4 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn natgrad_of_expectation_examples() {
        let mut rng = rng::stream(5, 0);
        let b = ObservationFamily::Bernoulli;
        let zero = b.natgrad_of_expectation(&v(&[0.3]), |_| 2.5, 1000, &mut rng).unwrap();
        assert!(zero.amax() < 1e-12);

        let n = 100_000;
        let g = ObservationFamily::gaussian_isotropic(1, 1.0).unwrap();
        let c = g.natgrad_of_expectation(&v(&[0.4]), |y| y[0], n, &mut rng).unwrap();
        assert!((c[0] - 1.0).abs() < 5.0 / (n as f64).sqrt());

        let c = b.natgrad_of_expectation(&v(&[0.5]), |y| y[0], n, &mut rng).unwrap();
        assert!((c[0] - 0.25).abs() < 5.0 / (n as f64).sqrt());
    }
}
