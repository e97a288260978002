#![allow(dead_code)]

use kalnat::prelude::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `B Bᵀ / n + floor I`; well conditioned enough for 1e-10 comparisons.
pub fn random_spd<R: Rng>(n: usize, floor: f64, rng: &mut R) -> SymMatrix {
    let b = random_matrix(n, n, rng);
    SymMatrix::new(&b * b.transpose() / n as f64 + DMatrix::identity(n, n) * floor)
}

/// Running worst case over every covariance/metric seen.
#[derive(Debug, Clone, Copy)]
pub struct MatrixAudit {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub count: usize,
}

impl Default for MatrixAudit {
    fn default() -> Self {
        MatrixAudit { max_asymmetry: 0.0, min_eigenvalue: f64::INFINITY, count: 0 }
    }
}

impl MatrixAudit {
    pub fn see(&mut self, m: &SymMatrix) {
        self.max_asymmetry = self.max_asymmetry.max(m.asymmetry());
        self.min_eigenvalue = self.min_eigenvalue.min(m.min_eigenvalue());
        self.count += 1;
    }

    pub fn see_filter(&mut self, trace: &FilterTrace) {
        self.see(&trace.prior.cov);
        for step in &trace.steps {
            self.see(&step.predicted.cov);
            self.see(&step.posterior.cov);
        }
    }

    pub fn see_gradient(&mut self, trace: &GradTrace) {
        self.see(&trace.prior.metric);
        for step in &trace.steps {
            self.see(&step.transported_metric);
            self.see(&step.posterior.metric);
        }
    }

    pub fn see_continuous(&mut self, trace: &ContinuousTrace) {
        for sample in &trace.samples {
            self.see(&sample.matrix);
        }
    }

    pub fn ok(&self) -> bool {
        self.max_asymmetry <= 1e-12 && self.min_eigenvalue > 0.0
    }
}

/// Posterior of `s_T` for `s_t = F s_{t-1} + w_t`, `y_t = s_t + v_t`, obtained
/// by conditioning the joint Gaussian of `(s_0, w_1, .., w_T)` on all of `y`
/// at once. No recursion involved.
pub fn batch_linear_posterior(
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    ys: &[DVector<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = m0.len();
    let horizon = ys.len();
    let dim_z = n * (horizon + 1);

    let mut mu = DVector::zeros(dim_z);
    mu.rows_mut(0, n).copy_from(m0);
    let mut sigma = DMatrix::zeros(dim_z, dim_z);
    sigma.view_mut((0, 0), (n, n)).copy_from(p0);
    for k in 1..=horizon {
        sigma.view_mut((k * n, k * n), (n, n)).copy_from(q);
    }

    // s_t = A_t z with A_t = [F^t, F^{t-1}, .., F^0, 0, ..]
    let powers: Vec<DMatrix<f64>> = std::iter::successors(Some(DMatrix::identity(n, n)), |p| Some(f * p))
        .take(horizon + 1)
        .collect();
    let selector = |t: usize| {
        let mut a = DMatrix::zeros(n, dim_z);
        for k in 0..=t {
            a.view_mut((0, k * n), (n, n)).copy_from(&powers[t - k]);
        }
        a
    };

    let mut c = DMatrix::zeros(n * horizon, dim_z);
    let mut y = DVector::zeros(n * horizon);
    let mut big_r = DMatrix::zeros(n * horizon, n * horizon);
    for t in 1..=horizon {
        c.view_mut(((t - 1) * n, 0), (n, dim_z)).copy_from(&selector(t));
        y.rows_mut((t - 1) * n, n).copy_from(&ys[t - 1]);
        big_r.view_mut(((t - 1) * n, (t - 1) * n), (n, n)).copy_from(r);
    }

    let cross = &sigma * c.transpose();
    let s = &c * &cross + big_r;
    let chol = s.cholesky().expect("innovation covariance is SPD");
    let gain = chol.solve(&cross.transpose()).transpose();
    let mu_post = &mu + &gain * (y - &c * &mu);
    let sigma_post = &sigma - &gain * cross.transpose();

    let a = selector(horizon);
    let mean = &a * mu_post;
    let cov = &a * sigma_post * a.transpose();
    (mean, (&cov + cov.transpose()) * 0.5)
}

/// Five-point central difference of a scalar function.
pub fn central_gradient<F: Fn(&DVector<f64>) -> f64>(g: F, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-3 * (1.0 + x[i].abs());
        let at = |k: f64| {
            let mut p = x.clone();
            p[i] += k * h;
            g(&p)
        };
        out[i] = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h);
    }
    out
}

pub fn relative_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1e-300)
}
