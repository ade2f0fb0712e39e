//! Gaussian-process prior and predictive machinery.
//!
//! The prior mean is fixed at zero. The kernel matrix over the archive is
//! called the prior covariance throughout, to keep it apart from the
//! choice-set size `K`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky_with_jitter, symmetrize};
use crate::{Error, Result};

/// Diagonal entries of a predictive covariance that fall below zero by at
/// most this much are rounding noise and are clamped to zero.
const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// One lengthscale per input dimension, or a single shared one.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    /// Added to the diagonal of the prior covariance.
    pub jitter: f64,
}

impl KernelConfig {
    /// Kernel with the default jitter of `1e-6 · signal_variance`.
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        Self {
            family,
            lengthscales,
            signal_variance,
            jitter: 1e-6 * signal_variance,
        }
    }

    pub fn matern52(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        Self::new(KernelFamily::Matern52, lengthscales, signal_variance)
    }

    pub fn squared_exponential(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        Self::new(KernelFamily::SquaredExponential, lengthscales, signal_variance)
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::config("kernel needs at least one lengthscale"));
        }
        if !self.lengthscales.iter().all(|l| l.is_finite() && *l > 0.0) {
            return Err(Error::config("lengthscales must be finite and positive"));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(Error::config("signal variance must be finite and positive"));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::config("jitter must be finite and non-negative"));
        }
        Ok(())
    }

    /// Checks that `dim`-dimensional inputs are compatible with the lengthscales.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() == 1 || self.lengthscales.len() == dim {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "points have dimension {dim} but the kernel has {} lengthscales",
                self.lengthscales.len()
            )))
        }
    }

    #[inline]
    fn inv_sq_lengthscale(&self, d: usize) -> f64 {
        let l = if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[d]
        };
        1.0 / (l * l)
    }

    #[inline]
    fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(d, (x, y))| (x - y) * (x - y) * self.inv_sq_lengthscale(d))
            .sum()
    }

    /// `k(a, b)`. No jitter is included.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2 = self.scaled_sq_dist(a, b);
        match self.family {
            KernelFamily::SquaredExponential => self.signal_variance * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                self.signal_variance * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
        }
    }

    /// `∂k(a, b)/∂a`, written into `out`.
    pub fn grad_first(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let r2 = self.scaled_sq_dist(a, b);
        // Both families have ∂k/∂a_d = -c(r) (a_d - b_d) / ℓ_d².
        let c = match self.family {
            KernelFamily::SquaredExponential => self.signal_variance * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                self.signal_variance * (5.0 / 3.0) * (1.0 + s5r) * (-s5r).exp()
            }
        };
        for (d, o) in out.iter_mut().enumerate() {
            *o = -c * (a[d] - b[d]) * self.inv_sq_lengthscale(d);
        }
    }
}

/// Zero-mean GP prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpPrior {
    pub kernel: KernelConfig,
}

impl GpPrior {
    pub fn new(kernel: KernelConfig) -> Self {
        Self { kernel }
    }

    pub fn mean(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

fn check_points(points: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    for p in points {
        if p.len() != dim {
            return Err(Error::contract(format!(
                "{what}: expected dimension {dim}, got {}",
                p.len()
            )));
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::contract(format!("{what}: non-finite coordinate")));
        }
    }
    Ok(())
}

fn common_dim(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<usize> {
    a.first().or_else(|| b.first()).map(Vec::len)
}

/// Kernel matrix `M_ij = k(a_i, b_j)`. When both lists are the same points the
/// result is exactly symmetric and carries the configured jitter on its
/// diagonal.
pub fn kernel_matrix(
    points_a: &[Vec<f64>],
    points_b: &[Vec<f64>],
    cfg: &KernelConfig,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    if let Some(dim) = common_dim(points_a, points_b) {
        cfg.check_dim(dim)?;
        check_points(points_a, dim, "kernel_matrix")?;
        check_points(points_b, dim, "kernel_matrix")?;
    }
    if points_a == points_b {
        Ok(prior_covariance(points_a, cfg))
    } else {
        Ok(cross_covariance(points_a, points_b, cfg))
    }
}

/// Symmetric prior covariance with jitter, no validation.
pub(crate) fn prior_covariance(points: &[Vec<f64>], cfg: &KernelConfig) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = cfg.signal_variance + cfg.jitter;
        for j in 0..i {
            let v = cfg.eval(&points[i], &points[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub(crate) fn cross_covariance(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &KernelConfig) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| cfg.eval(&a[i], &b[j]))
}

/// Median pairwise Euclidean distance of the points after mapping each
/// coordinate to `[0, 1]` by `widths`, rescaled back to a per-dimension
/// lengthscale. Falls back to the widths themselves for fewer than two points.
pub fn median_heuristic_lengthscales(points: &[Vec<f64>], widths: &[f64]) -> Vec<f64> {
    let mut dists = Vec::new();
    for i in 0..points.len() {
        for j in 0..i {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .zip(widths)
                .map(|((a, b), w)| ((a - b) / w).powi(2))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    let scale = if dists.is_empty() {
        1.0
    } else {
        let m = crate::stats::median(&dists);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    widths.iter().map(|w| w * scale).collect()
}

/// Precomputed conditional-prediction state: `alpha = Σ⁻¹ f` and the
/// variance-reduction matrix `R = Σ⁻¹ - Σ⁻¹ C Σ⁻¹`, where `Σ` is the prior
/// covariance of the training points and `C` the latent covariance. Then
/// `μ(x) = k(x)ᵀ alpha` and `s²(x) = k(x, x) - k(x)ᵀ R k(x)`.
#[derive(Debug, Clone)]
pub struct Predictor {
    kernel: KernelConfig,
    train: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    reduction: DMatrix<f64>,
}

/// Posterior summary of a reference point `a`: its mean, variance and
/// `R k(a)`.
#[derive(Debug, Clone)]
pub struct Anchor {
    point: Vec<f64>,
    mean: f64,
    variance: f64,
    rk: DVector<f64>,
}

impl Anchor {
    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Mean and variance at one point together with their input gradients.
#[derive(Debug, Clone)]
pub struct PointPrediction {
    pub mean: f64,
    pub variance: f64,
    pub mean_grad: Vec<f64>,
    pub variance_grad: Vec<f64>,
}

impl Predictor {
    pub(crate) fn from_parts(
        kernel: KernelConfig,
        train: Vec<Vec<f64>>,
        alpha: DVector<f64>,
        reduction: DMatrix<f64>,
    ) -> Self {
        Self { kernel, train, alpha, reduction }
    }

    /// Conditions on a Gaussian latent `N(latent_mean, latent_cov)` at the
    /// training points. A zero `latent_cov` gives noiseless interpolation.
    pub fn from_latent(
        prior: &GpPrior,
        train: &[Vec<f64>],
        latent_mean: &DVector<f64>,
        latent_cov: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = train.len();
        if latent_mean.len() != n {
            return Err(Error::contract(format!(
                "latent mean has length {} for {n} training points",
                latent_mean.len()
            )));
        }
        if latent_cov.nrows() != n || latent_cov.ncols() != n {
            return Err(Error::contract("latent covariance must be square over the training points"));
        }
        let kernel = prior.kernel.clone();
        kernel.validate()?;
        if n == 0 {
            return Ok(Self::from_parts(kernel, Vec::new(), DVector::zeros(0), DMatrix::zeros(0, 0)));
        }
        let dim = train[0].len();
        kernel.check_dim(dim)?;
        check_points(train, dim, "training points")?;
        let sigma = prior_covariance(train, &kernel);
        let (chol, _) = cholesky_with_jitter(&sigma, kernel.jitter.max(1e-12))?;
        let alpha = chol.solve(latent_mean);
        let sigma_inv = chol.inverse();
        let mut reduction = &sigma_inv - &sigma_inv * latent_cov * &sigma_inv;
        symmetrize(&mut reduction);
        Ok(Self::from_parts(kernel, train.to_vec(), alpha, reduction))
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn train_points(&self) -> &[Vec<f64>] {
        &self.train
    }

    pub fn dim(&self) -> Option<usize> {
        self.train.first().map(Vec::len)
    }

    /// Covariance between `x` and `t`, including the jitter when the two
    /// coincide so that training points are reproduced exactly.
    #[inline]
    fn cov(&self, x: &[f64], t: &[f64]) -> f64 {
        let v = self.kernel.eval(x, t);
        if x == t {
            v + self.kernel.jitter
        } else {
            v
        }
    }

    /// `k(x)` and the prior variance at `x`.
    fn kernel_vector(&self, x: &[f64]) -> (DVector<f64>, f64) {
        let mut prior = self.kernel.signal_variance;
        let k = DVector::from_iterator(
            self.train.len(),
            self.train.iter().map(|t| {
                if x == t.as_slice() {
                    prior = self.kernel.signal_variance + self.kernel.jitter;
                }
                self.cov(x, t)
            }),
        );
        (k, prior)
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.train
            .iter()
            .zip(self.alpha.iter())
            .map(|(t, a)| a * self.cov(x, t))
            .sum()
    }

    /// Predictive mean and variance (clamped at zero).
    pub fn mean_variance(&self, x: &[f64]) -> (f64, f64) {
        let (k, prior) = self.kernel_vector(x);
        let mean = k.dot(&self.alpha);
        let var = prior - (&self.reduction * &k).dot(&k);
        (mean, var.max(0.0))
    }

    pub fn mean_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        for (t, a) in self.train.iter().zip(self.alpha.iter()) {
            self.kernel.grad_first(x, t, &mut g);
            for (o, gi) in grad.iter_mut().zip(&g) {
                *o += a * gi;
            }
        }
        grad
    }

    /// Mean, variance and both input gradients in one pass. The variance
    /// gradient is that of the unclamped variance.
    pub fn predict_with_gradients(&self, x: &[f64]) -> PointPrediction {
        let d = x.len();
        let n = self.train.len();
        let (k, prior) = self.kernel_vector(x);
        let mut jac = DMatrix::zeros(n, d);
        let mut g = vec![0.0; d];
        for (i, t) in self.train.iter().enumerate() {
            self.kernel.grad_first(x, t, &mut g);
            for (j, gj) in g.iter().enumerate() {
                jac[(i, j)] = *gj;
            }
        }
        let rk = &self.reduction * &k;
        let mean = k.dot(&self.alpha);
        let variance = (prior - rk.dot(&k)).max(0.0);
        let mean_grad = (jac.transpose() * &self.alpha).iter().cloned().collect();
        let variance_grad = (jac.transpose() * &rk).iter().map(|v| -2.0 * v).collect();
        PointPrediction { mean, variance, mean_grad, variance_grad }
    }

    /// Precomputes what [`Self::relative_predict_with_gradients`] needs about
    /// a reference point.
    pub fn anchor(&self, a: &[f64]) -> Anchor {
        let (k, prior) = self.kernel_vector(a);
        let rk = &self.reduction * &k;
        Anchor {
            point: a.to_vec(),
            mean: k.dot(&self.alpha),
            variance: (prior - rk.dot(&k)).max(0.0),
            rk,
        }
    }

    /// Mean of `f(x)` and variance of `f(x) - f(a)` under the joint
    /// posterior. The variance vanishes at `x = a`.
    pub fn relative_mean_variance(&self, x: &[f64], anchor: &Anchor) -> (f64, f64) {
        let (k, prior) = self.kernel_vector(x);
        let mean = k.dot(&self.alpha);
        let var = prior - (&self.reduction * &k).dot(&k);
        let cross = self.cov(x, &anchor.point) - k.dot(&anchor.rk);
        (mean, (var + anchor.variance - 2.0 * cross).max(0.0))
    }

    /// As [`Self::predict_with_gradients`], with `variance` and
    /// `variance_grad` taken from `f(x) - f(a)`.
    pub fn relative_predict_with_gradients(&self, x: &[f64], anchor: &Anchor) -> PointPrediction {
        let mut p = self.predict_with_gradients(x);
        let (k, prior) = self.kernel_vector(x);
        let var = prior - (&self.reduction * &k).dot(&k);
        let cross = self.cov(x, &anchor.point) - k.dot(&anchor.rk);
        p.variance = (var + anchor.variance - 2.0 * cross).max(0.0);
        let mut g = vec![0.0; x.len()];
        self.kernel.grad_first(x, &anchor.point, &mut g);
        let mut gt = vec![0.0; x.len()];
        for (t, r) in self.train.iter().zip(anchor.rk.iter()) {
            self.kernel.grad_first(x, t, &mut gt);
            for (gi, v) in g.iter_mut().zip(&gt) {
                *gi -= r * v;
            }
        }
        for (vg, c) in p.variance_grad.iter_mut().zip(&g) {
            *vg -= 2.0 * c;
        }
        p
    }

    /// Joint predictive distribution over `test`.
    pub fn predict(&self, test: &[Vec<f64>]) -> PredictiveDistribution {
        let mut kss = cross_covariance(test, test, &self.kernel);
        if self.train.is_empty() {
            return PredictiveDistribution {
                mean: DVector::zeros(test.len()),
                covariance: kss,
            };
        }
        let ks = DMatrix::from_fn(self.train.len(), test.len(), |i, j| self.cov(&test[j], &self.train[i]));
        for i in 0..test.len() {
            if self.train.iter().any(|t| t == &test[i]) {
                for j in 0..test.len() {
                    if test[j] == test[i] {
                        kss[(i, j)] += self.kernel.jitter;
                    }
                }
            }
        }
        let mean = ks.transpose() * &self.alpha;
        let mut covariance = kss - ks.transpose() * &self.reduction * &ks;
        symmetrize(&mut covariance);
        for i in 0..covariance.nrows() {
            let v = covariance[(i, i)];
            if (-NEGATIVE_VARIANCE_TOLERANCE..0.0).contains(&v) {
                covariance[(i, i)] = 0.0;
            }
        }
        PredictiveDistribution { mean, covariance }
    }
}

/// Conditional prediction at `test_points` given a Gaussian latent posterior
/// at the training points:
/// `mean = K̂ᵀ Σ⁻¹ m`, `cov = K̂̂ - K̂ᵀ Σ⁻¹ K̂ + K̂ᵀ Σ⁻¹ C Σ⁻¹ K̂`.
pub fn gp_predict(
    prior: &GpPrior,
    train_points: &[Vec<f64>],
    latent_mean: &DVector<f64>,
    latent_cov: &DMatrix<f64>,
    test_points: &[Vec<f64>],
) -> Result<PredictiveDistribution> {
    let predictor = Predictor::from_latent(prior, train_points, latent_mean, latent_cov)?;
    if let Some(dim) = common_dim(train_points, test_points) {
        prior.kernel.check_dim(dim)?;
        check_points(test_points, dim, "test points")?;
    }
    Ok(predictor.predict(test_points))
}

/// Analytic `∇μ(query)` of the predictive mean conditioned on `latent_mean`.
pub fn posterior_mean_gradient(
    prior: &GpPrior,
    train_points: &[Vec<f64>],
    latent_mean: &DVector<f64>,
    query: &[f64],
) -> Result<Vec<f64>> {
    if train_points.is_empty() {
        return Ok(vec![0.0; query.len()]);
    }
    if train_points[0].len() != query.len() {
        return Err(Error::contract(format!(
            "query has dimension {} but training points have {}",
            query.len(),
            train_points[0].len()
        )));
    }
    let zero = DMatrix::zeros(train_points.len(), train_points.len());
    let predictor = Predictor::from_latent(prior, train_points, latent_mean, &zero)?;
    Ok(predictor.mean_gradient(query))
}
