//! Laplace approximation of the latent-utility posterior.
//!
//! Newton's method runs in the `a = Σ⁻¹ f` parametrization so the prior
//! covariance `Σ` is never inverted: with `W` the negative data Hessian and
//! `B = I + W^½ Σ W^½`, one step is
//!
//! ```text
//! b     = W f + ∇ log p(y | f)
//! a_new = b - W^½ B⁻¹ W^½ Σ b
//! f_new = Σ a_new
//! ```
//!
//! and the log-posterior gradient is `∇ log p(y | f) - a`. `W` is block
//! diagonal over groups of archive points linked by shared observations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::local_terms;
use super::{LikelihoodModel, PreferenceObservation};
use crate::gp::{prior_covariance, KernelConfig, Predictor};
use crate::linalg::{cholesky_with_jitter, inf_norm, symmetrize, BlockDiag};
use crate::{Error, Result};

const DOCUMENT_FORMAT: &str = "multibo.latent-posterior";
const DOCUMENT_VERSION: u32 = 1;

/// Relative slack when comparing log-posterior values of successive Newton
/// iterates; differences below it are rounding noise.
const ASCENT_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceOptions {
    /// Stop once `‖∇ log p(f | X)‖_∞` falls to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Step halvings tried before a Newton step is abandoned.
    pub max_halvings: usize,
    /// Start point for `f`; the prior mean (zero) when absent.
    #[serde(default)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 100,
            max_halvings: 20,
            warm_start: None,
        }
    }
}

/// Archive points grouped into connected components of the
/// "appear in the same observation" relation.
struct BlockStructure {
    n: usize,
    components: Vec<Vec<usize>>,
    /// For every observation: component id and local positions of its choices.
    placement: Vec<(usize, Vec<usize>)>,
}

impl BlockStructure {
    fn new(n: usize, observations: &[PreferenceObservation]) -> Result<Self> {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut used = vec![false; n];
        for obs in observations {
            for &i in obs.choice_set() {
                if i >= n {
                    return Err(Error::contract(format!(
                        "observation references archive index {i} but the archive has {n} points"
                    )));
                }
                used[i] = true;
            }
            let first = obs.choice_set()[0];
            for &i in &obs.choice_set()[1..] {
                let (ra, rb) = (find(&mut parent, first), find(&mut parent, i));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut component_of = vec![usize::MAX; n];
        let mut components: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            if !used[i] {
                continue;
            }
            let root = find(&mut parent, i);
            if component_of[root] == usize::MAX {
                component_of[root] = components.len();
                components.push(Vec::new());
            }
            components[component_of[root]].push(i);
        }
        let placement = observations
            .iter()
            .map(|obs| {
                let c = component_of[find(&mut parent, obs.choice_set()[0])];
                let members = &components[c];
                let local = obs
                    .choice_set()
                    .iter()
                    .map(|i| members.binary_search(i).expect("member of its component"))
                    .collect();
                (c, local)
            })
            .collect();
        Ok(Self { n, components, placement })
    }
}

struct DataTerms {
    loglik: f64,
    grad: DVector<f64>,
    neg_hess: BlockDiag,
}

fn data_terms(
    f: &DVector<f64>,
    observations: &[PreferenceObservation],
    model: &LikelihoodModel,
    structure: &BlockStructure,
) -> Result<DataTerms> {
    let mut grad = DVector::zeros(structure.n);
    let mut blocks: Vec<(Vec<usize>, DMatrix<f64>)> = structure
        .components
        .iter()
        .map(|c| (c.clone(), DMatrix::zeros(c.len(), c.len())))
        .collect();
    let mut loglik = 0.0;
    let values = f.as_slice();
    for (obs, (c, local)) in observations.iter().zip(&structure.placement) {
        let t = local_terms(values, obs, model)?;
        loglik += t.loglik;
        let block = &mut blocks[*c].1;
        for (a, &i) in obs.choice_set().iter().enumerate() {
            grad[i] += t.grad[a];
            for (b, &lb) in local.iter().enumerate() {
                block[(local[a], lb)] += t.neg_hess[(a, b)];
            }
        }
    }
    Ok(DataTerms {
        loglik,
        grad,
        neg_hess: BlockDiag { dim: structure.n, blocks },
    })
}

/// Gaussian approximation `N(f_map, (Σ⁻¹ + W)⁻¹)` of the latent utilities at
/// the archive points. Immutable once built.
#[derive(Debug, Clone)]
pub struct LatentPosterior {
    archive_points: Vec<Vec<f64>>,
    f_map: DVector<f64>,
    alpha: DVector<f64>,
    neg_data_hessian: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    prior_cov: DMatrix<f64>,
    observations: Vec<PreferenceObservation>,
    kernel: KernelConfig,
    model: LikelihoodModel,
    predictor: Predictor,
    gradient: DVector<f64>,
    iterations: usize,
    log_posterior_trace: Vec<f64>,
}

/// Persistent form of a [`LatentPosterior`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDocument {
    pub format: String,
    pub version: u32,
    pub kernel: KernelConfig,
    pub model: LikelihoodModel,
    pub archive_points: Vec<Vec<f64>>,
    pub f_map: Vec<f64>,
    /// `Σ⁻¹ f_map`, kept so reloading does not re-solve against `Σ`.
    pub alpha: Vec<f64>,
    pub observations: Vec<PreferenceObservation>,
}

/// Fits the Laplace approximation by damped Newton ascent on
/// `log p(f | X) = -½ fᵀ Σ⁻¹ f + Σ_i log p(obs_i | f) + const`.
pub fn laplace_fit(
    archive_points: &[Vec<f64>],
    observations: &[PreferenceObservation],
    kernel_cfg: &KernelConfig,
    model: &LikelihoodModel,
    options: &LaplaceOptions,
) -> Result<LatentPosterior> {
    if archive_points.is_empty() {
        return Err(Error::contract("laplace_fit needs a non-empty archive"));
    }
    kernel_cfg.validate()?;
    model.validate()?;
    let dim = archive_points[0].len();
    kernel_cfg.check_dim(dim)?;
    if archive_points.iter().any(|p| p.len() != dim || !p.iter().all(|v| v.is_finite())) {
        return Err(Error::contract("archive points must share a dimension and be finite"));
    }
    for obs in observations {
        model.check(obs)?;
    }
    let n = archive_points.len();
    let structure = BlockStructure::new(n, observations)?;
    let sigma = prior_covariance(archive_points, kernel_cfg);

    let (mut a, mut f) = match &options.warm_start {
        Some(start) => {
            if start.len() != n {
                return Err(Error::contract("warm start length differs from the archive size"));
            }
            let (chol, _) = cholesky_with_jitter(&sigma, kernel_cfg.jitter.max(1e-12))?;
            let a = chol.solve(&DVector::from_column_slice(start));
            let f = &sigma * &a;
            (a, f)
        }
        None => (DVector::zeros(n), DVector::zeros(n)),
    };

    let mut terms = data_terms(&f, observations, model, &structure)?;
    let mut psi = -0.5 * a.dot(&f) + terms.loglik;
    let mut trace = vec![psi];
    let mut iterations = 0;
    loop {
        let gradient = &terms.grad - &a;
        let grad_norm = inf_norm(&gradient);
        if grad_norm <= options.grad_tol {
            break;
        }
        if iterations >= options.max_iter {
            return Err(Error::NotConverged { iterations, grad_norm });
        }
        iterations += 1;

        let (w, w_sqrt) = terms.neg_hess.psd_repair_with_sqrt();
        let b_mat = DMatrix::identity(n, n) + w_sqrt.sandwich(&sigma);
        let (chol, _) = cholesky_with_jitter(&b_mat, 1e-12)?;
        let b = w.mul_vec(&f) + &terms.grad;
        let rhs = w_sqrt.mul_vec(&(&sigma * &b));
        let a_newton = &b - w_sqrt.mul_vec(&chol.solve(&rhs));
        let direction = &a_newton - &a;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let a_try = &a + &direction * step;
            let f_try = &sigma * &a_try;
            let t_try = data_terms(&f_try, observations, model, &structure)?;
            let psi_try = -0.5 * a_try.dot(&f_try) + t_try.loglik;
            if psi_try.is_finite() && psi_try >= psi - ASCENT_SLACK * (1.0 + psi.abs()) {
                accepted = Some((a_try, f_try, t_try, psi_try));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((a_new, f_new, t_new, psi_new)) => {
                a = a_new;
                f = f_new;
                terms = t_new;
                psi = psi_new;
                trace.push(psi);
            }
            None => return Err(Error::NotConverged { iterations, grad_norm }),
        }
    }

    let mut posterior = finalize(
        archive_points.to_vec(),
        observations.to_vec(),
        kernel_cfg.clone(),
        *model,
        sigma,
        f,
        a,
        terms,
    )?;
    posterior.iterations = iterations;
    posterior.log_posterior_trace = trace;
    Ok(posterior)
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    archive_points: Vec<Vec<f64>>,
    observations: Vec<PreferenceObservation>,
    kernel: KernelConfig,
    model: LikelihoodModel,
    sigma: DMatrix<f64>,
    f: DVector<f64>,
    a: DVector<f64>,
    terms: DataTerms,
) -> Result<LatentPosterior> {
    let n = archive_points.len();
    let (w, w_sqrt) = terms.neg_hess.psd_repair_with_sqrt();
    let b_mat = DMatrix::identity(n, n) + w_sqrt.sandwich(&sigma);
    let (chol, _) = cholesky_with_jitter(&b_mat, 1e-12)?;
    // R = W^½ B⁻¹ W^½ = (Σ + W⁻¹)⁻¹, so that (Σ⁻¹ + W)⁻¹ = Σ - Σ R Σ.
    let mut reduction = w_sqrt.sandwich(&chol.inverse());
    symmetrize(&mut reduction);
    let sigma_r = &sigma * &reduction;
    let mut posterior_cov = &sigma - &sigma_r * &sigma;
    symmetrize(&mut posterior_cov);
    let gradient = &terms.grad - &a;
    let predictor = Predictor::from_parts(kernel.clone(), archive_points.clone(), a.clone(), reduction);
    Ok(LatentPosterior {
        archive_points,
        f_map: f,
        alpha: a,
        neg_data_hessian: w.to_dense(),
        posterior_cov,
        prior_cov: sigma,
        observations,
        kernel,
        model,
        predictor,
        gradient,
        iterations: 0,
        log_posterior_trace: Vec::new(),
    })
}

impl LatentPosterior {
    pub fn archive_points(&self) -> &[Vec<f64>] {
        &self.archive_points
    }

    pub fn len(&self) -> usize {
        self.archive_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archive_points.is_empty()
    }

    pub fn f_map(&self) -> &DVector<f64> {
        &self.f_map
    }

    /// `Σ⁻¹ f_map`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Negative data Hessian `W` at the MAP, after PSD repair. The Hessian of
    /// the log-posterior is `-(Σ⁻¹ + W)`.
    pub fn neg_data_hessian(&self) -> &DMatrix<f64> {
        &self.neg_data_hessian
    }

    /// `(Σ⁻¹ + W)⁻¹`.
    pub fn posterior_cov(&self) -> &DMatrix<f64> {
        &self.posterior_cov
    }

    /// Prior covariance `Σ` of the archive, jitter included.
    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn observations(&self) -> &[PreferenceObservation] {
        &self.observations
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn model(&self) -> &LikelihoodModel {
        &self.model
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    /// `∇ log p(f | X)` at `f_map`; its infinity norm certifies the MAP.
    pub fn log_posterior_gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    pub fn gradient_norm(&self) -> f64 {
        inf_norm(&self.gradient)
    }

    pub fn newton_iterations(&self) -> usize {
        self.iterations
    }

    /// Unnormalized log-posterior after each accepted Newton step, starting
    /// with the initial point.
    pub fn log_posterior_trace(&self) -> &[f64] {
        &self.log_posterior_trace
    }

    /// Archive point with the largest posterior mean (first on ties) and
    /// that mean.
    pub fn incumbent(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in self.archive_points.iter().enumerate() {
            let m = self.predictor.mean(p);
            if m > best.1 {
                best = (i, m);
            }
        }
        best
    }

    pub fn to_document(&self) -> PosteriorDocument {
        PosteriorDocument {
            format: DOCUMENT_FORMAT.to_string(),
            version: DOCUMENT_VERSION,
            kernel: self.kernel.clone(),
            model: self.model,
            archive_points: self.archive_points.clone(),
            f_map: self.f_map.iter().cloned().collect(),
            alpha: self.alpha.iter().cloned().collect(),
            observations: self.observations.clone(),
        }
    }

    /// Rebuilds the posterior at the stored MAP without re-running Newton.
    pub fn from_document(doc: &PosteriorDocument) -> Result<Self> {
        if doc.format != DOCUMENT_FORMAT || doc.version != DOCUMENT_VERSION {
            return Err(Error::Format(format!("{} v{}", doc.format, doc.version)));
        }
        let n = doc.archive_points.len();
        if n == 0 || doc.f_map.len() != n || doc.alpha.len() != n {
            return Err(Error::Format("posterior vectors do not match the archive".into()));
        }
        doc.kernel.validate()?;
        doc.kernel.check_dim(doc.archive_points[0].len())?;
        for obs in &doc.observations {
            doc.model.check(obs)?;
        }
        let structure = BlockStructure::new(n, &doc.observations)?;
        let f = DVector::from_vec(doc.f_map.clone());
        let a = DVector::from_vec(doc.alpha.clone());
        let terms = data_terms(&f, &doc.observations, &doc.model, &structure)?;
        let sigma = prior_covariance(&doc.archive_points, &doc.kernel);
        finalize(
            doc.archive_points.clone(),
            doc.observations.clone(),
            doc.kernel.clone(),
            doc.model,
            sigma,
            f,
            a,
            terms,
        )
    }
}
