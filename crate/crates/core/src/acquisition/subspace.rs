use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BoxBounds, DbsConfig};
use crate::gp::Predictor;
use crate::linalg::{sorted_symmetric_eigen, symmetrize};
use crate::{Error, Result};

/// Leading eigenvalues at or below this make the spectrum degenerate.
const DEGENERATE_EIGENVALUE: f64 = 1e-12;

/// `(1/H) Σ ∇μ(x_h) ∇μ(x_h)ᵀ` over the given points, in input coordinates.
pub fn gradient_covariance_at(predictor: &Predictor, points: &[Vec<f64>]) -> DMatrix<f64> {
    let d = points.first().map_or(0, Vec::len);
    let mut c = DMatrix::zeros(d, d);
    for x in points {
        let g = nalgebra::DVector::from_vec(predictor.mean_gradient(x));
        c.ger(1.0, &g, &g, 1.0);
    }
    if !points.is_empty() {
        c /= points.len() as f64;
    }
    symmetrize(&mut c);
    c
}

/// Samples `H` points uniformly from the ball of radius
/// `neighborhood_radius · diagonal` around `x_best`, clips them to the box
/// and averages the outer products of the mean gradient there.
pub fn gradient_covariance<R: Rng + ?Sized>(
    predictor: &Predictor,
    x_best: &[f64],
    bounds: &BoxBounds,
    cfg: &DbsConfig,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if x_best.len() != bounds.dim() {
        return Err(Error::contract("incumbent and bounds differ in dimension"));
    }
    let radius = cfg.neighborhood_radius * bounds.diagonal();
    let points: Vec<Vec<f64>> = (0..cfg.n_gradient_samples)
        .map(|_| {
            let eta = uniform_ball(x_best.len(), radius, rng);
            let p: Vec<f64> = x_best.iter().zip(&eta).map(|(x, e)| x + e).collect();
            bounds.project(&p)
        })
        .collect();
    Ok(gradient_covariance_at(predictor, &points))
}

fn uniform_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x *= r / norm;
        }
    }
    v
}

/// Subspace dimension from consecutive eigenvalue ratios: the smallest `i`
/// whose ratio `λ_i / λ_{i+1}` reaches `threshold`, otherwise the largest
/// ratio (smallest `i` on ties). A zero denominator counts as an infinite
/// ratio. Returns 1 for fewer than two eigenvalues.
pub fn spectral_gap_dim(eigenvalues: &[f64], threshold: f64) -> usize {
    if eigenvalues.len() < 2 {
        return 1;
    }
    let ratios: Vec<f64> = eigenvalues
        .windows(2)
        .map(|w| if w[1] <= 0.0 { f64::INFINITY } else { w[0] / w[1] })
        .collect();
    if let Some(i) = ratios.iter().position(|r| *r >= threshold) {
        return i + 1;
    }
    let mut best = 0;
    for (i, r) in ratios.iter().enumerate() {
        if *r > ratios[best] {
            best = i;
        }
    }
    best + 1
}

/// Eigen-decomposition of the gradient covariance in box-normalized
/// coordinates `z = (x - lower) / width`, with eigenvalues rescaled so the
/// largest is 1.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// Descending, normalized; all zero when degenerate.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub selected_dim: usize,
    /// Largest eigenvalue before normalization.
    pub scale: f64,
    pub degenerate: bool,
}

impl SubspaceBasis {
    /// `c` is in input coordinates; it is rescaled to `W c W` with
    /// `W = diag(widths)` before decomposition.
    pub fn from_covariance(c: &DMatrix<f64>, widths: &[f64], threshold: f64) -> Self {
        let d = widths.len();
        let mut cz = c.clone();
        for i in 0..d {
            for j in 0..d {
                cz[(i, j)] *= widths[i] * widths[j];
            }
        }
        symmetrize(&mut cz);
        let (values, vectors) = sorted_symmetric_eigen(&cz);
        let scale = values.first().copied().unwrap_or(0.0);
        if !(scale > DEGENERATE_EIGENVALUE) {
            return Self {
                eigenvalues: vec![0.0; d],
                eigenvectors: vectors,
                selected_dim: 1,
                scale: scale.max(0.0),
                degenerate: true,
            };
        }
        let eigenvalues: Vec<f64> = values.iter().map(|v| (v / scale).max(0.0)).collect();
        let selected_dim = spectral_gap_dim(&eigenvalues, threshold);
        Self { eigenvalues, eigenvectors: vectors, selected_dim, scale, degenerate: false }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `σ Σ_{j ≤ d} α_j √λ_j u_j` with `α_j ~ U[-1, 1]`, in normalized
    /// coordinates. Zero for a degenerate spectrum.
    pub fn perturbation<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Vec<f64> {
        let mut delta = vec![0.0; self.dim()];
        if self.degenerate {
            return delta;
        }
        for j in 0..self.selected_dim {
            let alpha: f64 = rng.random_range(-1.0..=1.0);
            let w = sigma * alpha * self.eigenvalues[j].sqrt();
            for (i, d) in delta.iter_mut().enumerate() {
                *d += w * self.eigenvectors[(i, j)];
            }
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpPrior, KernelConfig};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gap_rule_examples() {
        assert_eq!(spectral_gap_dim(&[8.0, 4.0, 1.0, 0.5], 2.0), 1);
        assert_eq!(spectral_gap_dim(&[1.0, 1.0, 1.0], 2.0), 1);
        assert_eq!(spectral_gap_dim(&[10.0, 1e-15, 0.0, 0.0], 2.0), 1);
        assert_eq!(spectral_gap_dim(&[1.0, 0.9, 0.8, 0.01], 2.0), 3);
        assert_eq!(spectral_gap_dim(&[1.0, 0.9, 0.6, 0.4], 2.0), 2);
        assert_eq!(spectral_gap_dim(&[3.0], 2.0), 1);
        assert_eq!(spectral_gap_dim(&[], 2.0), 1);
    }

    #[test]
    fn ball_samples_stay_inside_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let v = uniform_ball(5, 0.3, &mut rng);
            assert!(v.iter().map(|x| x * x).sum::<f64>().sqrt() <= 0.3 + 1e-15);
        }
    }

    #[test]
    fn single_sample_is_outer_product() {
        let prior = GpPrior::new(KernelConfig::matern52(vec![0.7, 1.3], 1.0));
        let train = vec![vec![0.0, 0.0], vec![0.5, -0.2]];
        let p = Predictor::from_latent(&prior, &train, &DVector::from_vec(vec![1.0, -0.5]), &nalgebra::DMatrix::zeros(2, 2)).unwrap();
        let x = vec![0.2, 0.3];
        let g = p.mean_gradient(&x);
        let c = gradient_covariance_at(&p, &[x]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((c[(i, j)] - g[i] * g[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_spectrum_gives_zero_perturbation() {
        let b = SubspaceBasis::from_covariance(&DMatrix::zeros(3, 3), &[1.0, 1.0, 1.0], 2.0);
        assert!(b.degenerate);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(b.perturbation(0.5, &mut rng), vec![0.0; 3]);
    }

    #[test]
    fn normalization_uses_box_widths() {
        // gradient (1, 0) in input units on a box 10 wide in x0 and 1 in x1
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 0.5;
        let b = SubspaceBasis::from_covariance(&c, &[10.0, 1.0], 2.0);
        assert!((b.scale - 100.0).abs() < 1e-12);
        assert!((b.eigenvalues[1] - 0.005).abs() < 1e-12);
        assert_eq!(b.selected_dim, 1);
    }
}
