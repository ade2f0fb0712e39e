use rand::Rng;

use super::{gradient_covariance, maximize_ei, AcquisitionKind, EiBaseline, BoxBounds, DbsConfig, SubspaceBasis};
use crate::gp::Predictor;
use crate::{Error, Result};

/// Re-perturbation attempts for a point that collides with an earlier one.
const MAX_RETRIES: usize = 10;
/// Points closer than this (in box-normalized max-norm) count as equal.
const COLLISION_TOL: f64 = 1e-9;
/// Size of the deterministic fallback nudge in box-normalized units.
const NUDGE: f64 = 1e-4;

/// One round's proposal together with the diagnostics the benchmark logs.
#[derive(Debug, Clone)]
pub struct BatchProposal {
    pub points: Vec<Vec<f64>>,
    pub x_ei: Option<Vec<f64>>,
    pub ei_value: Option<f64>,
    pub ei_degenerate: bool,
    /// Selected active-subspace dimension, when a subspace was built.
    pub subspace_dim: Option<usize>,
    /// Normalized spectrum of the gradient covariance.
    pub eigenvalues: Vec<f64>,
}

/// Full balanced-subspace proposal around the incumbent `x_best`.
pub fn dbs_propose<R: Rng + ?Sized>(
    predictor: &Predictor,
    x_best: &[f64],
    bounds: &BoxBounds,
    cfg: &DbsConfig,
    rng: &mut R,
) -> Result<BatchProposal> {
    propose_batch(AcquisitionKind::Dbs, predictor, x_best, bounds, cfg, rng)
}

/// Proposes `cfg.k` distinct points inside `bounds` using the given variant.
/// The incumbent value `f*` for EI is the posterior mean at `x_best`.
pub fn propose_batch<R: Rng + ?Sized>(
    kind: AcquisitionKind,
    predictor: &Predictor,
    x_best: &[f64],
    bounds: &BoxBounds,
    cfg: &DbsConfig,
    rng: &mut R,
) -> Result<BatchProposal> {
    cfg.validate()?;
    if x_best.len() != bounds.dim() {
        return Err(Error::contract("incumbent and bounds differ in dimension"));
    }
    if !bounds.contains(x_best) {
        return Err(Error::contract("incumbent lies outside the bounds"));
    }
    let widths = bounds.widths();
    let baseline = EiBaseline::incumbent(predictor, x_best);
    let mut out = BatchProposal {
        points: Vec::with_capacity(cfg.k),
        x_ei: None,
        ei_value: None,
        ei_degenerate: false,
        subspace_dim: None,
        eigenvalues: Vec::new(),
    };

    match kind {
        AcquisitionKind::Random => {
            out.points = (0..cfg.k)
                .map(|_| {
                    let u: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
                    bounds.from_unit(&u)
                })
                .collect();
        }
        AcquisitionKind::EiTopK => {
            let m = maximize_ei(predictor, &baseline, bounds, cfg, rng)?;
            out.ei_degenerate = m.degenerate;
            out.x_ei = Some(m.point.clone());
            out.ei_value = Some(m.value);
            for (p, _) in &m.local_maxima {
                if out.points.len() == cfg.k {
                    break;
                }
                if !out.points.iter().any(|q| close(p, q, &widths)) {
                    out.points.push(p.clone());
                }
            }
            // too few distinct maxima: fill with uniform draws
            while out.points.len() < cfg.k {
                let u: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
                out.points.push(bounds.from_unit(&u));
            }
        }
        AcquisitionKind::Dbs | AcquisitionKind::BridgeOnly | AcquisitionKind::SubspaceOnly => {
            let bridge_target = if kind == AcquisitionKind::SubspaceOnly {
                x_best.to_vec()
            } else {
                let m = maximize_ei(predictor, &baseline, bounds, cfg, rng)?;
                out.ei_degenerate = m.degenerate;
                out.ei_value = Some(m.value);
                out.x_ei = Some(m.point.clone());
                m.point
            };
            let bridges: Vec<Vec<f64>> = cfg
                .gamma_bridge
                .iter()
                // convex form keeps both endpoints exact
                .map(|g| x_best.iter().zip(&bridge_target).map(|(a, b)| (1.0 - g) * a + g * b).collect())
                .collect();
            let basis = if kind == AcquisitionKind::BridgeOnly || cfg.perturb_scale == 0.0 {
                None
            } else {
                let c = gradient_covariance(predictor, x_best, bounds, cfg, rng)?;
                let b = SubspaceBasis::from_covariance(&c, &widths, cfg.spectral_threshold);
                out.subspace_dim = Some(b.selected_dim);
                out.eigenvalues = b.eigenvalues.clone();
                Some(b)
            };
            for (i, bridge) in bridges.iter().enumerate() {
                let mut candidate = perturbed(bridge, basis.as_ref(), cfg.perturb_scale, &widths, bounds, rng);
                let mut retries = 0;
                while retries < MAX_RETRIES
                    && basis.as_ref().is_some_and(|b| !b.degenerate)
                    && out.points.iter().any(|q| close(&candidate, q, &widths))
                {
                    candidate = perturbed(bridge, basis.as_ref(), cfg.perturb_scale, &widths, bounds, rng);
                    retries += 1;
                }
                if out.points.iter().any(|q| close(&candidate, q, &widths)) {
                    candidate = nudge(&candidate, i, &out.points, &widths, bounds);
                }
                out.points.push(candidate);
            }
        }
    }
    Ok(out)
}

fn perturbed<R: Rng + ?Sized>(
    bridge: &[f64],
    basis: Option<&SubspaceBasis>,
    sigma: f64,
    widths: &[f64],
    bounds: &BoxBounds,
    rng: &mut R,
) -> Vec<f64> {
    match basis {
        None => bounds.project(bridge),
        Some(b) => {
            let dz = b.perturbation(sigma, rng);
            let x: Vec<f64> = bridge
                .iter()
                .zip(dz.iter().zip(widths))
                .map(|(x, (d, w))| x + d * w)
                .collect();
            bounds.project(&x)
        }
    }
}

fn close(a: &[f64], b: &[f64], widths: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .zip(widths)
        .all(|((x, y), w)| (x - y).abs() <= COLLISION_TOL * w.max(f64::MIN_POSITIVE))
}

/// Moves `x` along successive coordinates, away from the nearer face, until
/// it differs from every earlier point.
fn nudge(x: &[f64], index: usize, taken: &[Vec<f64>], widths: &[f64], bounds: &BoxBounds) -> Vec<f64> {
    let d = x.len();
    let mut y = x.to_vec();
    for attempt in 0..(4 * d * (taken.len() + 1)) {
        let c = (index + attempt) % d;
        if widths[c] == 0.0 {
            continue;
        }
        let step = NUDGE * widths[c] * (1 + attempt / d) as f64;
        let mid = 0.5 * (bounds.lower()[c] + bounds.upper()[c]);
        y[c] = if y[c] <= mid { y[c] + step } else { y[c] - step };
        y = bounds.project(&y);
        if !taken.iter().any(|q| close(&y, q, widths)) {
            break;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpPrior, KernelConfig};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn predictor_2d() -> Predictor {
        let prior = GpPrior::new(KernelConfig::matern52(vec![0.5, 0.5], 1.0));
        let train = vec![vec![0.1, 0.2], vec![-0.4, 0.5], vec![0.6, -0.3], vec![0.0, -0.7]];
        let mean = DVector::from_vec(vec![0.8, 0.1, -0.2, 0.3]);
        let cov = DMatrix::from_diagonal_element(4, 4, 0.02);
        Predictor::from_latent(&prior, &train, &mean, &cov).unwrap()
    }

    fn small_cfg(k: usize) -> DbsConfig {
        let mut c = DbsConfig::new(k);
        c.ei_raw_samples = 256;
        c.ei_restarts = 4;
        c
    }

    #[test]
    fn zero_perturbation_returns_bridge_points() {
        let p = predictor_2d();
        let bounds = BoxBounds::symmetric(2, 1.0).unwrap();
        let mut cfg = small_cfg(4);
        cfg.perturb_scale = 0.0;
        let x_best = vec![0.1, 0.2];
        let prop = dbs_propose(&p, &x_best, &bounds, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x_ei = prop.x_ei.clone().unwrap();
        assert_eq!(prop.points[0], x_best);
        assert_eq!(prop.points[3], x_ei);
        for (i, g) in [1.0 / 3.0, 2.0 / 3.0].iter().enumerate() {
            for d in 0..2 {
                let want = x_best[d] + g * (x_ei[d] - x_best[d]);
                assert!((prop.points[i + 1][d] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_are_in_bounds_distinct_and_deterministic() {
        let p = predictor_2d();
        let bounds = BoxBounds::symmetric(2, 1.0).unwrap();
        for kind in AcquisitionKind::ALL {
            let mut cfg = small_cfg(5);
            cfg.perturb_scale = 0.5;
            let a = propose_batch(kind, &p, &[0.1, 0.2], &bounds, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let b = propose_batch(kind, &p, &[0.1, 0.2], &bounds, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            assert_eq!(a.points, b.points, "{kind:?}");
            assert_eq!(a.points.len(), 5);
            for (i, x) in a.points.iter().enumerate() {
                assert!(bounds.contains(x), "{kind:?}");
                for y in &a.points[..i] {
                    assert!(!close(x, y, &bounds.widths()), "{kind:?} duplicate");
                }
            }
        }
    }

    #[test]
    fn collapsed_bridge_is_nudged_apart() {
        // flat posterior: EI maximizer can coincide with nothing useful, and
        // bridge-only proposals around a corner incumbent collapse
        let prior = GpPrior::new(KernelConfig::matern52(vec![1.0, 1.0], 1.0));
        let p = Predictor::from_latent(&prior, &[vec![1.0, 1.0]], &DVector::from_vec(vec![0.0]), &DMatrix::zeros(1, 1)).unwrap();
        let bounds = BoxBounds::symmetric(2, 1.0).unwrap();
        let cfg = small_cfg(4);
        let prop = propose_batch(AcquisitionKind::SubspaceOnly, &p, &[1.0, 1.0], &bounds, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (i, x) in prop.points.iter().enumerate() {
            assert!(bounds.contains(x));
            for y in &prop.points[..i] {
                assert!(!close(x, y, &bounds.widths()));
            }
        }
    }

    #[test]
    fn rejects_incumbent_outside_box() {
        let p = predictor_2d();
        let bounds = BoxBounds::symmetric(2, 1.0).unwrap();
        assert!(dbs_propose(&p, &[2.0, 0.0], &bounds, &small_cfg(3), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
