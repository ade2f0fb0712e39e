use rand::Rng;
use rayon::prelude::*;

use super::{BoxBounds, DbsConfig};
use crate::gp::{Anchor, Predictor};
use crate::sobol;
use crate::stats::{norm_cdf, norm_pdf};
use crate::{Error, Result};

/// Standard deviations at or below this are treated as exact.
const MIN_STD: f64 = 1e-12;
/// Initial ascent step as a fraction of box width.
const INITIAL_STEP: f64 = 0.1;
/// Ascent stops once the step falls below this fraction of box width.
const MIN_STEP: f64 = 1e-6;

/// `s (z Φ(z) + φ(z))` with `z = (mean - f_star) / s`.
pub fn ei_closed_form(mean: f64, std: f64, f_star: f64) -> f64 {
    if std <= MIN_STD {
        return (mean - f_star).max(0.0);
    }
    let z = (mean - f_star) / std;
    (std * tau(z)).max(0.0)
}

/// `z Φ(z) + φ(z)`. The cancellation for negative `z` costs about
/// `2 log10 |z|` digits, which stays harmless until `φ` underflows.
fn tau(z: f64) -> f64 {
    z * norm_cdf(z) + norm_pdf(z)
}

/// What improvement is measured against.
#[derive(Debug, Clone)]
pub enum EiBaseline {
    /// A fixed value `f*`, with the marginal predictive spread.
    Value(f64),
    /// An archive point `x̂`: `f* = μ(x̂)` and `s` is the spread of
    /// `f(x) - f(x̂)`, so EI vanishes at `x̂` itself.
    Incumbent(Anchor),
}

impl EiBaseline {
    pub fn incumbent(predictor: &Predictor, x_best: &[f64]) -> Self {
        EiBaseline::Incumbent(predictor.anchor(x_best))
    }

    pub fn f_star(&self) -> f64 {
        match self {
            EiBaseline::Value(v) => *v,
            EiBaseline::Incumbent(a) => a.mean(),
        }
    }

    fn mean_variance(&self, predictor: &Predictor, x: &[f64]) -> (f64, f64) {
        match self {
            EiBaseline::Value(_) => predictor.mean_variance(x),
            EiBaseline::Incumbent(a) => predictor.relative_mean_variance(x, a),
        }
    }
}

pub fn expected_improvement(predictor: &Predictor, x: &[f64], f_star: f64) -> f64 {
    ei_over(predictor, x, &EiBaseline::Value(f_star))
}

pub fn ei_over(predictor: &Predictor, x: &[f64], baseline: &EiBaseline) -> f64 {
    let (mean, var) = baseline.mean_variance(predictor, x);
    ei_closed_form(mean, var.sqrt(), baseline.f_star())
}

/// EI and its input gradient, using `∂EI/∂μ = Φ(z)` and `∂EI/∂s = φ(z)`.
pub fn ei_with_gradient(predictor: &Predictor, x: &[f64], baseline: &EiBaseline) -> (f64, Vec<f64>) {
    let f_star = baseline.f_star();
    let p = match baseline {
        EiBaseline::Value(_) => predictor.predict_with_gradients(x),
        EiBaseline::Incumbent(a) => predictor.relative_predict_with_gradients(x, a),
    };
    let s = p.variance.sqrt();
    if s <= MIN_STD {
        return if p.mean > f_star {
            (p.mean - f_star, p.mean_grad)
        } else {
            (0.0, vec![0.0; x.len()])
        };
    }
    let z = (p.mean - f_star) / s;
    let value = (s * tau(z)).max(0.0);
    let d_mu = norm_cdf(z);
    let d_s = norm_pdf(z);
    let grad = p
        .mean_grad
        .iter()
        .zip(&p.variance_grad)
        .map(|(gm, gv)| d_mu * gm + d_s * gv / (2.0 * s))
        .collect();
    (value, grad)
}

/// Result of a multi-start EI search.
#[derive(Debug, Clone)]
pub struct EiMaximum {
    pub point: Vec<f64>,
    pub value: f64,
    /// Every raw sample had zero EI; `point` is then the raw sample with the
    /// largest predictive variance.
    pub degenerate: bool,
    /// End points of the local ascents, best first.
    pub local_maxima: Vec<(Vec<f64>, f64)>,
}

/// Scores `ei_raw_samples` low-discrepancy points, then refines the best
/// `ei_restarts` by projected gradient ascent.
pub fn maximize_ei<R: Rng + ?Sized>(
    predictor: &Predictor,
    baseline: &EiBaseline,
    bounds: &BoxBounds,
    cfg: &DbsConfig,
    rng: &mut R,
) -> Result<EiMaximum> {
    if predictor.train_points().is_empty() {
        return Err(Error::contract("EI search needs at least one archive point"));
    }
    if predictor.dim() != Some(bounds.dim()) {
        return Err(Error::contract("bounds and posterior differ in dimension"));
    }
    let raw: Vec<Vec<f64>> = sobol::unit_points(bounds.dim(), cfg.ei_raw_samples, rng)
        .iter()
        .map(|u| bounds.from_unit(u))
        .collect();
    let scored: Vec<(f64, f64)> = raw
        .par_iter()
        .map(|x| {
            let (m, v) = baseline.mean_variance(predictor, x);
            (ei_closed_form(m, v.sqrt(), baseline.f_star()), v)
        })
        .collect();

    if scored.iter().all(|(ei, _)| *ei <= 0.0) {
        let mut best = 0;
        for (i, (_, v)) in scored.iter().enumerate() {
            if *v > scored[best].1 {
                best = i;
            }
        }
        return Ok(EiMaximum {
            point: raw[best].clone(),
            value: 0.0,
            degenerate: true,
            local_maxima: vec![(raw[best].clone(), 0.0)],
        });
    }

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    order.truncate(cfg.ei_restarts.min(raw.len()));

    let widths = bounds.widths();
    let mut local: Vec<(Vec<f64>, f64)> = order
        .par_iter()
        .map(|&i| ascend(predictor, baseline, bounds, &widths, raw[i].clone(), scored[i].0, cfg.ei_ascent_iters))
        .collect();
    // stable sort keeps restart order on ties
    local.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (point, value) = local[0].clone();
    Ok(EiMaximum { point, value, degenerate: false, local_maxima: local })
}

/// Projected ascent along the width-scaled gradient direction with an
/// adaptive step: grow by 1.5 on improvement, halve otherwise.
fn ascend(
    predictor: &Predictor,
    baseline: &EiBaseline,
    bounds: &BoxBounds,
    widths: &[f64],
    mut x: Vec<f64>,
    mut value: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let mut step = INITIAL_STEP;
    let mut grad = ei_with_gradient(predictor, &x, baseline).1;
    for _ in 0..max_iters {
        if step < MIN_STEP {
            break;
        }
        let scaled: Vec<f64> = grad.iter().zip(widths).map(|(g, w)| g * w).collect();
        let norm = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let trial: Vec<f64> = x
            .iter()
            .zip(scaled.iter().zip(widths))
            .map(|(xi, (gi, w))| xi + step * w * gi / norm)
            .collect();
        let trial = bounds.project(&trial);
        let (v, g) = ei_with_gradient(predictor, &trial, baseline);
        if v > value {
            x = trial;
            value = v;
            grad = g;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    (x, value)
}
