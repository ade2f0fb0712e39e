//! Affine + thin-plate-spline warps of 2-D scalar fields.
//!
//! A warp is described by 24 parameters in a fixed order:
//!
//! | index | parameter | bound |
//! |-------|-----------|-------|
//! | 0, 1  | translation `tx`, `ty` (fraction of width / height) | ±0.75 |
//! | 2, 3  | log-scale `sx`, `sy` | ±ln 4 |
//! | 4     | rotation (rad) | ±π/3 |
//! | 5     | shear angle (rad) | ±π/3 |
//! | 6..24 | TPS control-point offsets `(dx, dy)` for the 3×3 lattice, row-major, fraction of field size | ±0.25 |
//!
//! The all-zero vector is the identity warp. [`warp_compose`] applies the
//! affine part first and the spline second.

mod field;
mod tps;

pub use field::Field2D;
pub use tps::{control_point, tps_apply, tps_radial, TpsSpline, CONTROL_POINTS};

use std::f64::consts::{FRAC_PI_3, LN_2};

use crate::acquisition::BoxBounds;
use crate::{Error, Result};

/// Total number of warp parameters.
pub const PARAM_DIM: usize = 6 + 2 * CONTROL_POINTS;
/// Indices of the affine parameters.
pub const AFFINE_DIMS: [usize; 6] = [0, 1, 2, 3, 4, 5];

const TRANSLATION_LIMIT: f64 = 0.75;
const LOG_SCALE_LIMIT: f64 = 2.0 * LN_2;
const ANGLE_LIMIT: f64 = FRAC_PI_3;
const TPS_OFFSET_LIMIT: f64 = 0.25;
/// Slack for bound checks on values produced by floating-point arithmetic.
const BOUND_SLACK: f64 = 1e-12;

/// The 24-dimensional parameter box.
pub fn theta_bounds() -> BoxBounds {
    let mut upper = vec![
        TRANSLATION_LIMIT,
        TRANSLATION_LIMIT,
        LOG_SCALE_LIMIT,
        LOG_SCALE_LIMIT,
        ANGLE_LIMIT,
        ANGLE_LIMIT,
    ];
    upper.extend(std::iter::repeat_n(TPS_OFFSET_LIMIT, 2 * CONTROL_POINTS));
    let lower = upper.iter().map(|u| -u).collect();
    BoxBounds::new(lower, upper).expect("static bounds are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineParams {
    pub tx: f64,
    pub ty: f64,
    pub sx: f64,
    pub sy: f64,
    pub rot: f64,
    pub shear: f64,
}

impl AffineParams {
    /// `A = R(rot) · Shear(shear) · diag(e^sx, e^sy)` as `[[a, b], [c, d]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rot.sin_cos();
        let k = self.shear.tan();
        let ex = self.sx.exp();
        let ey = self.sy.exp();
        // R · [[1, k], [0, 1]] = [[c, c k - s], [s, s k + c]]
        [[c * ex, (c * k - s) * ey], [s * ex, (s * k + c) * ey]]
    }
}

/// Validated warp parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpParams {
    pub affine: AffineParams,
    pub tps_offsets: [[f64; 2]; CONTROL_POINTS],
}

impl WarpParams {
    pub fn identity() -> Self {
        Self {
            affine: AffineParams::default(),
            tps_offsets: [[0.0; 2]; CONTROL_POINTS],
        }
    }

    /// Builds parameters from the flat 24-vector, rejecting anything outside
    /// [`theta_bounds`].
    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        if theta.len() != PARAM_DIM {
            return Err(Error::contract(format!(
                "warp parameters have {PARAM_DIM} entries, got {}",
                theta.len()
            )));
        }
        let bounds = theta_bounds();
        for (i, (v, (l, u))) in theta
            .iter()
            .zip(bounds.lower().iter().zip(bounds.upper()))
            .enumerate()
        {
            if !v.is_finite() || *v < l - BOUND_SLACK || *v > u + BOUND_SLACK {
                return Err(Error::contract(format!(
                    "warp parameter {i} = {v} outside [{l}, {u}]"
                )));
            }
        }
        let mut tps_offsets = [[0.0; 2]; CONTROL_POINTS];
        for (i, o) in tps_offsets.iter_mut().enumerate() {
            *o = [theta[6 + 2 * i], theta[7 + 2 * i]];
        }
        Ok(Self {
            affine: AffineParams {
                tx: theta[0],
                ty: theta[1],
                sx: theta[2],
                sy: theta[3],
                rot: theta[4],
                shear: theta[5],
            },
            tps_offsets,
        })
    }

    /// Embeds values for the coordinates `dims` into an otherwise identity warp.
    pub fn from_active(dims: &[usize], values: &[f64]) -> Result<Self> {
        if dims.len() != values.len() {
            return Err(Error::contract("active dimensions and values differ in length"));
        }
        let mut full = vec![0.0; PARAM_DIM];
        for (&d, &v) in dims.iter().zip(values) {
            if d >= PARAM_DIM {
                return Err(Error::contract(format!("warp dimension {d} out of range")));
            }
            full[d] = v;
        }
        Self::from_slice(&full)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let a = &self.affine;
        let mut v = vec![a.tx, a.ty, a.sx, a.sy, a.rot, a.shear];
        for o in &self.tps_offsets {
            v.extend_from_slice(o);
        }
        v
    }

    pub fn has_tps(&self) -> bool {
        self.tps_offsets.iter().flatten().any(|v| *v != 0.0)
    }
}

/// Inverse-mapped bilinear resampling under `x' = A (x - c) + c + τ`, with
/// `c` the field center and `τ = (tx · width, ty · height)` in pixels.
pub fn affine_apply(params: &AffineParams, field: &Field2D) -> Field2D {
    let [[a, b], [c, d]] = params.matrix();
    let det = a * d - b * c;
    let inv = [[d / det, -b / det], [-c / det, a / det]];
    let w = field.width();
    let h = field.height();
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let tau_x = params.tx * w as f64;
    let tau_y = params.ty * h as f64;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 - cx - tau_x;
            let py = y as f64 - cy - tau_y;
            let sx = inv[0][0] * px + inv[0][1] * py + cx;
            let sy = inv[1][0] * px + inv[1][1] * py + cy;
            values.push(field.sample_bilinear(sx, sy));
        }
    }
    Field2D::new(w, h, values).expect("resampling preserves validity")
}

/// Affine first, then the thin-plate spline.
pub fn warp_compose(theta: &WarpParams, field: &Field2D) -> Field2D {
    let warped = affine_apply(&theta.affine, field);
    if theta.has_tps() {
        tps_apply(&theta.tps_offsets, &warped)
    } else {
        warped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(rng: &mut ChaCha8Rng) -> WarpParams {
        let b = theta_bounds();
        let v: Vec<f64> = (0..PARAM_DIM)
            .map(|d| rng.random_range(b.lower()[d]..=b.upper()[d]))
            .collect();
        WarpParams::from_slice(&v).unwrap()
    }

    #[test]
    fn bounds_layout() {
        let b = theta_bounds();
        assert_eq!(b.dim(), 24);
        assert_eq!((b.lower()[0], b.upper()[0]), (-0.75, 0.75));
        assert_eq!((b.lower()[4], b.upper()[4]), (-FRAC_PI_3, FRAC_PI_3));
        assert!((b.upper()[2].exp() - 4.0).abs() < 1e-12);
        assert!(b.center().iter().all(|v| *v == 0.0));
        assert_eq!(WarpParams::from_slice(&b.center()).unwrap(), WarpParams::identity());
    }

    #[test]
    fn out_of_bounds_rotation_rejected() {
        let mut v = vec![0.0; PARAM_DIM];
        v[4] = std::f64::consts::FRAC_PI_2;
        assert!(WarpParams::from_slice(&v).is_err());
        assert!(WarpParams::from_slice(&[0.0; 5]).is_err());
    }

    #[test]
    fn slice_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_theta(&mut rng);
        assert_eq!(WarpParams::from_slice(&t.to_vec()).unwrap(), t);
        let active = WarpParams::from_active(&[0, 7], &[0.1, -0.2]).unwrap();
        assert_eq!(active.affine.tx, 0.1);
        assert_eq!(active.tps_offsets[0][1], -0.2);
    }

    #[test]
    fn identity_is_bit_exact() {
        let f = Field2D::synthetic(20, 14, 1).unwrap();
        assert_eq!(affine_apply(&AffineParams::default(), &f), f);
        assert_eq!(warp_compose(&WarpParams::identity(), &f), f);
    }

    #[test]
    fn integer_translation_shifts_columns() {
        let f = Field2D::synthetic(64, 64, 9).unwrap();
        let p = AffineParams { tx: 0.5, ..AffineParams::default() };
        let g = affine_apply(&p, &f);
        for y in 0..64 {
            for x in 32..64 {
                assert_eq!(g.get(x, y), f.get(x - 32, y));
            }
            for x in 0..32 {
                assert_eq!(g.get(x, y), f.get(0, y));
            }
        }
        let q = AffineParams { ty: -0.25, ..AffineParams::default() };
        let g = affine_apply(&q, &f);
        for y in 0..48 {
            for x in 0..64 {
                assert_eq!(g.get(x, y), f.get(x, y + 16));
            }
        }
    }

    #[test]
    fn pure_affine_theta_matches_affine_apply() {
        let f = Field2D::synthetic(24, 24, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = random_theta(&mut rng);
        t.tps_offsets = [[0.0; 2]; CONTROL_POINTS];
        assert_eq!(warp_compose(&t, &f), affine_apply(&t.affine, &f));
    }

    #[test]
    fn rotation_by_quarter_turn_about_center() {
        // Affine matrix composition sanity check on the matrix itself.
        let p = AffineParams { rot: std::f64::consts::FRAC_PI_2, ..AffineParams::default() };
        let m = p.matrix();
        assert!((m[0][0]).abs() < 1e-15 && (m[0][1] + 1.0).abs() < 1e-15);
        assert!((m[1][0] - 1.0).abs() < 1e-15 && (m[1][1]).abs() < 1e-15);
        let s = AffineParams { sx: 1.0, shear: 0.3, ..AffineParams::default() };
        let m = s.matrix();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        assert!((det - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn random_warps_are_finite_and_range_bounded() {
        let f = Field2D::synthetic(32, 32, 5).unwrap();
        let (lo, hi) = f.min_max();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let t = random_theta(&mut rng);
            let g = warp_compose(&t, &f);
            assert_eq!((g.width(), g.height()), (32, 32));
            assert!(g.values().iter().all(|v| v.is_finite() && *v >= lo && *v <= hi));
        }
    }

    #[test]
    fn small_parameter_changes_give_small_output_changes() {
        let f = Field2D::synthetic(32, 32, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-4;
        // generous empirical Lipschitz bound in field units per parameter unit
        let lipschitz = 200.0;
        for _ in 0..5 {
            let t = random_theta(&mut rng);
            let base = warp_compose(&t, &f);
            for d in 0..PARAM_DIM {
                let mut v = t.to_vec();
                v[d] = if v[d] + eps <= theta_bounds().upper()[d] { v[d] + eps } else { v[d] - eps };
                let moved = warp_compose(&WarpParams::from_slice(&v).unwrap(), &f);
                assert!(base.max_abs_diff(&moved) <= lipschitz * eps, "param {d}");
            }
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let f = Field2D::synthetic(32, 32, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_theta(&mut rng);
        assert_eq!(warp_compose(&t, &f), warp_compose(&t, &f));
    }
}
