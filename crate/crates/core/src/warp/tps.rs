use nalgebra::{DMatrix, DVector};

use super::Field2D;

/// Number of spline control points (a 3×3 lattice over the unit square).
pub const CONTROL_POINTS: usize = 9;

/// Lattice coordinates `(u, v)` in row-major order.
pub fn control_point(i: usize) -> [f64; 2] {
    [(i % 3) as f64 * 0.5, (i / 3) as f64 * 0.5]
}

/// `U(r) = r² ln(r²)`, with `U(0) = 0`.
pub fn tps_radial(r: f64) -> f64 {
    let r2 = r * r;
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Two-component thin-plate spline interpolating the control-point
/// displacements exactly, in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsSpline {
    /// Radial weights per control point, `[x, y]`.
    weights: [[f64; 2]; CONTROL_POINTS],
    /// Affine part `a₁ + a_u u + a_v v` per component.
    affine: [[f64; 3]; 2],
}

impl TpsSpline {
    /// Solves the bordered system `[[K, P], [Pᵀ, 0]] [w; a] = [v; 0]` for
    /// both displacement components.
    pub fn fit(offsets: &[[f64; 2]; CONTROL_POINTS]) -> Self {
        let n = CONTROL_POINTS;
        let mut m = DMatrix::<f64>::zeros(n + 3, n + 3);
        for i in 0..n {
            let ci = control_point(i);
            for j in 0..n {
                let cj = control_point(j);
                m[(i, j)] = tps_radial((ci[0] - cj[0]).hypot(ci[1] - cj[1]));
            }
            let p = [1.0, ci[0], ci[1]];
            for (k, pk) in p.iter().enumerate() {
                m[(i, n + k)] = *pk;
                m[(n + k, i)] = *pk;
            }
        }
        // The lattice is not collinear, so the system is nonsingular.
        let lu = m.lu();
        let mut weights = [[0.0; 2]; CONTROL_POINTS];
        let mut affine = [[0.0; 3]; 2];
        for comp in 0..2 {
            let mut rhs = DVector::<f64>::zeros(n + 3);
            for i in 0..n {
                rhs[i] = offsets[i][comp];
            }
            let sol = lu.solve(&rhs).expect("fixed lattice gives a nonsingular system");
            for i in 0..n {
                weights[i][comp] = sol[i];
            }
            affine[comp] = [sol[n], sol[n + 1], sol[n + 2]];
        }
        Self { weights, affine }
    }

    /// Displacement at normalized position `(u, v)`.
    pub fn evaluate(&self, u: f64, v: f64) -> [f64; 2] {
        let mut out = [
            self.affine[0][0] + self.affine[0][1] * u + self.affine[0][2] * v,
            self.affine[1][0] + self.affine[1][1] * u + self.affine[1][2] * v,
        ];
        for (i, w) in self.weights.iter().enumerate() {
            let c = control_point(i);
            let phi = tps_radial((u - c[0]).hypot(v - c[1]));
            out[0] += w[0] * phi;
            out[1] += w[1] * phi;
        }
        out
    }

    /// `Σ wᵢ` and `Σ wᵢ cᵢ` per component; all zero for a valid spline.
    pub fn side_conditions(&self) -> [[f64; 3]; 2] {
        let mut s = [[0.0; 3]; 2];
        for (i, w) in self.weights.iter().enumerate() {
            let c = control_point(i);
            for comp in 0..2 {
                s[comp][0] += w[comp];
                s[comp][1] += w[comp] * c[0];
                s[comp][2] += w[comp] * c[1];
            }
        }
        s
    }
}

/// Backward-maps every output pixel through the negated spline
/// displacement: output `p` samples the source at `p - d(p)`. This is the
/// small-displacement approximation of the true inverse.
pub fn tps_apply(offsets: &[[f64; 2]; CONTROL_POINTS], field: &Field2D) -> Field2D {
    if offsets.iter().flatten().all(|v| *v == 0.0) {
        return field.clone();
    }
    let spline = TpsSpline::fit(offsets);
    let w = field.width();
    let h = field.height();
    let sx = (w - 1) as f64;
    let sy = (h - 1) as f64;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / sx;
            let v = y as f64 / sy;
            let d = spline.evaluate(u, v);
            values.push(field.sample_bilinear(x as f64 - d[0] * sx, y as f64 - d[1] * sy));
        }
    }
    Field2D::new(w, h, values).expect("resampling preserves validity")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_basis_values() {
        assert_eq!(tps_radial(0.0), 0.0);
        assert_eq!(tps_radial(1.0), 0.0);
        assert!((tps_radial(2.0) - 4.0 * 4f64.ln()).abs() < 1e-15);
        assert!(tps_radial(0.5) < 0.0);
    }

    #[test]
    fn zero_offsets_are_identity() {
        let f = Field2D::synthetic(17, 11, 2).unwrap();
        assert_eq!(tps_apply(&[[0.0; 2]; CONTROL_POINTS], &f), f);
        let s = TpsSpline::fit(&[[0.0; 2]; CONTROL_POINTS]);
        assert_eq!(s.evaluate(0.3, 0.7), [0.0, 0.0]);
    }

    #[test]
    fn interpolates_controls_and_satisfies_side_conditions() {
        let mut offsets = [[0.0; 2]; CONTROL_POINTS];
        offsets[4] = [0.1, 0.0];
        offsets[2] = [-0.05, 0.2];
        let s = TpsSpline::fit(&offsets);
        for (i, o) in offsets.iter().enumerate() {
            let c = control_point(i);
            let d = s.evaluate(c[0], c[1]);
            assert!((d[0] - o[0]).abs() < 1e-12 && (d[1] - o[1]).abs() < 1e-12, "control {i}");
        }
        for comp in s.side_conditions() {
            assert!(comp.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn uniform_offset_is_pure_translation() {
        let s = TpsSpline::fit(&[[0.1, -0.2]; CONTROL_POINTS]);
        let d = s.evaluate(0.37, 0.81);
        assert!((d[0] - 0.1).abs() < 1e-12 && (d[1] + 0.2).abs() < 1e-12);
        assert!(s.weights.iter().flatten().all(|w| w.abs() < 1e-12));
    }
}
