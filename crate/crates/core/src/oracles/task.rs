use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::BoxBounds;
use crate::warp::{theta_bounds, warp_compose, Field2D, WarpParams, AFFINE_DIMS, PARAM_DIM};
use crate::{Error, Result};

/// Decorrelates the source field from the hidden warp drawn with the same seed.
const SOURCE_SEED_MIX: u64 = 0x5eed_f1e1d;

/// Hidden warp drawn uniformly from the inner half of every active
/// parameter range.
pub fn draw_theta_star(seed: u64, parameterization: WarpParameterization) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = theta_bounds();
    parameterization
        .active_dims()
        .iter()
        .map(|&d| 0.5 * rng.random_range(full.lower()[d]..=full.upper()[d]))
        .collect()
}

/// Which warp parameters the optimizer controls; the rest stay at identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpParameterization {
    /// The 6 affine parameters.
    Affine,
    /// All 24 parameters.
    Full,
}

impl WarpParameterization {
    pub fn active_dims(&self) -> Vec<usize> {
        match self {
            WarpParameterization::Affine => AFFINE_DIMS.to_vec(),
            WarpParameterization::Full => (0..PARAM_DIM).collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WarpParameterization::Affine => "affine",
            WarpParameterization::Full => "full",
        }
    }
}

/// Recover a hidden warp of a source field. The objective is
/// `-‖warp(θ, source) - target‖₂ / ‖target‖₂`, maximal (0) at the hidden warp.
#[derive(Debug, Clone)]
pub struct WarpMatchTask {
    source: Field2D,
    target: Field2D,
    target_norm: f64,
    theta_star: Vec<f64>,
    parameterization: WarpParameterization,
    bounds: BoxBounds,
    blind: bool,
}

impl WarpMatchTask {
    /// `theta_star` holds values for the active parameters only.
    pub fn new(source: Field2D, theta_star: Vec<f64>, parameterization: WarpParameterization, blind: bool) -> Result<Self> {
        let dims = parameterization.active_dims();
        if theta_star.len() != dims.len() {
            return Err(Error::config(format!(
                "hidden warp has {} values, the {} parameterization needs {}",
                theta_star.len(),
                parameterization.name(),
                dims.len()
            )));
        }
        let params = WarpParams::from_active(&dims, &theta_star).map_err(|e| Error::config(e.to_string()))?;
        let target = warp_compose(&params, &source);
        let target_norm = target.l2_norm();
        if target_norm <= 0.0 {
            return Err(Error::config("target field is identically zero"));
        }
        let bounds = theta_bounds().select(&dims)?;
        Ok(Self { source, target, target_norm, theta_star, parameterization, bounds, blind })
    }

    /// Synthetic source of side `size` and a hidden warp drawn uniformly from
    /// the inner half of every parameter range, both from `seed`.
    pub fn synthetic(seed: u64, size: usize, parameterization: WarpParameterization) -> Result<Self> {
        let source = Field2D::synthetic(size, size, seed ^ SOURCE_SEED_MIX)?;
        Self::new(source, draw_theta_star(seed, parameterization), parameterization, true)
    }

    pub fn source(&self) -> &Field2D {
        &self.source
    }

    pub fn target(&self) -> &Field2D {
        &self.target
    }

    /// Hidden warp (active parameters). Never sent to a client.
    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn parameterization(&self) -> WarpParameterization {
        self.parameterization
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    /// Blind tasks hide objective values from the user.
    pub fn blind(&self) -> bool {
        self.blind
    }

    pub fn params(&self, theta: &[f64]) -> Result<WarpParams> {
        WarpParams::from_active(&self.parameterization.active_dims(), theta)
    }

    pub fn render(&self, theta: &[f64]) -> Result<Field2D> {
        Ok(warp_compose(&self.params(theta)?, &self.source))
    }

    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        let out = self.render(theta)?;
        Ok(-out.l2_distance(&self.target)? / self.target_norm)
    }

    /// Loads a task description; a relative image path resolves against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: WarpTaskFile = serde_json::from_str(&text)?;
        file.build(path.parent())
    }
}

/// On-disk warp task:
///
/// ```json
/// {
///   "source_image": "source.pgm",
///   "parameterization": "affine",
///   "theta_star": [0.1, -0.2, 0.3, 0.0, 0.2, -0.1],
///   "blind": true
/// }
/// ```
///
/// Without `source_image`, a synthetic field of side `size` (default 32) is
/// generated from `synthetic_seed`. Without `theta_star`, the hidden warp is
/// drawn from `synthetic_seed` as in [`WarpMatchTask::synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpTaskFile {
    #[serde(default)]
    pub source_image: Option<String>,
    #[serde(default)]
    pub synthetic_seed: Option<u64>,
    #[serde(default)]
    pub size: Option<usize>,
    pub parameterization: WarpParameterization,
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
    #[serde(default = "default_blind")]
    pub blind: bool,
}

fn default_blind() -> bool {
    true
}

impl WarpTaskFile {
    pub fn build(&self, base: Option<&Path>) -> Result<WarpMatchTask> {
        let seed = self.synthetic_seed.unwrap_or(0);
        let size = self.size.unwrap_or(32);
        let source = match &self.source_image {
            Some(p) => {
                let path = match base {
                    Some(b) if Path::new(p).is_relative() => b.join(p),
                    _ => Path::new(p).to_path_buf(),
                };
                Field2D::from_pgm(&std::fs::read(path)?)?
            }
            None => Field2D::synthetic(size, size, seed ^ SOURCE_SEED_MIX)?,
        };
        let theta_star = match &self.theta_star {
            Some(t) => t.clone(),
            None => draw_theta_star(seed, self.parameterization),
        };
        WarpMatchTask::new(source, theta_star, self.parameterization, self.blind)
    }
}
