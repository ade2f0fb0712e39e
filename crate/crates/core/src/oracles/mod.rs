//! Hidden objectives and simulated users.
//!
//! Every objective is maximized. Classical minimization test functions are
//! negated here, so Branin's global value is `-0.397887` and sphere and
//! Ackley peak at 0.

mod choice;
mod task;

pub use choice::{simulate_choice, ChoiceKind, ChoiceNoiseModel};
pub use task::{draw_theta_star, WarpMatchTask, WarpParameterization, WarpTaskFile};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::acquisition::BoxBounds;
use crate::{Error, Result};

/// Global maximum of the negated Branin function.
pub const BRANIN_MAX: f64 = -0.397_887_357_729_738_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Branin,
    Ackley,
    Sphere,
    WarpMatch,
}

#[derive(Debug, Clone)]
enum Payload {
    Branin,
    Ackley,
    Sphere,
    Warp(Box<WarpMatchTask>),
}

/// A deterministic objective with its box and known maximum.
#[derive(Debug, Clone)]
pub struct HiddenObjective {
    name: String,
    bounds: BoxBounds,
    max_value: f64,
    payload: Payload,
}

impl HiddenObjective {
    /// Negated Branin on `[-5, 10] × [0, 15]`.
    pub fn branin() -> Self {
        Self {
            name: "branin-2d".into(),
            bounds: BoxBounds::new(vec![-5.0, 0.0], vec![10.0, 15.0]).expect("static"),
            max_value: BRANIN_MAX,
            payload: Payload::Branin,
        }
    }

    /// `-‖x‖²` on `[-5, 5]^dim`.
    pub fn sphere(dim: usize) -> Result<Self> {
        Ok(Self {
            name: format!("sphere-{dim}d"),
            bounds: BoxBounds::symmetric(dim, 5.0)?,
            max_value: 0.0,
            payload: Payload::Sphere,
        })
    }

    /// Negated Ackley (a = 20, b = 0.2, c = 2π) on `[-5, 5]^dim`.
    pub fn ackley(dim: usize) -> Result<Self> {
        Ok(Self {
            name: format!("ackley-{dim}d"),
            bounds: BoxBounds::symmetric(dim, 5.0)?,
            max_value: 0.0,
            payload: Payload::Ackley,
        })
    }

    pub fn warp_match(task: WarpMatchTask) -> Self {
        Self {
            name: format!("warp-match-{}", task.parameterization().name()),
            bounds: task.bounds().clone(),
            max_value: 0.0,
            payload: Payload::Warp(Box::new(task)),
        }
    }

    /// Parses names such as `branin`, `sphere-6d`, `ackley-4`, `warp-affine`
    /// or `warp-full`. Warp tasks draw their hidden warp from `seed`.
    pub fn from_name(name: &str, seed: u64) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let dim_of = |rest: &str| -> Result<usize> {
            rest.trim_end_matches('d')
                .parse::<usize>()
                .ok()
                .filter(|d| *d >= 1)
                .ok_or_else(|| Error::config(format!("bad dimension in objective name {name}")))
        };
        match lower.as_str() {
            "branin" | "branin-2d" => Ok(Self::branin()),
            "warp-affine" | "warp-match-affine" | "warp-match" => Ok(Self::warp_match(
                WarpMatchTask::synthetic(seed, 32, WarpParameterization::Affine)?,
            )),
            "warp-full" | "warp-match-full" => Ok(Self::warp_match(WarpMatchTask::synthetic(
                seed,
                32,
                WarpParameterization::Full,
            )?)),
            s if s.starts_with("sphere-") => Self::sphere(dim_of(&s[7..])?),
            s if s.starts_with("ackley-") => Self::ackley(dim_of(&s[7..])?),
            _ => Err(Error::config(format!("unknown objective {name}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ObjectiveKind {
        match self.payload {
            Payload::Branin => ObjectiveKind::Branin,
            Payload::Ackley => ObjectiveKind::Ackley,
            Payload::Sphere => ObjectiveKind::Sphere,
            Payload::Warp(_) => ObjectiveKind::WarpMatch,
        }
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Global maximum value.
    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn warp_task(&self) -> Option<&WarpMatchTask> {
        match &self.payload {
            Payload::Warp(t) => Some(t),
            _ => None,
        }
    }

    /// Rejects points outside the box (beyond rounding slack).
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::contract(format!(
                "{} expects {} inputs, got {}",
                self.name,
                self.dim(),
                x.len()
            )));
        }
        let slack = 1e-12;
        for ((v, l), u) in x.iter().zip(self.bounds.lower()).zip(self.bounds.upper()) {
            if !v.is_finite() || *v < l - slack || *v > u + slack {
                return Err(Error::contract(format!("{} input {v} outside [{l}, {u}]", self.name)));
            }
        }
        Ok(match &self.payload {
            Payload::Branin => -branin(x[0], x[1]),
            Payload::Sphere => -x.iter().map(|v| v * v).sum::<f64>(),
            Payload::Ackley => -ackley(x),
            Payload::Warp(task) => task.objective(x)?,
        })
    }

    /// `max_value - f(x)`.
    pub fn simple_regret(&self, x: &[f64]) -> Result<f64> {
        Ok(self.max_value - self.evaluate(x)?)
    }
}

fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    let v = -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + std::f64::consts::E;
    v.max(0.0)
}
