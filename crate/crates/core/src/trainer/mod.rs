//! Self-supervised training: `g → R → M → W_M → g`, evaluation metrics and
//! curve export.

mod data;
mod loss;
mod run;

pub use data::{precompute, Sample, TrainingData};
pub use loss::{loss_and_gradients, relative_misfit, self_supervised_loss};
pub use run::{
    eval_metrics, map_sup_error, mapping_curve, train, write_mapping_curve, write_metrics, write_timing,
    EvalMetrics, MetricsRecord, TrainOutcome, SUP_GRID_POINTS,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GROUP_LINEAR, GROUP_MAPPING, GROUP_UNET};

/// Ground-truth speed laws `Γ(f)` used to generate data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GammaCase {
    /// `0.3 f + 0.7`
    #[serde(rename = "gamma1")]
    Gamma1,
    /// `0.3 √f + 0.7`
    #[serde(rename = "gamma2")]
    Gamma2,
    /// `0.3 f² + 0.7`
    #[serde(rename = "gamma3")]
    Gamma3,
    /// `0.7`
    #[serde(rename = "gamma4")]
    Gamma4,
}

impl GammaCase {
    pub const ALL: [GammaCase; 4] = [Self::Gamma1, Self::Gamma2, Self::Gamma3, Self::Gamma4];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gamma1 => "gamma1",
            Self::Gamma2 => "gamma2",
            Self::Gamma3 => "gamma3",
            Self::Gamma4 => "gamma4",
        }
    }

    /// `Γ(v)` for `v ∈ [0, 1]`.
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Self::Gamma1 => 0.3 * v + 0.7,
            Self::Gamma2 => 0.3 * v.sqrt() + 0.7,
            Self::Gamma3 => 0.3 * v * v + 0.7,
            Self::Gamma4 => 0.7,
        }
    }

    pub fn c0(self) -> f64 {
        self.eval(0.0)
    }

    pub fn c1(self) -> f64 {
        self.eval(1.0)
    }

    /// Largest squared speed the law produces on `[0, 1]`.
    pub fn max_speed_sq(self) -> f64 {
        self.c0().max(self.c1())
    }
}

impl fmt::Display for GammaCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GammaCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_lowercase();
        let key = key.strip_prefix("gamma").or_else(|| key.strip_prefix('γ')).unwrap_or(&key);
        match key {
            "1" => Ok(Self::Gamma1),
            "2" => Ok(Self::Gamma2),
            "3" => Ok(Self::Gamma3),
            "4" => Ok(Self::Gamma4),
            _ => Err(Error::UnknownGamma(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma_case: GammaCase,
    pub m: usize,
    pub batch_size: usize,
    pub lr_linear: f64,
    pub lr_unet: f64,
    pub lr_mlp: f64,
    pub max_iterations: usize,
    /// Validation metrics are logged every this many iterations (and at the
    /// start and end of the run).
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma_case: GammaCase::Gamma1,
            m: 32,
            batch_size: 2,
            lr_linear: 1e-4,
            lr_unet: 1e-3,
            lr_mlp: 1e-3,
            max_iterations: 5000,
            eval_interval: 250,
            seed: 20240611,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        for (name, lr) in [("lr_linear", self.lr_linear), ("lr_unet", self.lr_unet), ("lr_mlp", self.lr_mlp)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {lr} must be positive")));
            }
        }
        if self.eval_interval == 0 {
            return Err(Error::InvalidArgument("eval_interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rates indexed by optimizer group.
    pub fn group_lr(&self) -> Vec<f64> {
        let mut lr = vec![0.0; 3];
        lr[GROUP_LINEAR] = self.lr_linear;
        lr[GROUP_UNET] = self.lr_unet;
        lr[GROUP_MAPPING] = self.lr_mlp;
        lr
    }
}
