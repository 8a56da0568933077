//! Reconstruction network `R = clamp01(T₁ + U ∘ T₂)` and the constrained
//! mapping network `M`.

mod mapping;
mod unet;

pub use mapping::MappingNet;
pub use unet::UNet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Param, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::kspace::SimGrid;
use crate::scalar::Real;

/// Optimizer group of the linear maps `T₁`, `T₂`.
pub const GROUP_LINEAR: usize = 0;
/// Optimizer group of the U-Net.
pub const GROUP_UNET: usize = 1;
/// Optimizer group of the mapping MLP.
pub const GROUP_MAPPING: usize = 2;
pub const GROUP_NAMES: [&str; 3] = ["linear", "unet", "mapping"];

/// Lower bound applied to `M` before it is used as a squared speed.
pub const SPEED_FLOOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `T₁`, `T₂` are full `m² × m²` matrices.
    Dense,
    /// `T₁`, `T₂` act as four `(m²/4) × (m²/4)` maps between pixel-unshuffled
    /// sub-images.
    PixelShuffle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub levels: usize,
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 32,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument(format!("invalid U-Net {self:?}")));
        }
        if m % (1 << self.levels) != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {m} is not divisible by 2^{}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    pub c0: f64,
    pub c1: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![10, 10, 10]
}

impl MappingConfig {
    pub fn new(c0: f64, c1: f64) -> Self {
        Self {
            c0,
            c1,
            hidden: default_hidden(),
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub variant: Variant,
    pub unet: UNetConfig,
    pub mapping: MappingConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.m % 2 != 0 {
            return Err(Error::InvalidArgument(format!("m = {} must be even", self.m)));
        }
        self.unet.validate(self.m)?;
        if self.mapping.hidden.is_empty() || self.mapping.hidden.contains(&0) {
            return Err(Error::InvalidArgument("mapping network needs hidden layers".into()));
        }
        if !(self.mapping.c0.is_finite() && self.mapping.c1.is_finite()) {
            return Err(Error::InvalidArgument("non-finite c0/c1".into()));
        }
        Ok(())
    }
}

/// Parameter initialisation rule.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Zero,
    /// `U(-1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
}

/// Hands out [`ParamId`]s in construction order, either creating fresh
/// tensors or checking an existing set.
pub(crate) enum Layout<'p, T: Real> {
    Fresh { params: ParamSet<T>, rng: ChaCha8Rng },
    Check { params: &'p ParamSet<T>, next: usize },
}

impl<T: Real> Layout<'_, T> {
    pub(crate) fn add(&mut self, name: String, group: usize, shape: Vec<usize>, init: Init) -> Result<ParamId> {
        match self {
            Layout::Fresh { params, rng } => {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Zero => vec![T::zero(); n],
                    Init::FanIn(fan) => {
                        let bound = 1.0 / (fan as f64).sqrt();
                        (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
                    }
                };
                Ok(params.push(name, group, Tensor::new(shape, data)?))
            }
            Layout::Check { params, next } => {
                let id = ParamId(*next);
                *next += 1;
                let p = params
                    .iter()
                    .nth(id.0)
                    .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
                if p.name != name || p.group != group || p.tensor.shape() != &shape[..] {
                    return Err(Error::InvalidArgument(format!(
                        "parameter {} is {} {:?} (group {}), expected {name} {shape:?} (group {group})",
                        id.0,
                        p.name,
                        p.tensor.shape(),
                        p.group
                    )));
                }
                Ok(id)
            }
        }
    }
}

/// `R := clamp01(T₁ + U ∘ T₂)`.
#[derive(Clone, Debug)]
pub struct ReconstructionNet {
    m: usize,
    variant: Variant,
    t1: Vec<ParamId>,
    t2: Vec<ParamId>,
    unet: UNet,
}

impl ReconstructionNet {
    fn build<T: Real>(cfg: &ModelConfig, layout: &mut Layout<'_, T>) -> Result<Self> {
        let m = cfg.m;
        let linear = |name: &str, layout: &mut Layout<'_, T>| -> Result<Vec<ParamId>> {
            match cfg.variant {
                Variant::Dense => Ok(vec![layout.add(name.into(), GROUP_LINEAR, vec![m * m, m * m], Init::Zero)?]),
                Variant::PixelShuffle => {
                    let q = m * m / 4;
                    (0..4)
                        .map(|k| layout.add(format!("{name}.{k}"), GROUP_LINEAR, vec![q, q], Init::Zero))
                        .collect()
                }
            }
        };
        let t1 = linear("t1", layout)?;
        let t2 = linear("t2", layout)?;
        let unet = UNet::build(&cfg.unet, layout)?;
        Ok(Self {
            m,
            variant: cfg.variant,
            t1,
            t2,
            unet,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn unet(&self) -> &UNet {
        &self.unet
    }

    /// Applies `T₁` (`which = 0`) or `T₂` (`which = 1`) to an `[m, m]` input.
    pub fn linear<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], which: usize, x: Var) -> Result<Var> {
        let m = self.m;
        let ids = if which == 0 { &self.t1 } else { &self.t2 };
        match self.variant {
            Variant::Dense => {
                let flat = g.reshape(x, vec![m * m])?;
                let y = g.matvec(p[ids[0].0], flat)?;
                g.reshape(y, vec![m, m])
            }
            Variant::PixelShuffle => {
                let q = m * m / 4;
                let parts = g.pixel_unshuffle(x)?;
                let mut outs = Vec::with_capacity(4);
                for (k, id) in ids.iter().enumerate() {
                    let sub = g.slice(parts, k * q, q)?;
                    outs.push(g.matvec(p[id.0], sub)?);
                }
                let joined = g.concat(&outs)?;
                let joined = g.reshape(joined, vec![4, m / 2, m / 2])?;
                g.pixel_shuffle(joined)
            }
        }
    }

    /// Pre-clamp output `T₁(x) + U(T₂(x))`.
    pub fn raw<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], data: Var) -> Result<Var> {
        let s = g.shape(data);
        if s != [self.m, self.m] {
            return Err(Error::shape("reconstruct", format!("data {s:?}, model m = {}", self.m)));
        }
        let a = self.linear(g, p, 0, data)?;
        let b = self.linear(g, p, 1, data)?;
        let u = self.unet.forward(g, p, b)?;
        g.add(a, u)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], data: Var) -> Result<Var> {
        let raw = self.raw(g, p, data)?;
        Ok(g.clamp01(raw))
    }
}

/// Both networks with their shared parameter set.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamSet<T>,
    recon: ReconstructionNet,
    mapping: MappingNet,
}

impl<T: Real> Model<T> {
    /// Fresh model: `T₁ = T₂ = 0`, fan-in uniform U-Net and MLP weights, and
    /// a zero U-Net output layer, so the initial reconstruction is 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layout = Layout::Fresh {
            params: ParamSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let recon = ReconstructionNet::build(&config, &mut layout)?;
        let mapping = MappingNet::build(&config.mapping, &mut layout)?;
        let Layout::Fresh { params, .. } = layout else {
            unreachable!()
        };
        Ok(Self {
            config,
            params,
            recon,
            mapping,
        })
    }

    /// Rebuilds a model around loaded parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let mut layout = Layout::Check {
            params: &params,
            next: 0,
        };
        let recon = ReconstructionNet::build(&config, &mut layout)?;
        let mapping = MappingNet::build(&config.mapping, &mut layout)?;
        let Layout::Check { next, .. } = layout else {
            unreachable!()
        };
        if next != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters supplied, layout uses {next}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            params,
            recon,
            mapping,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn recon(&self) -> &ReconstructionNet {
        &self.recon
    }

    pub fn mapping(&self) -> &MappingNet {
        &self.mapping
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            recon: self.recon.clone(),
            mapping: self.mapping.clone(),
        }
    }

    /// Same layout with every parameter replaced.
    pub fn with_params(&self, params: Vec<Param<T>>) -> Result<Self> {
        Self::from_params(self.config.clone(), ParamSet::from_params(params))
    }

    /// Evaluates `R(data)` for an `m × m` record.
    pub fn reconstruct(&self, data: &[T]) -> Result<Vec<T>> {
        let m = self.config.m;
        let mut g = Graph::new();
        let p = self.params.attach(&mut g);
        let x = g.constant(Tensor::new(vec![m, m], data.to_vec())?);
        let y = self.recon.forward(&mut g, &p, x)?;
        Ok(g.value(y).to_vec())
    }

    /// Evaluates `M` (without the speed floor) at the given points.
    pub fn mapping_values(&self, v: &[T]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let p = self.params.attach(&mut g);
        let x = g.constant(Tensor::new(vec![v.len()], v.to_vec())?);
        let y = self.mapping.forward(&mut g, &p, x)?;
        Ok(g.value(y).to_vec())
    }

    /// Squared-speed field over the padded grid from an interior estimate.
    pub fn speed_field(&self, grid: &SimGrid, f_hat: &[T]) -> Result<Vec<T>> {
        let m = self.config.m;
        let mut g = Graph::new();
        let p = self.params.attach(&mut g);
        let x = g.constant(Tensor::new(vec![m, m], f_hat.to_vec())?);
        let y = self.mapping.speed_field(&mut g, &p, x, grid)?;
        Ok(g.value(y).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(m: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            m,
            variant,
            unet: UNetConfig {
                levels: 2,
                base_channels: 4,
            },
            mapping: MappingConfig::new(0.7, 1.0),
        }
    }

    #[test]
    fn linear_parameter_counts() {
        let dense = Model::<f64>::new(config(8, Variant::Dense), 1).unwrap();
        let shuffled = Model::<f64>::new(config(8, Variant::PixelShuffle), 1).unwrap();
        assert_eq!(dense.params().count(Some(GROUP_LINEAR)), 2 * 4096);
        assert_eq!(shuffled.params().count(Some(GROUP_LINEAR)), 2 * 1024);
        assert_eq!(
            dense.params().count(Some(GROUP_UNET)),
            shuffled.params().count(Some(GROUP_UNET))
        );
    }

    #[test]
    fn zero_initialised_model_reconstructs_zero() {
        for variant in [Variant::Dense, Variant::PixelShuffle] {
            let model = Model::<f64>::new(config(8, variant), 3).unwrap();
            let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
            assert!(model.reconstruct(&data).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reload_checks_layout() {
        let model = Model::<f64>::new(config(8, Variant::Dense), 3).unwrap();
        let back = Model::from_params(model.config().clone(), model.params().clone()).unwrap();
        assert_eq!(back.params(), model.params());
        assert!(Model::from_params(config(8, Variant::PixelShuffle), model.params().clone()).is_err());
    }

    #[test]
    fn rejects_indivisible_sizes() {
        let mut cfg = config(8, Variant::Dense);
        cfg.unet.levels = 4;
        assert!(Model::<f32>::new(cfg, 0).is_err());
    }
}
