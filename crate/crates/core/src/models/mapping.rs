use super::{Init, Layout, MappingConfig, GROUP_MAPPING, SPEED_FLOOR};
use crate::diff::{Graph, ParamId, Tensor, Var};
use crate::error::Result;
use crate::kspace::SimGrid;
use crate::scalar::Real;

/// Scalar MLP with tanh hidden layers, corrected so that `M(0) = c₀` and
/// `M(1) = c₁` for any weights:
///
/// ```text
/// M(f) = MLP(f) − MLP(0)·(1 − f) − MLP(1)·f + (c₁ − c₀)·f + c₀
/// ```
#[derive(Clone, Debug)]
pub struct MappingNet {
    layers: Vec<(ParamId, ParamId)>,
    c0: f64,
    c1: f64,
}

impl MappingNet {
    pub(crate) fn build<T: Real>(cfg: &MappingConfig, layout: &mut Layout<'_, T>) -> Result<Self> {
        let mut widths = vec![1];
        widths.extend(&cfg.hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let init = Init::FanIn(w[0]);
                Ok((
                    layout.add(format!("mapping.{i}.weight"), GROUP_MAPPING, vec![w[1], w[0]], init)?,
                    layout.add(format!("mapping.{i}.bias"), GROUP_MAPPING, vec![w[1]], init)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            c0: cfg.c0,
            c1: cfg.c1,
        })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Raw MLP on a column `[rows, 1]`.
    fn mlp<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.dense(h, p[w.0], Some(p[b.0]))?;
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    /// Elementwise `M(v)` for `v` of any shape; inputs are clamped to
    /// `[0, 1]` first.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], v: Var) -> Result<Var> {
        let shape = g.shape(v).to_vec();
        let n = g.value(v).len();
        let x = g.clamp01(v);
        let x = g.reshape(x, vec![n])?;
        let column = g.reshape(x, vec![n, 1])?;
        let ends = g.constant(Tensor::new(vec![2, 1], vec![T::zero(), T::one()])?);
        let rows = g.concat(&[column, ends])?;
        let out = self.mlp(g, p, rows)?;
        let out = g.reshape(out, vec![n + 2])?;
        let at_x = g.slice(out, 0, n)?;
        let at0 = g.slice(out, n, 1)?;
        let at1 = g.slice(out, n + 1, 1)?;
        let at0 = g.broadcast(at0, n)?;
        let at1 = g.broadcast(at1, n)?;
        let neg = g.scale(x, -T::one());
        let one_minus = g.offset(neg, T::one());
        let left = g.mul(at0, one_minus)?;
        let right = g.mul(at1, x)?;
        let y = g.sub(at_x, left)?;
        let y = g.sub(y, right)?;
        let affine = g.scale(x, T::lit(self.c1 - self.c0));
        let affine = g.offset(affine, T::lit(self.c0));
        let y = g.add(y, affine)?;
        g.reshape(y, shape)
    }

    /// `max(M(f̂), ε)` on the interior, `c₀` on the padding: `[m, m]` →
    /// `[n, n]`.
    pub fn speed_field<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], f_hat: Var, grid: &SimGrid) -> Result<Var> {
        let y = self.forward(g, p, f_hat)?;
        let y = g.floor_at(y, T::lit(SPEED_FLOOR));
        let (n, o) = (grid.n(), grid.offset());
        g.embed(y, n, n, o, o, T::lit(self.c0))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Model, ModelConfig, UNetConfig, Variant};
    use super::*;

    fn model(seed: u64) -> Model<f64> {
        Model::new(
            ModelConfig {
                m: 4,
                variant: Variant::Dense,
                unet: UNetConfig {
                    levels: 1,
                    base_channels: 2,
                },
                mapping: MappingConfig::new(0.7, 1.0),
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn endpoints_hold_for_random_weights() {
        for seed in 0..50 {
            let v = model(seed).mapping_values(&[0.0, 1.0, 0.5]).unwrap();
            assert_eq!(v[0], 0.7);
            assert!((v[1] - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn zero_weights_leave_the_affine_part() {
        let mut m = model(1);
        for p in m.params_mut().iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let v = m.mapping_values(&[0.5]).unwrap();
        assert!((v[0] - 0.85).abs() < 1e-15);
    }

    #[test]
    fn speed_field_pads_with_c0() {
        let m = model(2);
        let grid = SimGrid::new(4, 2).unwrap();
        let zeros = m.speed_field(&grid, &[0.0; 16]).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.7));
        let ones = m.speed_field(&grid, &[1.0; 16]).unwrap();
        let interior = grid.crop(&ones);
        assert!(interior.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(ones.iter().filter(|&&v| v == 0.7).count(), 64 - 16);
    }
}
