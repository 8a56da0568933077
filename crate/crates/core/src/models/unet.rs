use super::{Init, Layout, UNetConfig, GROUP_UNET};
use crate::diff::{Graph, ParamId, Var};
use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
struct Conv {
    k: ParamId,
    b: ParamId,
}

impl Conv {
    fn build<T: Real>(
        layout: &mut Layout<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        size: usize,
        init: Init,
    ) -> Result<Self> {
        let init = match init {
            Init::Zero => Init::Zero,
            Init::FanIn(_) => Init::FanIn(c_in * size * size),
        };
        Ok(Self {
            k: layout.add(format!("{name}.weight"), GROUP_UNET, vec![c_out, c_in, size, size], init)?,
            b: layout.add(format!("{name}.bias"), GROUP_UNET, vec![c_out], init)?,
        })
    }

    fn apply<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], x: Var, pad: usize) -> Result<Var> {
        g.conv2d(x, p[self.k.0], Some(p[self.b.0]), 1, pad)
    }
}

/// Encoder/decoder with channel-concatenated skips: two 3×3 convolutions
/// with relu per level, 2×2 max-pool down, 2×2 transposed convolution up,
/// and a final 1×1 convolution to one channel.
#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    down: Vec<[Conv; 2]>,
    bottom: [Conv; 2],
    up: Vec<Conv>,
    merge: Vec<[Conv; 2]>,
    head: Conv,
}

impl UNet {
    pub(crate) fn build<T: Real>(config: &UNetConfig, layout: &mut Layout<'_, T>) -> Result<Self> {
        let fan = Init::FanIn(1);
        let mut down = Vec::new();
        let mut c_in = 1;
        for l in 0..config.levels {
            let c = config.channels(l);
            down.push([
                Conv::build(layout, &format!("unet.down{l}.0"), c_in, c, 3, fan)?,
                Conv::build(layout, &format!("unet.down{l}.1"), c, c, 3, fan)?,
            ]);
            c_in = c;
        }
        let cb = config.channels(config.levels);
        let bottom = [
            Conv::build(layout, "unet.bottom.0", c_in, cb, 3, fan)?,
            Conv::build(layout, "unet.bottom.1", cb, cb, 3, fan)?,
        ];
        let mut up = Vec::new();
        let mut merge = Vec::new();
        for l in (0..config.levels).rev() {
            let (c_hi, c) = (config.channels(l + 1), config.channels(l));
            up.push(Conv {
                k: layout.add(format!("unet.up{l}.weight"), GROUP_UNET, vec![c_hi, c, 2, 2], Init::FanIn(c_hi))?,
                b: layout.add(format!("unet.up{l}.bias"), GROUP_UNET, vec![c], Init::FanIn(c_hi))?,
            });
            merge.push([
                Conv::build(layout, &format!("unet.merge{l}.0"), 2 * c, c, 3, fan)?,
                Conv::build(layout, &format!("unet.merge{l}.1"), c, c, 3, fan)?,
            ]);
        }
        let head = Conv::build(layout, "unet.head", config.channels(0), 1, 1, Init::Zero)?;
        Ok(Self {
            config: *config,
            down,
            bottom,
            up,
            merge,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// `[m, m]` → `[m, m]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[Var], x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let mut h = g.reshape(x, vec![1, shape[0], shape[1]])?;
        let mut skips = Vec::with_capacity(self.down.len());
        for [a, b] in &self.down {
            let y = a.apply(g, p, h, 1)?;
            let y = g.relu(y);
            let y = b.apply(g, p, y, 1)?;
            let y = g.relu(y);
            skips.push(y);
            h = g.max_pool2(y)?;
        }
        for c in &self.bottom {
            let y = c.apply(g, p, h, 1)?;
            h = g.relu(y);
        }
        for (up, [a, b]) in self.up.iter().zip(&self.merge) {
            let y = g.upconv2(h, p[up.k.0], Some(p[up.b.0]))?;
            let skip = skips.pop().expect("one skip per level");
            let y = g.concat_channels(skip, y)?;
            let y = a.apply(g, p, y, 1)?;
            let y = g.relu(y);
            let y = b.apply(g, p, y, 1)?;
            h = g.relu(y);
        }
        let y = self.head.apply(g, p, h, 0)?;
        g.reshape(y, shape)
    }
}
