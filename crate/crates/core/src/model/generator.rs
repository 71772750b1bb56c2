use rand::Rng;

use crate::autodiff::{Binding, PadMode, ParamStore, Real, TransposeGeom, Var};
use crate::error::{Error, Result};
use crate::model::layers::{Conv, ConvT, ResidualStack};
use crate::model::ModelConfig;

/// Content code plus speaker embedding to waveform in (-1, 1).
#[derive(Clone, Debug)]
pub struct Generator {
    in1: Conv,
    in2: Conv,
    stages: Vec<(ConvT, ResidualStack)>,
    output: Conv,
    d_con: usize,
    d_spk: usize,
}

impl Generator {
    pub fn new<R: Real>(cfg: &ModelConfig, store: &mut ParamStore<R>, rng: &mut impl Rng) -> Result<Self> {
        let top = cfg.base_channels << cfg.downsample_factors.len();
        let in1 = Conv::same(store, "generator.in1", cfg.d_con, top, 7, 1, PadMode::Reflect, rng)?;
        let in2 = Conv::same(store, "generator.in2", top, top, 7, 1, PadMode::Reflect, rng)?;
        let mut stages = Vec::new();
        let mut c = top;
        for (i, &f) in cfg.downsample_factors.iter().rev().enumerate() {
            let up = ConvT::new(
                store,
                &format!("generator.stage{i}.up"),
                c,
                c / 2,
                2 * f,
                TransposeGeom { stride: f, pad: f / 2 },
                rng,
            )?;
            let stack = ResidualStack::new(
                store,
                &format!("generator.stage{i}.res"),
                c / 2,
                &cfg.residual_dilations,
                Some(cfg.d_spk),
                rng,
            )?;
            stages.push((up, stack));
            c /= 2;
        }
        let output = Conv::same(store, "generator.output", c, 1, 7, 1, PadMode::Reflect, rng)?;
        Ok(Generator {
            in1,
            in2,
            stages,
            output,
            d_con: cfg.d_con,
            d_spk: cfg.d_spk,
        })
    }

    /// `c` is `[B, d_con, L]`, `z` is `[B, d_spk]`; returns `[B, 1, 256 L]`.
    pub fn forward<'t, R: Real>(
        &self,
        bind: &Binding<'t, '_, R>,
        c: &Var<'t, R>,
        z: &Var<'t, R>,
    ) -> Result<Var<'t, R>> {
        let [batch, d_con, _] = *c.shape() else {
            return Err(Error::Dimension(format!("content code must be [B, d_con, L], got {:?}", c.shape())));
        };
        if d_con != self.d_con {
            return Err(Error::Dimension(format!(
                "content code has {d_con} channels, generator expects {}",
                self.d_con
            )));
        }
        if z.shape() != [batch, self.d_spk] {
            return Err(Error::Dimension(format!(
                "speaker embedding {:?} does not match [{batch}, {}]",
                z.shape(),
                self.d_spk
            )));
        }
        let h = self.in1.forward(bind, c)?;
        let mut h = self.in2.forward(bind, &h.gelu())?;
        for (up, stack) in &self.stages {
            h = up.forward(bind, &h.gelu())?;
            h = stack.forward(bind, &h, Some(z))?;
        }
        Ok(self.output.forward(bind, &h.gelu())?.tanh())
    }
}
