use rand::Rng;

use crate::autodiff::{
    conv1d, conv_transpose1d, init_bias, Binding, ConvGeom, ParamId, ParamStore, PadMode, Real, TransposeGeom, Var,
    WeightNormParam,
};
use crate::error::{Error, Result};

/// Weight-normalized convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: WeightNormParam,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        geom: ConvGeom,
        zero: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let groups = geom.groups.max(1);
        if !c_in.is_multiple_of(groups) || !c_out.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{name}: channels {c_in} -> {c_out} not divisible into {groups} groups"
            )));
        }
        let shape = [c_out, c_in / groups, kernel];
        let weight = WeightNormParam::init(store, name, &shape, zero, rng)?;
        let bias = init_bias(store, name, c_out, c_in / groups * kernel, zero, rng)?;
        Ok(Conv {
            weight,
            bias,
            geom,
            c_in,
            c_out,
            kernel,
        })
    }

    /// Stride-1 convolution with "same" padding `dilation * (kernel - 1) / 2`.
    #[allow(clippy::too_many_arguments)]
    pub fn same<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        mode: PadMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let geom = ConvGeom::new(1, dilation, dilation * (kernel - 1) / 2, mode);
        Self::new(store, name, c_in, c_out, kernel, geom, false, rng)
    }

    pub fn forward<'t, R: Real>(&self, bind: &Binding<'t, '_, R>, x: &Var<'t, R>) -> Result<Var<'t, R>> {
        let w = self.weight.weight(bind)?;
        let b = bind.param(self.bias);
        conv1d(x, &w, Some(&b), &self.geom)
    }
}

/// Weight-normalized transposed convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvT {
    pub weight: WeightNormParam,
    pub bias: ParamId,
    pub geom: TransposeGeom,
}

impl ConvT {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        geom: TransposeGeom,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !kernel.is_multiple_of(geom.stride) {
            return Err(Error::Config(format!(
                "{name}: kernel {kernel} is not a multiple of stride {}",
                geom.stride
            )));
        }
        // each output sample sees c_in * kernel / stride inputs
        let fan_in = c_in * kernel / geom.stride;
        let weight = WeightNormParam::init_with_fan_in(store, name, &[c_out, c_in, kernel], fan_in, false, rng)?;
        let bias = init_bias(store, name, c_out, fan_in, false, rng)?;
        Ok(ConvT { weight, bias, geom })
    }

    pub fn forward<'t, R: Real>(&self, bind: &Binding<'t, '_, R>, x: &Var<'t, R>) -> Result<Var<'t, R>> {
        let w = self.weight.weight(bind)?;
        let b = bind.param(self.bias);
        conv_transpose1d(x, &w, Some(&b), &self.geom)
    }
}

/// `x + proj(gated_tanh(dilated_conv(x) [+ cond_proj(z)]))`
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub dilated: Conv,
    pub cond: Option<Conv>,
    pub proj: Conv,
    pub channels: usize,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        channels: usize,
        dilation: usize,
        cond_dim: Option<usize>,
        zero_proj: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let dilated = Conv::same(
            store,
            &format!("{name}.dilated"),
            channels,
            2 * channels,
            3,
            dilation,
            PadMode::Reflect,
            rng,
        )?;
        let cond = match cond_dim {
            Some(d) => Some(Conv::new(
                store,
                &format!("{name}.cond"),
                d,
                2 * channels,
                1,
                ConvGeom::default(),
                false,
                rng,
            )?),
            None => None,
        };
        let proj = Conv::new(
            store,
            &format!("{name}.proj"),
            channels,
            channels,
            1,
            ConvGeom::default(),
            zero_proj,
            rng,
        )?;
        Ok(ResidualBlock {
            dilated,
            cond,
            proj,
            channels,
        })
    }

    /// `x` is `[B, C, T]`; `z` is `[B, d]` and required iff the block was
    /// built with a conditioning projection.
    pub fn forward<'t, R: Real>(
        &self,
        bind: &Binding<'t, '_, R>,
        x: &Var<'t, R>,
        z: Option<&Var<'t, R>>,
    ) -> Result<Var<'t, R>> {
        let mut h = self.dilated.forward(bind, x)?;
        match (&self.cond, z) {
            (Some(cond), Some(z)) => {
                let [b, d] = *z.shape() else {
                    return Err(Error::Dimension(format!(
                        "speaker embedding must be [B, d], got {:?}",
                        z.shape()
                    )));
                };
                if d != cond.c_in {
                    return Err(Error::Dimension(format!(
                        "speaker embedding has {d} dims, block expects {}",
                        cond.c_in
                    )));
                }
                let c = cond.forward(bind, &z.reshape(vec![b, d, 1])?)?;
                h = h.add_time_broadcast(&c)?;
            }
            (Some(_), None) => {
                return Err(Error::Contract("conditioned residual block needs a speaker embedding".into()))
            }
            (None, _) => {}
        }
        let out = self.proj.forward(bind, &h.gated_tanh()?)?;
        x.add(&out)
    }
}

/// Residual blocks with increasing dilation.
#[derive(Clone, Debug)]
pub struct ResidualStack {
    pub blocks: Vec<ResidualBlock>,
}

impl ResidualStack {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        channels: usize,
        dilations: &[usize],
        cond_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let blocks = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ResidualBlock::new(store, &format!("{name}.{i}"), channels, d, cond_dim, false, rng))
            .collect::<Result<_>>()?;
        Ok(ResidualStack { blocks })
    }

    pub fn forward<'t, R: Real>(
        &self,
        bind: &Binding<'t, '_, R>,
        x: &Var<'t, R>,
        z: Option<&Var<'t, R>>,
    ) -> Result<Var<'t, R>> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(bind, &h, z)?;
        }
        Ok(h)
    }
}
