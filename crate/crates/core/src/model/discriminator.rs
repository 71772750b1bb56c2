use rand::Rng;

use crate::autodiff::{avg_pool1d, Binding, ConvGeom, PadMode, ParamStore, Real, Var, LEAKY_SLOPE};
use crate::error::Result;
use crate::model::encoders::as_waveform_batch;
use crate::model::layers::Conv;
use crate::model::ModelConfig;

/// Pooling between discriminator scales.
pub const SCALE_POOL_KERNEL: usize = 4;
pub const SCALE_POOL_STRIDE: usize = 2;

/// Strided grouped-conv patch classifier with one logit map per speaker.
#[derive(Clone, Debug)]
pub struct ScaleDiscriminator {
    body: Vec<Conv>,
    head: Conv,
}

/// Output of one scale.
#[derive(Clone, Debug)]
pub struct ScaleOutput<'t, R: Real> {
    /// `[B, n_speakers, P]` patch logits
    pub logits: Var<'t, R>,
    /// activations of every body layer
    pub features: Vec<Var<'t, R>>,
}

impl ScaleDiscriminator {
    pub fn new<R: Real>(
        cfg: &ModelConfig,
        name: &str,
        store: &mut ParamStore<R>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let b = cfg.base_channels;
        let first = (b / 2).max(1);
        let mut body = vec![Conv::new(
            store,
            &format!("{name}.in"),
            1,
            first,
            15,
            ConvGeom::new(1, 1, 7, PadMode::Zero),
            false,
            rng,
        )?];
        let widths = [first, 2 * b, 8 * b, 32 * b, 32 * b];
        for i in 0..4 {
            let groups = (widths[i] / 4).max(1);
            body.push(Conv::new(
                store,
                &format!("{name}.down{i}"),
                widths[i],
                widths[i + 1],
                41,
                ConvGeom::new(4, 1, 20, PadMode::Zero).with_groups(groups),
                false,
                rng,
            )?);
        }
        let c = widths[4];
        body.push(Conv::new(
            store,
            &format!("{name}.post"),
            c,
            c,
            5,
            ConvGeom::new(1, 1, 2, PadMode::Zero),
            false,
            rng,
        )?);
        let head = Conv::new(
            store,
            &format!("{name}.head"),
            c,
            cfg.n_speakers,
            1,
            ConvGeom::default(),
            false,
            rng,
        )?;
        Ok(ScaleDiscriminator { body, head })
    }

    pub fn forward<'t, R: Real>(&self, bind: &Binding<'t, '_, R>, x: &Var<'t, R>) -> Result<ScaleOutput<'t, R>> {
        let mut h = x.clone();
        let mut features = Vec::with_capacity(self.body.len());
        for conv in &self.body {
            h = conv.forward(bind, &h)?.leaky_relu(LEAKY_SLOPE);
            features.push(h.clone());
        }
        let logits = self.head.forward(bind, &h)?;
        Ok(ScaleOutput { logits, features })
    }
}

/// Discriminators applied to the waveform at 1x, 2x and 4x downsampling.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub scales: Vec<ScaleDiscriminator>,
}

impl Discriminator {
    pub fn new<R: Real>(cfg: &ModelConfig, store: &mut ParamStore<R>, rng: &mut impl Rng) -> Result<Self> {
        let scales = (0..cfg.n_discriminator_scales)
            .map(|k| ScaleDiscriminator::new(cfg, &format!("disc{k}"), store, rng))
            .collect::<Result<_>>()?;
        Ok(Discriminator { scales })
    }

    /// `x` is `[B, T]` or `[B, 1, T]`.
    pub fn forward<'t, R: Real>(&self, bind: &Binding<'t, '_, R>, x: &Var<'t, R>) -> Result<Vec<ScaleOutput<'t, R>>> {
        let mut h = as_waveform_batch(x)?;
        let mut out = Vec::with_capacity(self.scales.len());
        for (k, scale) in self.scales.iter().enumerate() {
            if k > 0 {
                h = avg_pool1d(&h, SCALE_POOL_KERNEL, SCALE_POOL_STRIDE)?;
            }
            out.push(scale.forward(bind, &h)?);
        }
        Ok(out)
    }
}
