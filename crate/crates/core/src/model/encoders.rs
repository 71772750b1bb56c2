use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{avg_pool1d, Binding, ConvGeom, PadMode, ParamStore, Real, Tensor, Var};
use crate::dsp::{Spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::model::layers::{Conv, ResidualStack};
use crate::model::{ModelConfig, HOP};

/// Column-normalization guard for content codes.
pub const CONTENT_EPS: f64 = 1e-8;

/// Minimum mel frames the speaker encoder accepts (five 2x poolings).
pub const MIN_SPEAKER_FRAMES: usize = 32;

/// Waveform to unit-column content code at 1/256 temporal resolution.
#[derive(Clone, Debug)]
pub struct ContentEncoder {
    input: Conv,
    stages: Vec<(ResidualStack, Conv)>,
    out1: Conv,
    out2: Conv,
}

impl ContentEncoder {
    pub fn new<R: Real>(cfg: &ModelConfig, store: &mut ParamStore<R>, rng: &mut impl Rng) -> Result<Self> {
        let b = cfg.base_channels;
        let input = Conv::same(store, "content.input", 1, b, 7, 1, PadMode::Reflect, rng)?;
        let mut stages = Vec::new();
        let mut c = b;
        for (i, &f) in cfg.downsample_factors.iter().enumerate() {
            let stack = ResidualStack::new(store, &format!("content.stage{i}.res"), c, &cfg.residual_dilations, None, rng)?;
            let down = Conv::new(
                store,
                &format!("content.stage{i}.down"),
                c,
                2 * c,
                2 * f,
                ConvGeom::new(f, 1, f / 2, PadMode::Reflect),
                false,
                rng,
            )?;
            stages.push((stack, down));
            c *= 2;
        }
        let out1 = Conv::same(store, "content.out1", c, cfg.d_con, 7, 1, PadMode::Reflect, rng)?;
        let out2 = Conv::same(store, "content.out2", cfg.d_con, cfg.d_con, 7, 1, PadMode::Reflect, rng)?;
        Ok(ContentEncoder {
            input,
            stages,
            out1,
            out2,
        })
    }

    /// `x` is `[B, T]` or `[B, 1, T]` with `T` a positive multiple of 256;
    /// returns `[B, d_con, T / 256]` with unit-norm columns.
    pub fn forward<'t, R: Real>(&self, bind: &Binding<'t, '_, R>, x: &Var<'t, R>) -> Result<Var<'t, R>> {
        let x = as_waveform_batch(x)?;
        let len = x.shape()[2];
        if len == 0 || len % HOP != 0 {
            return Err(Error::Size(format!(
                "content encoder needs a positive multiple of {HOP} samples, got {len}"
            )));
        }
        let mut h = self.input.forward(bind, &x)?;
        for (stack, down) in &self.stages {
            h = stack.forward(bind, &h, None)?;
            h = down.forward(bind, &h.gelu())?;
        }
        let h = self.out1.forward(bind, &h.gelu())?;
        let h = self.out2.forward(bind, &h.gelu())?;
        h.normalize_columns(CONTENT_EPS)
    }
}

/// Gaussian posterior over speaker embeddings, `sigma = exp(logvar / 2)`.
#[derive(Clone, Debug)]
pub struct SpeakerPosterior<'t, R: Real> {
    /// `[B, d_spk]`
    pub mu: Var<'t, R>,
    /// `[B, d_spk]`
    pub logvar: Var<'t, R>,
}

impl<'t, R: Real> SpeakerPosterior<'t, R> {
    pub fn sigma(&self) -> Var<'t, R> {
        self.logvar.scale(0.5).exp()
    }

    /// Reparameterized draw `z = mu + sigma * eps`.
    pub fn sample_with(&self, eps: &Tensor<R>) -> Result<Var<'t, R>> {
        if eps.shape() != self.mu.shape() {
            return Err(Error::Dimension(format!(
                "noise {:?} does not match posterior {:?}",
                eps.shape(),
                self.mu.shape()
            )));
        }
        let eps = self.mu.tape().constant(eps.clone());
        self.mu.add(&self.sigma().mul(&eps)?)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<Var<'t, R>> {
        let eps = standard_normal(self.mu.shape(), rng);
        self.sample_with(&eps)
    }
}

/// `N(0, I)` noise of the given shape.
pub fn standard_normal<R: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<R> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = StandardNormal.sample(rng);
        R::of(v)
    })
}

/// Draw `count` embeddings from the unit prior, `[count, d_spk]`.
pub fn sample_prior<R: Real>(count: usize, d_spk: usize, rng: &mut impl Rng) -> Tensor<R> {
    standard_normal(&[count, d_spk], rng)
}

/// Log-mel front end and strided conv body shared by the speaker encoder
/// and the spoofing classifier.
#[derive(Clone, Debug)]
pub struct SpeakerBody {
    input: Conv,
    down: Vec<Conv>,
    pub out_channels: usize,
}

impl SpeakerBody {
    pub fn new<R: Real>(
        prefix: &str,
        base: usize,
        store: &mut ParamStore<R>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mels = SpectrogramConfig::speaker().n_mels;
        let input = Conv::same(store, &format!("{prefix}.input"), mels, base, 3, 1, PadMode::Reflect, rng)?;
        let widths = [base, 2 * base, 4 * base, 8 * base, 16 * base, 16 * base];
        let down = (0..5)
            .map(|i| {
                Conv::same(
                    store,
                    &format!("{prefix}.down{i}"),
                    widths[i],
                    widths[i + 1],
                    3,
                    1,
                    PadMode::Reflect,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(SpeakerBody {
            input,
            down,
            out_channels: widths[5],
        })
    }

    /// `[B, T]` or `[B, 1, T]` waveform to pooled features `[B, C, 1]`.
    pub fn forward<'t, R: Real>(&self, bind: &Binding<'t, '_, R>, x: &Var<'t, R>) -> Result<Var<'t, R>> {
        let x = as_waveform_batch(x)?;
        let spec = Spectrogram::<R>::new(SpectrogramConfig::speaker())?;
        let frames = spec.config().frames(x.shape()[2]);
        if frames < MIN_SPEAKER_FRAMES {
            return Err(Error::Size(format!(
                "speaker encoder needs at least {MIN_SPEAKER_FRAMES} mel frames, clip gives {frames}"
            )));
        }
        let mel = spec.log_mel(&x)?;
        let mut h = self.input.forward(bind, &mel)?;
        for conv in &self.down {
            h = conv.forward(bind, &h)?.leaky_relu(crate::autodiff::LEAKY_SLOPE);
            h = avg_pool1d(&h, 2, 2)?;
        }
        let len = h.shape()[2];
        avg_pool1d(&h, len, 1)
    }
}

/// Waveform to diagonal-Gaussian speaker posterior.
#[derive(Clone, Debug)]
pub struct SpeakerEncoder {
    body: SpeakerBody,
    mean: Conv,
    logvar: Conv,
}

impl SpeakerEncoder {
    pub fn new<R: Real>(cfg: &ModelConfig, store: &mut ParamStore<R>, rng: &mut impl Rng) -> Result<Self> {
        let body = SpeakerBody::new("speaker", cfg.base_channels, store, rng)?;
        let c = body.out_channels;
        let mean = Conv::new(store, "speaker.mean", c, cfg.d_spk, 1, ConvGeom::default(), false, rng)?;
        let logvar = Conv::new(store, "speaker.logvar", c, cfg.d_spk, 1, ConvGeom::default(), false, rng)?;
        Ok(SpeakerEncoder { body, mean, logvar })
    }

    pub fn forward<'t, R: Real>(&self, bind: &Binding<'t, '_, R>, x: &Var<'t, R>) -> Result<SpeakerPosterior<'t, R>> {
        let h = self.body.forward(bind, x)?;
        let batch = h.shape()[0];
        let mu = self.mean.forward(bind, &h)?;
        let d = mu.shape()[1];
        let logvar = self.logvar.forward(bind, &h)?;
        Ok(SpeakerPosterior {
            mu: mu.reshape(vec![batch, d])?,
            logvar: logvar.reshape(vec![batch, d])?,
        })
    }
}

/// Accept `[T]`, `[B, T]` or `[B, 1, T]` and return `[B, 1, T]`.
pub fn as_waveform_batch<'t, R: Real>(x: &Var<'t, R>) -> Result<Var<'t, R>> {
    match *x.shape() {
        [t] => x.reshape(vec![1, 1, t]),
        [b, t] => x.reshape(vec![b, 1, t]),
        [_, 1, _] => Ok(x.clone()),
        _ => Err(Error::Dimension(format!(
            "waveform must be [T], [B, T] or [B, 1, T], got {:?}",
            x.shape()
        ))),
    }
}
