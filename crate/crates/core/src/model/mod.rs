//! Content encoder, speaker encoder, generator and multi-scale
//! discriminator.

mod discriminator;
mod encoders;
mod generator;
mod layers;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use discriminator::{Discriminator, ScaleDiscriminator, ScaleOutput, SCALE_POOL_KERNEL, SCALE_POOL_STRIDE};
pub use encoders::{
    as_waveform_batch, sample_prior, standard_normal, ContentEncoder, SpeakerBody, SpeakerEncoder, SpeakerPosterior,
    CONTENT_EPS, MIN_SPEAKER_FRAMES,
};
pub use generator::Generator;
pub use layers::{Conv, ConvT, ResidualBlock, ResidualStack};

use crate::autodiff::{Binding, ParamId, ParamStore, Real, Tape, Tensor};
use crate::error::{Error, Result};

/// Total temporal reduction of the content encoder.
pub const HOP: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_con: usize,
    pub d_spk: usize,
    pub base_channels: usize,
    pub n_speakers: usize,
    pub downsample_factors: Vec<usize>,
    /// one residual block per dilation in every stack
    pub residual_dilations: Vec<usize>,
    pub n_discriminator_scales: usize,
}

impl ModelConfig {
    /// Full-width network.
    pub fn full(n_speakers: usize) -> Self {
        ModelConfig {
            d_con: 4,
            d_spk: 128,
            base_channels: 32,
            n_speakers,
            downsample_factors: vec![2, 2, 8, 8],
            residual_dilations: vec![1, 3, 9, 27],
            n_discriminator_scales: 3,
        }
    }

    /// Channels divided by four, two residual blocks per stack.
    pub fn desk(n_speakers: usize) -> Self {
        ModelConfig {
            base_channels: 8,
            residual_dilations: vec![1, 3],
            ..Self::full(n_speakers)
        }
    }

    /// Smallest useful network, for finite-difference checks.
    pub fn micro(n_speakers: usize) -> Self {
        ModelConfig {
            d_spk: 8,
            base_channels: 2,
            residual_dilations: vec![1],
            ..Self::full(n_speakers)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_con == 0 || self.d_spk == 0 || self.base_channels == 0 || self.n_speakers == 0 {
            return bad("d_con, d_spk, base_channels and n_speakers must be positive".into());
        }
        if self.downsample_factors.iter().product::<usize>() != HOP {
            return bad(format!(
                "downsample factors {:?} must multiply to {HOP}",
                self.downsample_factors
            ));
        }
        if self.downsample_factors.iter().any(|&f| f < 2 || f % 2 != 0) {
            return bad(format!(
                "downsample factors {:?} must be even (kernel 2f, pad f/2)",
                self.downsample_factors
            ));
        }
        if self.residual_dilations.is_empty() || self.residual_dilations.contains(&0) {
            return bad("residual dilations must be nonempty and positive".into());
        }
        if self.n_discriminator_scales == 0 {
            return bad("need at least one discriminator scale".into());
        }
        Ok(())
    }
}

/// Architecture of all four networks. Holds parameter handles only, so the
/// same layout drives stores of any precision.
#[derive(Clone, Debug)]
pub struct Networks {
    pub config: ModelConfig,
    pub content: ContentEncoder,
    pub speaker: SpeakerEncoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    content_ids: Range<usize>,
    speaker_ids: Range<usize>,
    generator_ids: Range<usize>,
    discriminator_ids: Vec<Range<usize>>,
}

impl Networks {
    /// Build the networks, registering freshly initialized parameters.
    pub fn new<R: Real>(config: &ModelConfig, store: &mut ParamStore<R>, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let s0 = store.len();
        let content = ContentEncoder::new(config, store, rng)?;
        let s1 = store.len();
        let speaker = SpeakerEncoder::new(config, store, rng)?;
        let s2 = store.len();
        let generator = Generator::new(config, store, rng)?;
        let s3 = store.len();
        let mut scales = Vec::new();
        let mut discriminator_ids = Vec::new();
        for k in 0..config.n_discriminator_scales {
            let a = store.len();
            scales.push(ScaleDiscriminator::new(config, &format!("disc{k}"), store, rng)?);
            discriminator_ids.push(a..store.len());
        }
        Ok(Networks {
            config: config.clone(),
            content,
            speaker,
            generator,
            discriminator: Discriminator { scales },
            content_ids: s0..s1,
            speaker_ids: s1..s2,
            generator_ids: s2..s3,
            discriminator_ids,
        })
    }

    fn ids(range: Range<usize>) -> Vec<ParamId> {
        range.map(ParamId).collect()
    }

    pub fn content_params(&self) -> Vec<ParamId> {
        Self::ids(self.content_ids.clone())
    }

    pub fn speaker_params(&self) -> Vec<ParamId> {
        Self::ids(self.speaker_ids.clone())
    }

    pub fn generator_params(&self) -> Vec<ParamId> {
        Self::ids(self.generator_ids.clone())
    }

    /// Parameters of E_c, E_s and G, updated together.
    pub fn g_side_params(&self) -> Vec<ParamId> {
        Self::ids(self.content_ids.start..self.generator_ids.end)
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        let start = self.discriminator_ids.first().map_or(0, |r| r.start);
        let end = self.discriminator_ids.last().map_or(0, |r| r.end);
        Self::ids(start..end)
    }

    pub fn discriminator_scale_params(&self, k: usize) -> Vec<ParamId> {
        Self::ids(self.discriminator_ids[k].clone())
    }

    pub fn counts<R: Real>(&self, store: &ParamStore<R>) -> ParamCounts {
        ParamCounts {
            content: store.scalar_count(&self.content_params()),
            speaker: store.scalar_count(&self.speaker_params()),
            generator: store.scalar_count(&self.generator_params()),
            discriminator_scales: (0..self.discriminator_ids.len())
                .map(|k| store.scalar_count(&self.discriminator_scale_params(k)))
                .collect(),
        }
    }
}

/// Trainable scalar counts per network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub content: usize,
    pub speaker: usize,
    pub generator: usize,
    pub discriminator_scales: Vec<usize>,
}

impl ParamCounts {
    /// E_c + E_s + G
    pub fn conversion_total(&self) -> usize {
        self.content + self.speaker + self.generator
    }

    pub fn discriminator_total(&self) -> usize {
        self.discriminator_scales.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.conversion_total() + self.discriminator_total()
    }

    /// One `name count` line per entry.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("content_encoder {}\n", self.content));
        s.push_str(&format!("speaker_encoder {}\n", self.speaker));
        s.push_str(&format!("generator {}\n", self.generator));
        for (k, c) in self.discriminator_scales.iter().enumerate() {
            s.push_str(&format!("discriminator_scale{k} {c}\n"));
        }
        s.push_str(&format!("conversion_total {}\n", self.conversion_total()));
        s.push_str(&format!("discriminator_total {}\n", self.discriminator_total()));
        s.push_str(&format!("total {}\n", self.total()));
        s
    }
}

/// Exact trainable scalar counts for `cfg` (independent of input length).
pub fn count_parameters(cfg: &ModelConfig) -> Result<ParamCounts> {
    let mut store = ParamStore::<f32>::new();
    let nets = Networks::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(nets.counts(&store))
}

/// Networks plus their parameters.
#[derive(Clone, Debug)]
pub struct Model<R: Real> {
    pub nets: Networks,
    pub params: ParamStore<R>,
}

impl<R: Real> Model<R> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let nets = Networks::new(config, &mut params, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Model { nets, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.nets.config
    }

    pub fn cast<S: Real>(&self) -> Model<S> {
        Model {
            nets: self.nets.clone(),
            params: self.params.cast(),
        }
    }

    /// Content code `[B, d_con, T / 256]` of waveforms `[B, T]`.
    pub fn content_encode(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.params, false);
        let c = self.nets.content.forward(&bind, &tape.constant(x.clone()))?;
        Ok(c.value().clone())
    }

    /// Posterior `(mu, sigma)`, each `[B, d_spk]`.
    pub fn speaker_encode(&self, x: &Tensor<R>) -> Result<(Tensor<R>, Tensor<R>)> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.params, false);
        let p = self.nets.speaker.forward(&bind, &tape.constant(x.clone()))?;
        Ok((p.mu.value().clone(), p.sigma().value().clone()))
    }

    /// Waveforms `[B, T]` from codes `[B, d_con, L]` and embeddings `[B, d_spk]`.
    pub fn generate(&self, c: &Tensor<R>, z: &Tensor<R>) -> Result<Tensor<R>> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.params, false);
        let y = self.nets.generator.forward(&bind, &tape.constant(c.clone()), &tape.constant(z.clone()))?;
        let (b, t) = (y.shape()[0], y.shape()[2]);
        y.value().clone().reshape(vec![b, t])
    }

    /// `generate(content_encode(x), z)`.
    pub fn convert(&self, x: &Tensor<R>, z: &Tensor<R>) -> Result<Tensor<R>> {
        let c = self.content_encode(x)?;
        self.generate(&c, z)
    }
}

#[cfg(test)]
mod tests;
