//! Training objectives for the discriminator and for the encoder/generator
//! side, plus the closed-form Gaussian KL used by the sanity checks.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, Real, Tensor, Var};
use crate::dsp::{Spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::model::{Networks, ScaleOutput, SpeakerPosterior};

/// Loss weights and switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub content: f64,
    pub kl: f64,
    /// weight of the spectral terms inside the reconstruction loss
    pub beta: f64,
    /// window sizes of the spectral terms
    pub spectral_windows: Vec<usize>,
    /// use `-log D` for the generator instead of `log(1 - D)`
    pub non_saturating: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction: 10.0,
            content: 10.0,
            kl: 0.02,
            beta: 1.0,
            spectral_windows: vec![2048, 1024, 512],
            non_saturating: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for w in &self.spectral_windows {
            SpectrogramConfig::spectral(*w).validate()?;
        }
        let all = [self.reconstruction, self.content, self.kl, self.beta];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {all:?}")));
        }
        Ok(())
    }
}

fn check_labels(batch: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Dimension(format!("{} labels for a batch of {batch}", labels.len())));
    }
    Ok(())
}

/// Discriminator loss of one scale: mean over batch and patches of
/// `softplus(-l_real[y]) + softplus(l_fake[y_fake])`.
pub fn discriminator_scale_loss<'t, R: Real>(
    real: &ScaleOutput<'t, R>,
    real_labels: &[usize],
    fake: &ScaleOutput<'t, R>,
    fake_labels: &[usize],
) -> Result<Var<'t, R>> {
    check_labels(real.logits.shape()[0], real_labels)?;
    check_labels(fake.logits.shape()[0], fake_labels)?;
    let r = real.logits.select_channel(real_labels)?.neg().softplus().mean();
    let f = fake.logits.select_channel(fake_labels)?.softplus().mean();
    r.add(&f)
}

/// Adversarial generator loss summed over scales. Saturating form
/// `mean(-softplus(l))` by default, `mean(softplus(-l))` otherwise.
pub fn generator_adversarial_loss<'t, R: Real>(
    fake: &[ScaleOutput<'t, R>],
    labels: &[usize],
    non_saturating: bool,
) -> Result<Var<'t, R>> {
    let mut total: Option<Var<'t, R>> = None;
    for scale in fake {
        check_labels(scale.logits.shape()[0], labels)?;
        let l = scale.logits.select_channel(labels)?;
        let term = if non_saturating {
            l.neg().softplus().mean()
        } else {
            l.softplus().mean().neg()
        };
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Size("no discriminator scales".into()))
}

/// Sum over scales and body layers of the mean absolute feature difference.
pub fn feature_matching_loss<'t, R: Real>(real: &[ScaleOutput<'t, R>], fake: &[ScaleOutput<'t, R>]) -> Result<Var<'t, R>> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Size(format!("{} real scales vs {} fake scales", real.len(), fake.len())));
    }
    let mut total: Option<Var<'t, R>> = None;
    for (r, f) in real.iter().zip(fake) {
        if r.features.len() != f.features.len() {
            return Err(Error::Size(format!(
                "{} real feature maps vs {} fake feature maps",
                r.features.len(),
                f.features.len()
            )));
        }
        for (a, b) in r.features.iter().zip(&f.features) {
            if a.shape() != b.shape() {
                return Err(Error::Size(format!("feature maps {:?} vs {:?}", a.shape(), b.shape())));
            }
            let term = a.sub(b)?.abs().mean();
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::Size("no feature maps".into()))
}

/// Squared distance between log-mel spectrograms, summed over bins and
/// frames and averaged over the batch.
pub fn spectral_loss<'t, R: Real>(real: &Var<'t, R>, fake: &Var<'t, R>, window: usize) -> Result<Var<'t, R>> {
    if real.shape() != fake.shape() {
        return Err(Error::Size(format!("spectral loss on {:?} vs {:?}", real.shape(), fake.shape())));
    }
    let spec = Spectrogram::<R>::new(SpectrogramConfig::spectral(window))?;
    let a = spec.log_mel(real)?;
    let b = spec.log_mel(fake)?;
    let batch = if a.shape().len() == 3 { a.shape()[0] } else { 1 };
    Ok(a.sub(&b)?.square().sum().scale(1.0 / batch as f64))
}

/// `||c - c'||^2` summed over channels and frames, averaged over the batch.
pub fn content_loss<'t, R: Real>(code: &Var<'t, R>, code_converted: &Var<'t, R>) -> Result<Var<'t, R>> {
    if code.shape() != code_converted.shape() {
        return Err(Error::Size(format!(
            "content codes {:?} vs {:?}",
            code.shape(),
            code_converted.shape()
        )));
    }
    let batch = code.shape().first().copied().unwrap_or(1).max(1);
    Ok(code.sub(code_converted)?.square().sum().scale(1.0 / batch as f64))
}

/// KL of the posterior from `N(0, I)`, averaged over the batch:
/// `0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)`.
pub fn kl_loss<'t, R: Real>(post: &SpeakerPosterior<'t, R>) -> Result<Var<'t, R>> {
    let batch = post.mu.shape()[0].max(1);
    let ones = post.mu.tape().constant(Tensor::full(post.mu.shape().to_vec(), R::one()));
    let inner = post.mu.square().add(&post.logvar.exp())?.sub(&ones)?.sub(&post.logvar)?;
    Ok(inner.sum().scale(0.5 / batch as f64))
}

/// Closed-form `KL(N(mu, diag sigma^2) || N(0, I))`.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Dimension(format!("{} means vs {} deviations", mu.len(), sigma.len())));
    }
    let mut kl = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Contract(format!("standard deviation must be positive and finite, got {s}")));
        }
        let v = s * s;
        kl += m * m + v - 1.0 - v.ln();
    }
    Ok(0.5 * kl)
}

/// One training batch for the encoder/generator side.
#[derive(Clone, Debug)]
pub struct GeneratorBatch<R: Real> {
    /// augmented input `[B, T]`
    pub source: Tensor<R>,
    /// reconstruction target `[B, T]` (the input, time-jittered)
    pub target: Tensor<R>,
    /// speaker encoder view `[B, T]` (the input, segment-shuffled)
    pub speaker_view: Tensor<R>,
    /// reparameterization noise `[B, d_spk]`
    pub eps: Tensor<R>,
    /// derangement pairing each item with another speaker's embedding
    pub perm: Vec<usize>,
    /// speaker label of each item
    pub speakers: Vec<usize>,
}

impl<R: Real> GeneratorBatch<R> {
    pub fn converted_speakers(&self) -> Vec<usize> {
        self.perm.iter().map(|&j| self.speakers[j]).collect()
    }

    pub fn cast<S: Real>(&self) -> GeneratorBatch<S> {
        GeneratorBatch {
            source: self.source.cast(),
            target: self.target.cast(),
            speaker_view: self.speaker_view.cast(),
            eps: self.eps.cast(),
            perm: self.perm.clone(),
            speakers: self.speakers.clone(),
        }
    }
}

/// Every term of the encoder/generator objective.
#[derive(Clone, Debug)]
pub struct GeneratorLosses<'t, R: Real> {
    pub total: Var<'t, R>,
    pub adversarial: Var<'t, R>,
    pub feature_matching: Var<'t, R>,
    /// one term per spectral window
    pub spectral: Vec<Var<'t, R>>,
    pub reconstruction: Var<'t, R>,
    pub content: Var<'t, R>,
    pub kl: Var<'t, R>,
}

/// Outputs of one encoder/generator forward pass.
#[derive(Clone, Debug)]
pub struct GeneratorPass<'t, R: Real> {
    pub losses: GeneratorLosses<'t, R>,
    /// `G(E_c(x), z)`, `[B, 1, T]`
    pub reconstruction: Var<'t, R>,
    /// `G(E_c(x), z[perm])`, `[B, 1, T]`
    pub conversion: Var<'t, R>,
}

impl<R: Real> GeneratorLosses<'_, R> {
    /// `(name, value)` for every term.
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut v = vec![
            ("g_total".to_string(), self.total.item().as_f64()),
            ("g_adv".to_string(), self.adversarial.item().as_f64()),
            ("fm".to_string(), self.feature_matching.item().as_f64()),
            ("rec".to_string(), self.reconstruction.item().as_f64()),
            ("con".to_string(), self.content.item().as_f64()),
            ("kl".to_string(), self.kl.item().as_f64()),
        ];
        for (i, s) in self.spectral.iter().enumerate() {
            v.push((format!("spec{i}"), s.item().as_f64()));
        }
        v
    }
}

/// Full encoder/generator objective. `g` binds E_c, E_s and G; `d` binds
/// the discriminator (normally frozen). Both must share one tape.
pub fn generator_pass<'t, R: Real>(
    nets: &Networks,
    g: &Binding<'t, '_, R>,
    d: &Binding<'t, '_, R>,
    batch: &GeneratorBatch<R>,
    weights: &LossWeights,
) -> Result<GeneratorPass<'t, R>> {
    let tape = g.tape;
    let b = batch.source.shape().first().copied().unwrap_or(0);
    if batch.target.shape() != batch.source.shape() || batch.speaker_view.shape() != batch.source.shape() {
        return Err(Error::Size(format!(
            "source {:?}, target {:?} and speaker view {:?} must agree",
            batch.source.shape(),
            batch.target.shape(),
            batch.speaker_view.shape()
        )));
    }
    check_labels(b, &batch.speakers)?;
    check_labels(b, &batch.perm)?;

    let source = tape.constant(batch.source.clone());
    let target = tape.constant(batch.target.clone()).reshape(vec![b, 1, batch.target.shape()[1]])?;
    let code = nets.content.forward(g, &source)?;
    let posterior = nets.speaker.forward(g, &tape.constant(batch.speaker_view.clone()))?;
    let z = posterior.sample_with(&batch.eps)?;
    let z_conv = z.gather_batch(&batch.perm)?;

    let reconstruction = nets.generator.forward(g, &code, &z)?;
    let conversion = nets.generator.forward(g, &code, &z_conv)?;

    let fake_out = nets.discriminator.forward(d, &conversion)?;
    let adversarial = generator_adversarial_loss(&fake_out, &batch.converted_speakers(), weights.non_saturating)?;

    let real_out = nets.discriminator.forward(&d.frozen(), &target)?;
    let rec_out = nets.discriminator.forward(d, &reconstruction)?;
    let feature_matching = feature_matching_loss(&real_out, &rec_out)?;

    let spectral = weights
        .spectral_windows
        .iter()
        .map(|&w| spectral_loss(&target, &reconstruction, w))
        .collect::<Result<Vec<_>>>()?;
    let mut rec = feature_matching.clone();
    for s in &spectral {
        rec = rec.add(&s.scale(weights.beta))?;
    }

    let code_conv = nets.content.forward(g, &conversion)?;
    let content = content_loss(&code, &code_conv)?;
    let kl = kl_loss(&posterior)?;

    let total = adversarial
        .add(&rec.scale(weights.reconstruction))?
        .add(&content.scale(weights.content))?
        .add(&kl.scale(weights.kl))?;
    Ok(GeneratorPass {
        losses: GeneratorLosses {
            total,
            adversarial,
            feature_matching,
            spectral,
            reconstruction: rec,
            content,
            kl,
        },
        reconstruction,
        conversion,
    })
}

/// Discriminator objective, per scale and summed.
#[derive(Clone, Debug)]
pub struct DiscriminatorLosses<'t, R: Real> {
    pub total: Var<'t, R>,
    pub per_scale: Vec<Var<'t, R>>,
}

/// `real` carries labels `real_labels`, `fake` (normally detached
/// conversions) carries `fake_labels`.
pub fn discriminator_pass<'t, R: Real>(
    nets: &Networks,
    d: &Binding<'t, '_, R>,
    real: &Var<'t, R>,
    real_labels: &[usize],
    fake: &Var<'t, R>,
    fake_labels: &[usize],
) -> Result<DiscriminatorLosses<'t, R>> {
    let r = nets.discriminator.forward(d, real)?;
    let f = nets.discriminator.forward(d, fake)?;
    let per_scale = r
        .iter()
        .zip(&f)
        .map(|(a, b)| discriminator_scale_loss(a, real_labels, b, fake_labels))
        .collect::<Result<Vec<_>>>()?;
    let mut total = per_scale[0].clone();
    for s in &per_scale[1..] {
        total = total.add(s)?;
    }
    Ok(DiscriminatorLosses { total, per_scale })
}

#[cfg(test)]
mod tests;
