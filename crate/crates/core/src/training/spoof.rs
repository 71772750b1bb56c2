//! Speaker classifier used to score conversions: the fraction of converted
//! clips it assigns to the intended target speaker.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ConvGeom, ParamStore, Real, Tape, Tensor, UnaryBackward, Var};
use crate::error::{Error, Result};
use crate::model::{Conv, SpeakerBody};
use crate::training::{crop_cyclic, Adam, AdamConfig, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpoofConfig {
    pub lr: f64,
    /// multiplicative learning-rate decay per epoch
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_length: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for SpoofConfig {
    fn default() -> Self {
        SpoofConfig {
            lr: 5e-4,
            decay: 0.99,
            epochs: 30,
            batch_size: 8,
            clip_length: 16_384,
            base_channels: 8,
            seed: 0,
        }
    }
}

impl SpoofConfig {
    pub fn full() -> Self {
        SpoofConfig {
            epochs: 150,
            base_channels: 32,
            clip_length: 32_768,
            ..Self::default()
        }
    }
}

struct SoftmaxCrossEntropy<R> {
    /// `(softmax - onehot) / B`
    grad: Tensor<R>,
}

impl<R: Real> UnaryBackward<R> for SoftmaxCrossEntropy<R> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, grad_out: &Tensor<R>) -> Tensor<R> {
        let g = grad_out.item();
        self.grad.map(|v| v * g)
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`,
/// logits `[B, S]`.
pub fn cross_entropy<'t, R: Real>(logits: &Var<'t, R>, labels: &[usize]) -> Result<Var<'t, R>> {
    let [b, s] = *logits.shape() else {
        return Err(Error::Dimension(format!("logits must be [B, S], got {:?}", logits.shape())));
    };
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= s) {
        return Err(Error::Index(format!("label {y} outside {s} classes")));
    }
    let x = logits.value().data();
    let mut loss = 0.0;
    let mut grad = vec![R::zero(); b * s];
    for (i, &y) in labels.iter().enumerate() {
        let row = &x[i * s..(i + 1) * s];
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let z: f64 = row.iter().map(|v| (v.as_f64() - m).exp()).sum();
        loss += m + z.ln() - row[y].as_f64();
        for j in 0..s {
            let p = (row[j].as_f64() - m).exp() / z;
            let t = if j == y { 1.0 } else { 0.0 };
            grad[i * s + j] = R::of((p - t) / b as f64);
        }
    }
    let value = Tensor::scalar(R::of(loss / b as f64));
    Ok(logits.custom(
        value,
        SoftmaxCrossEntropy {
            grad: Tensor::new(vec![b, s], grad)?,
        },
    ))
}

/// Speaker-encoder body with a linear softmax head.
#[derive(Clone, Debug)]
pub struct SpoofClassifier {
    pub body: SpeakerBody,
    pub head: Conv,
    pub params: ParamStore<f32>,
    pub n_speakers: usize,
}

impl SpoofClassifier {
    pub fn new(n_speakers: usize, base_channels: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let body = SpeakerBody::new("spoof", base_channels, &mut params, &mut rng)?;
        let head = Conv::new(
            &mut params,
            "spoof.head",
            body.out_channels,
            n_speakers,
            1,
            ConvGeom::default(),
            false,
            &mut rng,
        )?;
        Ok(SpoofClassifier {
            body,
            head,
            params,
            n_speakers,
        })
    }

    fn logits_var<'t>(&self, bind: &Binding<'t, '_, f32>, x: &Var<'t, f32>) -> Result<Var<'t, f32>> {
        let h = self.body.forward(bind, x)?;
        let l = self.head.forward(bind, &h)?;
        let b = l.shape()[0];
        l.reshape(vec![b, self.n_speakers])
    }

    /// Class scores `[B, S]` for equal-length waveforms `[B, T]`.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.params, false);
        Ok(self.logits_var(&bind, &tape.constant(x.clone()))?.value().clone())
    }

    /// Most likely speaker of one clip.
    pub fn predict(&self, clip: &[f32]) -> Result<usize> {
        let l = self.logits(&Tensor::new(vec![1, clip.len()], clip.to_vec())?)?;
        let row = l.data();
        Ok((0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0))
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let clips: Vec<Vec<f32>> = dataset.utterances.iter().map(|u| u.samples.clone()).collect();
        let labels: Vec<usize> = dataset.utterances.iter().map(|u| u.speaker).collect();
        evaluate_spoofing(&clips, &labels, self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpoofReport {
    /// mean training loss of each epoch
    pub epoch_loss: Vec<f64>,
    /// percentage on the full training utterances after the last epoch
    pub train_accuracy: f64,
}

/// Cross-entropy training with Adam and per-epoch learning-rate decay.
pub fn train_spoof_classifier(dataset: &Dataset, cfg: &SpoofConfig) -> Result<(SpoofClassifier, SpoofReport)> {
    if dataset.speakers_present() < 2 {
        return Err(Error::Data(format!(
            "a speaker classifier needs at least two speakers, dataset has {}",
            dataset.speakers_present()
        )));
    }
    if cfg.batch_size == 0 || cfg.clip_length == 0 {
        return Err(Error::Config("spoof batch_size and clip_length must be positive".into()));
    }
    let mut clf = SpoofClassifier::new(dataset.n_speakers, cfg.base_channels, cfg.seed)?;
    let ids: Vec<_> = clf.params.ids().collect();
    let mut opt = Adam::new(
        &clf.params,
        ids,
        AdamConfig {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5900f);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.config.lr = cfg.lr * cfg.decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * cfg.clip_length);
            let mut labels = Vec::with_capacity(chunk.len());
            for &k in chunk {
                let u = &dataset.utterances[k];
                let start = if u.samples.len() > cfg.clip_length {
                    rng.random_range(0..=u.samples.len() - cfg.clip_length)
                } else {
                    0
                };
                data.extend(crop_cyclic(&u.samples, start, cfg.clip_length));
                labels.push(u.speaker);
            }
            let x = Tensor::new(vec![chunk.len(), cfg.clip_length], data)?;
            let grads = {
                let tape = Tape::new();
                let bind = Binding::new(&tape, &clf.params, true);
                let logits = clf.logits_var(&bind, &tape.constant(x))?;
                let loss = cross_entropy(&logits, &labels)?;
                let v = loss.item() as f64;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        step: epoch as u64,
                        detail: format!("spoof_ce={v}"),
                    });
                }
                total += v;
                batches += 1;
                tape.backward(&loss)?
            };
            opt.step(&mut clf.params, &grads)?;
        }
        epoch_loss.push(total / batches.max(1) as f64);
    }
    let train_accuracy = clf.accuracy(dataset)?;
    Ok((
        clf,
        SpoofReport {
            epoch_loss,
            train_accuracy,
        },
    ))
}

/// Percentage of `clips` classified as their `targets`.
pub fn evaluate_spoofing(clips: &[Vec<f32>], targets: &[usize], clf: &SpoofClassifier) -> Result<f64> {
    if clips.len() != targets.len() {
        return Err(Error::Dimension(format!("{} clips vs {} targets", clips.len(), targets.len())));
    }
    if clips.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut hits = 0;
    for (c, &t) in clips.iter().zip(targets) {
        if clf.predict(c)? == t {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / clips.len() as f64)
}
