use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::{augment_clip, AugmentedClip};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::GeneratorBatch;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f32>,
    pub speaker: usize,
}

/// Labeled utterances; speakers are dense indices `0..n_speakers`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub n_speakers: usize,
}

impl Dataset {
    pub fn new(utterances: Vec<Utterance>, n_speakers: usize) -> Result<Self> {
        if let Some(u) = utterances.iter().find(|u| u.speaker >= n_speakers) {
            return Err(Error::Data(format!("speaker {} outside 0..{n_speakers}", u.speaker)));
        }
        if let Some(k) = utterances.iter().position(|u| u.samples.is_empty()) {
            return Err(Error::Data(format!("utterance {k} is empty")));
        }
        Ok(Dataset { utterances, n_speakers })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Number of distinct speakers actually present.
    pub fn speakers_present(&self) -> usize {
        let mut seen = vec![false; self.n_speakers];
        for u in &self.utterances {
            seen[u.speaker] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// `len` samples starting at `start`, wrapping around the end of `x`.
pub fn crop_cyclic(x: &[f32], start: usize, len: usize) -> Vec<f32> {
    (0..len).map(|i| x[(start + i) % x.len()]).collect()
}

/// Uniform fixpoint-free permutation of `0..n` (`n >= 2`), by rejection.
pub fn random_derangement(n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Data(format!("no derangement of {n} items")));
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(p);
        }
    }
}

/// Random crops with labels, their pairing and augmented views.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// un-augmented crops
    pub clips: Vec<Vec<f32>>,
    pub speakers: Vec<usize>,
    /// item `i` takes its reference embedding from item `perm[i]`
    pub perm: Vec<usize>,
    pub views: Vec<AugmentedClip<f32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Speakers the conversions are meant to sound like.
    pub fn target_speakers(&self) -> Vec<usize> {
        self.perm.iter().map(|&j| self.speakers[j]).collect()
    }

    fn stack(&self, f: impl Fn(&AugmentedClip<f32>) -> &Vec<f32>) -> Tensor<f32> {
        let len = self.clips.first().map_or(0, Vec::len);
        let data: Vec<f32> = self.views.iter().flat_map(|v| f(v).iter().copied()).collect();
        Tensor::new(vec![self.len(), len], data).expect("equal-length crops")
    }

    /// Tensors for the loss functions, with reparameterization noise `eps`.
    pub fn generator_batch(&self, eps: Tensor<f32>) -> GeneratorBatch<f32> {
        GeneratorBatch {
            source: self.stack(|v| &v.input),
            target: self.stack(|v| &v.target),
            speaker_view: self.stack(|v| &v.speaker_view),
            eps,
            perm: self.perm.clone(),
            speakers: self.speakers.clone(),
        }
    }
}

/// Draw `batch_size` utterances uniformly, crop each at a uniform offset
/// (short ones wrap cyclically), augment, and pair with a derangement.
pub fn make_batch(dataset: &Dataset, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot draw a batch from an empty dataset".into()));
    }
    let n = cfg.batch_size;
    let len = cfg.clip_length;
    let mut clips = Vec::with_capacity(n);
    let mut speakers = Vec::with_capacity(n);
    for _ in 0..n {
        let u = &dataset.utterances[rng.random_range(0..dataset.len())];
        if u.samples.is_empty() {
            return Err(Error::Data("empty utterance in dataset".into()));
        }
        let span = u.samples.len().saturating_sub(len);
        let start = if u.samples.len() >= len {
            rng.random_range(0..=span)
        } else {
            rng.random_range(0..u.samples.len())
        };
        clips.push(crop_cyclic(&u.samples, start, len));
        speakers.push(u.speaker);
    }
    let perm = random_derangement(n, rng)?;
    let views = clips
        .iter()
        .map(|c| augment_clip(c, &cfg.augment, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        clips,
        speakers,
        perm,
        views,
    })
}
