//! Label-preserving waveform augmentations: sign flip and amplitude scaling
//! of the network input, temporal jitter of the reconstruction target, and
//! segment shuffling of the speaker-encoder view.
//!
//! Each random operation has a forced counterpart taking the drawn value
//! explicitly.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub amp_range: [f64; 2],
    /// `[-j, j]` integer samples
    pub jitter_range: [i64; 2],
    /// seconds
    pub shuffle_seg_range: [f64; 2],
    pub sample_rate: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            amp_range: [0.25, 1.0],
            jitter_range: [-30, 30],
            shuffle_seg_range: [0.35, 0.45],
            sample_rate: 22_050,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.amp_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("amp_range {:?} must lie in (0, 1] with lo <= hi", self.amp_range)));
        }
        let [a, b] = self.jitter_range;
        if a != -b || b < 0 {
            return Err(Error::Config(format!("jitter_range {:?} must be symmetric", self.jitter_range)));
        }
        let [s, t] = self.shuffle_seg_range;
        if !(s > 0.0 && s <= t && t.is_finite()) {
            return Err(Error::Config(format!(
                "shuffle_seg_range {:?} must be positive with lo <= hi",
                self.shuffle_seg_range
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        let (min, max) = self.segment_bounds();
        if min == 0 || min > max {
            return Err(Error::Config(format!(
                "shuffle_seg_range {:?} at {} Hz holds no whole segment length",
                self.shuffle_seg_range, self.sample_rate
            )));
        }
        Ok(())
    }

    /// Smallest and largest whole segment length in samples that fall inside
    /// the configured range (7718 and 9922 at the defaults).
    pub fn segment_bounds(&self) -> (usize, usize) {
        let sr = self.sample_rate as f64;
        let lo = (self.shuffle_seg_range[0] * sr).ceil() as usize;
        let hi = (self.shuffle_seg_range[1] * sr).floor() as usize;
        (lo, hi)
    }

    pub fn max_jitter(&self) -> usize {
        self.jitter_range[1].unsigned_abs() as usize
    }

    /// Shortest clip the target jitter accepts.
    pub fn min_jitter_len(&self) -> usize {
        2 * self.max_jitter() + 1
    }
}

/// `-x` when `flip`, else `x`.
pub fn flip_sign<R: Real>(x: &[R], flip: bool) -> Vec<R> {
    if flip {
        x.iter().map(|&v| -v).collect()
    } else {
        x.to_vec()
    }
}

/// Negate with probability one half.
pub fn sign_flip<R: Real>(x: &[R], rng: &mut impl Rng) -> Vec<R> {
    flip_sign(x, rng.random_bool(0.5))
}

pub fn scale_by<R: Real>(x: &[R], a: f64) -> Vec<R> {
    let a = R::of(a);
    x.iter().map(|&v| v * a).collect()
}

pub fn draw_amplitude(cfg: &AugmentConfig, rng: &mut impl Rng) -> f64 {
    let [lo, hi] = cfg.amp_range;
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// `a * x` with `a ~ U[amp_range]`.
pub fn amplitude_scale<R: Real>(x: &[R], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<R> {
    scale_by(x, draw_amplitude(cfg, rng))
}

/// Shift right by `delta` samples (left when negative), zero-filling the
/// vacated edge. Length is preserved.
pub fn shift<R: Real>(x: &[R], delta: i64) -> Vec<R> {
    let n = x.len();
    let mut out = vec![R::zero(); n];
    let d = delta.unsigned_abs() as usize;
    if d >= n {
        return out;
    }
    if delta >= 0 {
        out[d..].copy_from_slice(&x[..n - d]);
    } else {
        out[..n - d].copy_from_slice(&x[d..]);
    }
    out
}

pub fn draw_jitter(cfg: &AugmentConfig, rng: &mut impl Rng) -> i64 {
    let [lo, hi] = cfg.jitter_range;
    rng.random_range(lo..=hi)
}

/// Shift of the reconstruction target by `delta ~ U{jitter_range}`.
pub fn temporal_jitter_target<R: Real>(x: &[R], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Vec<R>> {
    if x.len() < cfg.min_jitter_len() {
        return Err(Error::Size(format!(
            "jitter needs more than {} samples, clip has {}",
            2 * cfg.max_jitter(),
            x.len()
        )));
    }
    Ok(shift(x, draw_jitter(cfg, rng)))
}

/// Left-to-right partition of `len` samples into uniformly drawn segment
/// lengths; the final remainder (possibly shorter) is its own segment. A clip
/// shorter than the largest segment is a single segment.
pub fn draw_segments(len: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<usize> {
    let (lo, hi) = cfg.segment_bounds();
    if len < hi || lo == 0 {
        return vec![len];
    }
    let mut out = Vec::new();
    let mut left = len;
    while left > 0 {
        let s = rng.random_range(lo..=hi).min(left);
        out.push(s);
        left -= s;
    }
    out
}

/// Concatenate the segments of `x` (lengths `lens`) in the order `perm`.
pub fn permute_segments<R: Real>(x: &[R], lens: &[usize], perm: &[usize]) -> Result<Vec<R>> {
    if lens.iter().sum::<usize>() != x.len() {
        return Err(Error::Size(format!(
            "segments cover {} samples, clip has {}",
            lens.iter().sum::<usize>(),
            x.len()
        )));
    }
    let mut seen = vec![false; lens.len()];
    if perm.len() != lens.len() || perm.iter().any(|&p| p >= lens.len() || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Index(format!("{perm:?} is not a permutation of {} segments", lens.len())));
    }
    let mut starts = Vec::with_capacity(lens.len());
    let mut acc = 0;
    for &l in lens {
        starts.push(acc);
        acc += l;
    }
    let mut out = Vec::with_capacity(x.len());
    for &p in perm {
        out.extend_from_slice(&x[starts[p]..starts[p] + lens[p]]);
    }
    Ok(out)
}

/// Speaker-encoder view: random partition, uniform permutation of all
/// segments including the remainder.
pub fn shuffle_segments<R: Real>(x: &[R], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<R> {
    let lens = draw_segments(x.len(), cfg, rng);
    if lens.len() < 2 {
        return x.to_vec();
    }
    let mut perm: Vec<usize> = (0..lens.len()).collect();
    perm.shuffle(rng);
    permute_segments(x, &lens, &perm).expect("partition of x")
}

/// The three views of one training clip.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedClip<R> {
    /// sign-flipped and scaled network input
    pub input: Vec<R>,
    /// `input` with temporal jitter, for the reconstruction terms
    pub target: Vec<R>,
    /// `input` with shuffled segments, for the speaker encoder
    pub speaker_view: Vec<R>,
}

/// Apply all four augmentations in their places.
pub fn augment_clip<R: Real>(x: &[R], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<AugmentedClip<R>> {
    let input = amplitude_scale(&sign_flip(x, rng), cfg, rng);
    let target = temporal_jitter_target(&input, cfg, rng)?;
    let speaker_view = shuffle_segments(&input, cfg, rng);
    Ok(AugmentedClip {
        input,
        target,
        speaker_view,
    })
}
