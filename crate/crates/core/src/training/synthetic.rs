//! Two synthetic "speakers": harmonic tone sequences whose register and
//! spectral envelope differ per speaker while the note pattern varies per
//! clip.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::training::{Dataset, Utterance};

const SAMPLE_RATE: f64 = 22_050.0;

/// Voice of one synthetic speaker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySpeaker {
    /// base fundamental in Hz
    pub f0: f64,
    /// centre of the resonance shaping the harmonics, Hz
    pub formant: f64,
    /// half-width of the resonance, Hz
    pub bandwidth: f64,
}

pub const TOY_SPEAKERS: [ToySpeaker; 2] = [
    ToySpeaker {
        f0: 110.0,
        formant: 600.0,
        bandwidth: 250.0,
    },
    ToySpeaker {
        f0: 220.0,
        formant: 2600.0,
        bandwidth: 700.0,
    },
];

/// Scale steps (semitones) notes are drawn from.
const STEPS: [f64; 6] = [0.0, 2.0, 4.0, 5.0, 7.0, 9.0];

impl ToySpeaker {
    fn harmonic_gain(&self, f: f64) -> f64 {
        let r = (f - self.formant) / self.bandwidth;
        0.15 + 1.0 / (1.0 + r * r)
    }

    /// `len` samples of random notes in this voice.
    pub fn render(&self, len: usize, rng: &mut impl Rng) -> Vec<f32> {
        let mut out = vec![0.0f64; len];
        let mut pos = 0;
        while pos < len {
            let dur = rng.random_range(2048..6144).min(len - pos);
            let f0 = self.f0 * 2f64.powf(STEPS[rng.random_range(0..STEPS.len())] / 12.0);
            let n_harm = ((SAMPLE_RATE / 2.0 * 0.9) / f0).floor().min(40.0) as usize;
            let gains: Vec<f64> = (1..=n_harm).map(|k| self.harmonic_gain(k as f64 * f0) / k as f64).collect();
            let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..TAU)).collect();
            let ramp = 256.min(dur / 2).max(1);
            for i in 0..dur {
                let t = i as f64 / SAMPLE_RATE;
                let env = (i.min(dur - 1 - i) as f64 / ramp as f64).min(1.0);
                let s: f64 = gains
                    .iter()
                    .zip(&phases)
                    .enumerate()
                    .map(|(k, (g, p))| g * (TAU * (k + 1) as f64 * f0 * t + p).sin())
                    .sum();
                out[pos + i] = env * s;
            }
            pos += dur;
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        out.iter().map(|v| (0.6 * v / peak) as f32).collect()
    }
}

/// `n_clips` clips of `len` samples alternating between the two speakers.
pub fn toy_dataset(n_clips: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utterances = (0..n_clips)
        .map(|k| {
            let speaker = k % TOY_SPEAKERS.len();
            Utterance {
                samples: TOY_SPEAKERS[speaker].render(len, &mut rng),
                speaker,
            }
        })
        .collect();
    Dataset {
        utterances,
        n_speakers: TOY_SPEAKERS.len(),
    }
}
