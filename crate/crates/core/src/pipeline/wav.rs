use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;

/// Mono waveform with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>) -> Self {
        AudioClip {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn format_error(path: &Path, e: hound::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Read 16-bit mono PCM at 22,050 Hz, mapping samples by `/ 32768`.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| format_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            path: path.to_path_buf(),
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    if spec.channels != 1 {
        return Err(Error::Channels {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: expected 16-bit integer PCM, found {} bits {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_error(path, e))?;
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Write 16-bit mono PCM at 22,050 Hz. Samples outside [-1, 1] are clamped
/// with a warning; returns how many were.
pub fn save_wav(samples: &[f32], path: &Path) -> Result<usize> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => format_error(path, other),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    let mut clamped = 0;
    for &s in samples {
        let c = if s.is_nan() {
            0.0
        } else {
            s.clamp(-1.0, 1.0)
        };
        if c != s {
            clamped += 1;
        }
        let v = (c * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} samples outside [-1, 1]", path.display());
    }
    Ok(clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &v in data {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_and_exact_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let mut data = vec![0i16; 22_050];
        data[0] = -32768;
        data[1] = 16384;
        write_raw(&p, 22_050, 1, &data);
        let c = load_wav(&p).unwrap();
        assert_eq!(c.len(), 22_050);
        assert_eq!(c.samples[0], -1.0);
        assert_eq!(c.samples[1], 0.5);
        assert_eq!(c.sample_rate, 22_050);
    }

    #[test]
    fn wrong_rate_channels_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_raw(&p, 44_100, 1, &[0; 10]);
        let msg = load_wav(&p).unwrap_err().to_string();
        assert!(msg.contains("44100") && msg.contains("22050"), "{msg}");
        write_raw(&p, 22_050, 2, &[0; 10]);
        assert!(matches!(load_wav(&p), Err(Error::Channels { channels: 2, .. })));
        std::fs::write(&p, b"RIFF\x10\x00\x00\x00WAVEjunk").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Format(_))));
        assert!(matches!(load_wav(&dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let x: Vec<f32> = (0..5000).map(|i| ((i as f32) * 0.013).sin() * 0.9).collect();
        assert_eq!(save_wav(&x, &p).unwrap(), 0);
        let back = load_wav(&p).unwrap();
        let spec = hound::WavReader::open(&p).unwrap().spec();
        assert_eq!((spec.sample_rate, spec.channels, spec.bits_per_sample), (22_050, 1, 16));
        let worst = x.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst < 1.0 / 32768.0, "{worst}");
    }

    #[test]
    fn out_of_range_is_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.wav");
        assert_eq!(save_wav(&[1.5, -0.25, -3.0], &p).unwrap(), 2);
        let back = load_wav(&p).unwrap();
        assert_eq!(back.samples[0], 32767.0 / 32768.0);
        assert_eq!(back.samples[2], -1.0);
        assert!(save_wav(&[0.0], &dir.path().join("no/such/dir.wav")).is_err());
    }
}
