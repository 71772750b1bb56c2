//! Differentiable spectral analysis: STFT magnitude, mel filterbank and
//! floored log-mel features.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv1d, reflect_index, ConvGeom, Real, Tensor, UnaryBackward, Var};
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;
pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub fft_size: usize,
    pub window_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl SpectrogramConfig {
    /// Speaker-encoder front end: fft 1024, window 1024, hop 256.
    pub fn speaker() -> Self {
        SpectrogramConfig {
            fft_size: 1024,
            window_size: 1024,
            hop: 256,
            n_mels: N_MELS,
            sample_rate: SAMPLE_RATE,
            log_floor: LOG_FLOOR,
        }
    }

    /// Spectral-loss analysis at FFT size `w`: window `w`, hop `w / 4`.
    pub fn spectral(w: usize) -> Self {
        SpectrogramConfig {
            fft_size: w,
            window_size: w,
            hop: (w / 4).max(1),
            n_mels: N_MELS,
            sample_rate: SAMPLE_RATE,
            log_floor: LOG_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!("fft_size {} must be even and >= 2", self.fft_size)));
        }
        if self.window_size == 0 || self.window_size > self.fft_size {
            return Err(Error::Config(format!(
                "window_size {} must be in 1..={}",
                self.window_size, self.fft_size
            )));
        }
        if self.hop == 0 || self.n_mels == 0 || self.sample_rate == 0 {
            return Err(Error::Config("hop, n_mels and sample_rate must be positive".into()));
        }
        if self.n_mels >= self.fft_size / 2 {
            return Err(Error::Config(format!(
                "n_mels {} must be below fft_size / 2 = {}",
                self.n_mels,
                self.fft_size / 2
            )));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::Config(format!("log_floor {} must be positive", self.log_floor)));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count of centered analysis: `floor(len / hop) + 1`.
    pub fn frames(&self, len: usize) -> usize {
        (len + 2 * (self.fft_size / 2) - self.fft_size) / self.hop + 1
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters, row-major `[n_mels, fft_size / 2 + 1]`, each with
/// unit peak, spanning 0 Hz to Nyquist.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
    /// filter edges and centers in Hz, `n_mels + 2` points
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

pub fn mel_filterbank(cfg: &SpectrogramConfig) -> Result<MelFilterbank> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges_hz: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            weights[m * n_bins + k] = rise.min(fall).max(0.0);
        }
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        n_bins,
        weights,
        edges_hz,
    })
}

/// Periodic Hann window of `size` samples.
pub fn hann_window(size: usize) -> Vec<f64> {
    (0..size)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / size as f64).cos())
        .collect()
}

/// Reusable analysis state for one configuration: window, FFT plans and the
/// filterbank as a `[n_mels, n_bins, 1]` convolution weight.
pub struct Spectrogram<R: Real> {
    cfg: SpectrogramConfig,
    window: Arc<Vec<R>>,
    forward: Arc<dyn Fft<R>>,
    inverse: Arc<dyn Fft<R>>,
    filters: Tensor<R>,
}

impl<R: Real> Spectrogram<R> {
    pub fn new(cfg: SpectrogramConfig) -> Result<Self> {
        let fb = mel_filterbank(&cfg)?;
        let mut window = vec![R::zero(); cfg.fft_size];
        let off = (cfg.fft_size - cfg.window_size) / 2;
        for (i, w) in hann_window(cfg.window_size).into_iter().enumerate() {
            window[off + i] = R::of(w);
        }
        let mut planner = FftPlanner::new();
        Ok(Spectrogram {
            cfg,
            window: Arc::new(window),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            filters: Tensor::from_parts(
                vec![cfg.n_mels, fb.n_bins, 1],
                fb.weights.iter().map(|&w| R::of(w)).collect(),
            ),
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.cfg
    }

    /// `x` is `[T]`, `[B, T]` or `[B, 1, T]`; the result is `[n_bins, M]`
    /// for unbatched input and `[B, n_bins, M]` otherwise.
    pub fn magnitude<'t>(&self, x: &Var<'t, R>) -> Result<Var<'t, R>> {
        let (batch, len, batched) = match *x.shape() {
            [t] => (1, t, false),
            [b, t] => (b, t, true),
            [b, 1, t] => (b, t, true),
            _ => {
                return Err(Error::Dimension(format!(
                    "spectrogram expects [T], [B, T] or [B, 1, T], got {:?}",
                    x.shape()
                )))
            }
        };
        if len < self.cfg.window_size || len <= self.cfg.fft_size / 2 {
            return Err(Error::Size(format!(
                "clip of {len} samples is shorter than one analysis window ({})",
                self.cfg.window_size
            )));
        }
        let n = self.cfg.fft_size;
        let half = n / 2;
        let bins = self.cfg.n_bins();
        let frames = self.cfg.frames(len);
        let plen = len + 2 * half;
        let mut mags = vec![R::zero(); batch * bins * frames];
        let mut phase = vec![Complex::new(R::zero(), R::zero()); batch * bins * frames];
        let mut buf = vec![Complex::new(R::zero(), R::zero()); n];
        let mut scratch = vec![Complex::new(R::zero(), R::zero()); self.forward.get_inplace_scratch_len()];
        let mut padded = vec![R::zero(); plen];
        for b in 0..batch {
            let xb = &x.value().data()[b * len..(b + 1) * len];
            for (j, p) in padded.iter_mut().enumerate() {
                *p = xb[reflect_index(j as isize - half as isize, len)];
            }
            for m in 0..frames {
                let frame = &padded[m * self.cfg.hop..m * self.cfg.hop + n];
                for ((c, &s), &w) in buf.iter_mut().zip(frame).zip(self.window.iter()) {
                    *c = Complex::new(s * w, R::zero());
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                for k in 0..bins {
                    let z = buf[k];
                    let mag = z.norm();
                    let idx = (b * bins + k) * frames + m;
                    mags[idx] = mag;
                    if mag > R::zero() {
                        phase[idx] = z / mag;
                    }
                }
            }
        }
        let shape = if batched { vec![batch, bins, frames] } else { vec![bins, frames] };
        let rule = StftBackward {
            phase,
            window: self.window.clone(),
            inverse: self.inverse.clone(),
            batch,
            len,
            frames,
            hop: self.cfg.hop,
            in_shape: x.shape().to_vec(),
        };
        Ok(x.custom(Tensor::from_parts(shape, mags), rule))
    }

    /// `log(max(filterbank * |STFT(x)|, log_floor))`, shaped like
    /// [`Spectrogram::magnitude`] with `n_mels` rows.
    pub fn log_mel<'t>(&self, x: &Var<'t, R>) -> Result<Var<'t, R>> {
        let mag = self.magnitude(x)?;
        let fb = x.tape().constant(self.filters.clone());
        let mel = conv1d(&mag, &fb, None, &ConvGeom::default())?;
        Ok(mel.log_floor(self.cfg.log_floor))
    }
}

struct StftBackward<R: Real> {
    phase: Vec<Complex<R>>,
    window: Arc<Vec<R>>,
    inverse: Arc<dyn Fft<R>>,
    batch: usize,
    len: usize,
    frames: usize,
    hop: usize,
    in_shape: Vec<usize>,
}

impl<R: Real> UnaryBackward<R> for StftBackward<R> {
    fn name(&self) -> &'static str {
        "stft_magnitude"
    }

    fn backward(&self, g: &Tensor<R>) -> Tensor<R> {
        let n = self.window.len();
        let half = n / 2;
        let bins = half + 1;
        let plen = self.len + 2 * half;
        let mut out = vec![R::zero(); self.batch * self.len];
        let mut gpad = vec![R::zero(); plen];
        let mut buf = vec![Complex::new(R::zero(), R::zero()); n];
        let mut scratch = vec![Complex::new(R::zero(), R::zero()); self.inverse.get_inplace_scratch_len()];
        for b in 0..self.batch {
            gpad.iter_mut().for_each(|v| *v = R::zero());
            for m in 0..self.frames {
                buf.iter_mut().for_each(|c| *c = Complex::new(R::zero(), R::zero()));
                for k in 0..bins {
                    let idx = (b * bins + k) * self.frames + m;
                    buf[k] = self.phase[idx] * g.data()[idx];
                }
                // Re(sum_k G_k e^{+i 2 pi k n / N}) over the one-sided bins
                self.inverse.process_with_scratch(&mut buf, &mut scratch);
                let dst = &mut gpad[m * self.hop..m * self.hop + n];
                for ((d, c), &w) in dst.iter_mut().zip(&buf).zip(self.window.iter()) {
                    *d = *d + c.re * w;
                }
            }
            let ob = &mut out[b * self.len..(b + 1) * self.len];
            for (j, &v) in gpad.iter().enumerate() {
                let s = reflect_index(j as isize - half as isize, self.len);
                ob[s] = ob[s] + v;
            }
        }
        Tensor::from_parts(self.in_shape.clone(), out)
    }
}

/// One-shot magnitude spectrogram; see [`Spectrogram::magnitude`].
pub fn stft_magnitude<'t, R: Real>(x: &Var<'t, R>, cfg: &SpectrogramConfig) -> Result<Var<'t, R>> {
    Spectrogram::new(*cfg)?.magnitude(x)
}

/// One-shot log-mel features; see [`Spectrogram::log_mel`].
pub fn log_mel<'t, R: Real>(x: &Var<'t, R>, cfg: &SpectrogramConfig) -> Result<Var<'t, R>> {
    Spectrogram::new(*cfg)?.log_mel(x)
}
