use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::wav::Waveform;
use super::window::make_hann;
use crate::error::{Error, Result};

/// Positions whose accumulated squared window falls below this are left at zero.
const WOLA_FLOOR: f64 = 1e-8;

/// Framing parameters. `edge_pad` zeros are added on both sides of the signal
/// before framing so the first and last samples do not sit under the zero
/// endpoints of the window; with `edge_pad = 0` the framing is the plain
/// `1 + ceil((len - frame_len) / hop)` scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    frame_len: usize,
    overlap: usize,
    edge_pad: usize,
}

impl StftConfig {
    /// Builds a config with `edge_pad = overlap`.
    pub fn new(frame_len: usize, overlap: usize) -> Result<Self> {
        if frame_len < 2 || overlap == 0 || overlap >= frame_len {
            return Err(Error::config(format!(
                "need 0 < overlap < frame_len, got frame_len={frame_len} overlap={overlap}"
            )));
        }
        Ok(Self {
            frame_len,
            overlap,
            edge_pad: overlap,
        })
    }

    pub fn with_edge_pad(mut self, edge_pad: usize) -> Self {
        self.edge_pad = edge_pad;
        self
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn hop(&self) -> usize {
        self.frame_len - self.overlap
    }

    pub fn edge_pad(&self) -> usize {
        self.edge_pad
    }

    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.edge_pad;
        if padded <= self.frame_len {
            1
        } else {
            1 + (padded - self.frame_len).div_ceil(self.hop())
        }
    }
}

impl Default for StftConfig {
    /// 512-point frames with 128 points of overlap.
    fn default() -> Self {
        Self::new(512, 128).expect("valid default framing")
    }
}

impl fmt::Display for StftConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frame_len={} overlap={} hop={} edge_pad={}",
            self.frame_len,
            self.overlap,
            self.hop(),
            self.edge_pad
        )
    }
}

/// One-sided complex STFT, `n_frames x (frame_len/2 + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    frames: Vec<Complex64>,
    n_frames: usize,
    config: StftConfig,
    original_len: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn new(
        frames: Vec<Complex64>,
        n_frames: usize,
        config: StftConfig,
        original_len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if frames.len() != n_frames * config.n_bins() {
            return Err(Error::input(format!(
                "spectrogram needs {} cells for {n_frames} frames, got {}",
                n_frames * config.n_bins(),
                frames.len()
            )));
        }
        if frames.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::input("spectrogram contains non-finite values"));
        }
        Ok(Self {
            frames,
            n_frames,
            config,
            original_len,
            sample_rate,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn original_len(&self) -> usize {
        self.original_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.n_bins();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let n = self.n_bins();
        &mut self.frames[t * n..(t + 1) * n]
    }

    pub fn cells(&self) -> &[Complex64] {
        &self.frames
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.frames.iter().map(|c| c.norm()).collect()
    }
}

/// STFT analysis/synthesis pair with cached FFT plans and window.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        let window = make_hann(config.frame_len)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(config.frame_len),
            inverse: planner.plan_fft_inverse(config.frame_len),
            window,
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn analyze(&self, wave: &Waveform) -> Result<Spectrogram> {
        let samples = wave.samples();
        if samples.is_empty() {
            return Err(Error::input("cannot analyse an empty waveform"));
        }
        let cfg = &self.config;
        let n = cfg.frame_len;
        let n_bins = cfg.n_bins();
        let n_frames = cfg.n_frames(samples.len());
        let pad = cfg.edge_pad as isize;

        let mut frames = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..n_frames {
            let start = (t * cfg.hop()) as isize - pad;
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = start + k as isize;
                let x = if idx >= 0 && (idx as usize) < samples.len() {
                    samples[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(x * self.window[k], 0.0);
            }
            self.forward.process(&mut buf);
            frames.extend_from_slice(&buf[..n_bins]);
        }
        Spectrogram::new(frames, n_frames, *cfg, samples.len(), wave.sample_rate())
    }

    /// Least-squares weighted overlap-add: each inverse frame is windowed again
    /// and the sum is divided by the accumulated squared window.
    pub fn synthesize(&self, spec: &Spectrogram) -> Result<Waveform> {
        if spec.config != self.config {
            return Err(Error::input(format!(
                "spectrogram framing ({}) differs from synthesiser ({})",
                spec.config, self.config
            )));
        }
        let cfg = &self.config;
        let n = cfg.frame_len;
        let n_bins = cfg.n_bins();
        let hop = cfg.hop();
        let total = (spec.n_frames - 1) * hop + n;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;

        for t in 0..spec.n_frames {
            let frame = spec.frame(t);
            buf[..n_bins].copy_from_slice(frame);
            // Hermitian completion of the negative frequencies.
            for k in n_bins..n {
                buf[k] = frame[n - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * hop;
            for k in 0..n {
                let w = self.window[k];
                acc[start + k] += w * buf[k].re * scale;
                norm[start + k] += w * w;
            }
        }

        let pad = cfg.edge_pad;
        let samples = (0..spec.original_len)
            .map(|i| {
                let pos = i + pad;
                match (acc.get(pos), norm.get(pos)) {
                    (Some(&a), Some(&w2)) if w2 >= WOLA_FLOOR => a / w2,
                    _ => 0.0,
                }
            })
            .collect();
        Waveform::new(samples, spec.sample_rate)
    }
}

/// One-shot STFT of `wave` under `cfg`.
pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg)?.analyze(wave)
}

/// One-shot inverse STFT using the spectrogram's own framing.
pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    Stft::new(spec.config)?.synthesize(spec)
}

impl Default for Stft {
    fn default() -> Self {
        Self::new(StftConfig::default()).expect("default framing is valid")
    }
}
