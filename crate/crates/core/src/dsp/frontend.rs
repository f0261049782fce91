use super::mel::{build_mel_bank, extract_fbank, FeatureSequence, MelFilterBank, N_FBANK};
use super::stft::{Spectrogram, Stft, StftConfig};
use super::wav::{Waveform, SAMPLE_RATE};
use crate::error::Result;

/// STFT plus mel bank: waveform in, spectrogram and FBank features out.
#[derive(Clone, Debug)]
pub struct Frontend {
    stft: Stft,
    bank: MelFilterBank,
}

impl Frontend {
    pub fn new(stft: StftConfig, n_filters: usize, f_low: f64, f_high: f64) -> Result<Self> {
        let bank = build_mel_bank(n_filters, stft.n_bins(), SAMPLE_RATE, f_low, f_high)?;
        Ok(Self {
            stft: Stft::new(stft)?,
            bank,
        })
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn bank(&self) -> &MelFilterBank {
        &self.bank
    }

    pub fn analyze(&self, wave: &Waveform) -> Result<(Spectrogram, FeatureSequence)> {
        wave.require_rate(SAMPLE_RATE)?;
        let spec = self.stft.analyze(wave)?;
        let feats = extract_fbank(&spec, &self.bank)?;
        Ok((spec, feats))
    }

    pub fn features(&self, wave: &Waveform) -> Result<FeatureSequence> {
        Ok(self.analyze(wave)?.1)
    }
}

impl Default for Frontend {
    /// 512/128 Hann framing and 42 filters over 0-8 kHz.
    fn default() -> Self {
        Self::new(StftConfig::default(), N_FBANK, 0.0, 8000.0).expect("default front end is valid")
    }
}
