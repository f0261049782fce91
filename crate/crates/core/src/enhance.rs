//! Waveform-to-waveform enhancement with a trained model.

use crate::dsp::{apply_spectral_gain, expand_gains, Frontend, GainSequence, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{export_attention, forward, AttentionConfig, AttentionDump, Checkpoint, ModelParams, RunMode};

#[derive(Clone, Debug)]
pub struct Enhancer {
    params: ModelParams,
    attention: AttentionConfig,
    frontend: Frontend,
}

#[derive(Clone, Debug)]
pub struct Enhancement {
    /// Same length and rate as the input.
    pub output: Waveform,
    pub gains: GainSequence,
    /// Per-bin gains actually applied to the spectrogram.
    pub bin_gains: Matrix,
    pub attention: AttentionDump,
}

impl Enhancer {
    pub fn new(params: ModelParams, attention: AttentionConfig, frontend: Frontend) -> Result<Self> {
        let bands = frontend.bank().n_filters();
        if params.dims().feature != bands {
            return Err(Error::input(format!(
                "model expects {} features but the filter bank has {bands} bands",
                params.dims().feature
            )));
        }
        Ok(Self {
            params,
            attention,
            frontend,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Self::new(ckpt.params, ckpt.attention, Frontend::default())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn attention(&self) -> &AttentionConfig {
        &self.attention
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    /// stft -> fbank -> gains -> per-bin gains -> masked spectrogram -> istft.
    pub fn enhance(&self, noisy: &Waveform) -> Result<Enhancement> {
        let (spec, feats) = self.frontend.analyze(noisy)?;
        let trace = forward(&self.params, &feats, &self.attention, RunMode::Inference)?;
        let bin_gains = expand_gains(&trace.gains, self.frontend.bank())?;
        let masked = apply_spectral_gain(&spec, &bin_gains)?;
        let output = self.frontend.stft().synthesize(&masked)?;
        Ok(Enhancement {
            output,
            attention: export_attention(&trace),
            gains: trace.gains,
            bin_gains,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use crate::model::{init_params, ModelDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.random_range(-0.3..0.3)).collect(), SAMPLE_RATE).unwrap()
    }

    fn small() -> ModelDims {
        ModelDims {
            feature: 42,
            encoder_out: 8,
            hidden: 6,
            e_dim: 8,
        }
    }

    #[test]
    fn random_model_preserves_length_and_suppresses() {
        let e = Enhancer::new(
            init_params(small(), 1).unwrap(),
            AttentionConfig::default(),
            Frontend::default(),
        )
        .unwrap();
        for n in [300, 5000, 12345] {
            let x = noise(n, n as u64);
            let out = e.enhance(&x).unwrap();
            assert_eq!(out.output.len(), n);
            assert!(out.output.rms() <= x.rms());
            assert_eq!(out.bin_gains.cols(), 257);
            assert_eq!(out.attention.forward.len(), out.gains.n_frames());
        }
    }

    #[test]
    fn feature_width_mismatch_rejected() {
        let dims = ModelDims { feature: 40, ..small() };
        assert!(Enhancer::new(
            init_params(dims, 1).unwrap(),
            AttentionConfig::default(),
            Frontend::default()
        )
        .is_err());
    }

    #[test]
    fn wrong_rate_rejected() {
        let e = Enhancer::new(
            init_params(small(), 1).unwrap(),
            AttentionConfig::default(),
            Frontend::default(),
        )
        .unwrap();
        let x = Waveform::new(vec![0.1; 2000], 8000).unwrap();
        assert!(e.enhance(&x).is_err());
    }
}
