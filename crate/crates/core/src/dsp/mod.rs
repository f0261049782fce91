//! Deterministic signal path: Hann windowing, STFT analysis and weighted
//! overlap-add resynthesis, mel filter banks, FBank features and the
//! expansion of per-filter gains back onto FFT bins.

mod export;
mod frontend;
mod mel;
mod stft;
mod wav;
mod window;

pub use export::write_matrix_csv;
pub use frontend::Frontend;
pub use mel::{
    apply_spectral_gain, build_mel_bank, expand_gains, extract_fbank, hz_to_mel, mel_to_hz, FeatureSequence,
    GainSequence, MelFilterBank, N_FBANK,
};
pub use stft::{istft, stft, Spectrogram, Stft, StftConfig};
pub use wav::{read_wav, write_wav, Waveform, SAMPLE_RATE};
pub use window::make_hann;
