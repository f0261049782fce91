//! Corpus handling: SNR-controlled mixing, CSV manifests, train/test
//! splitting and a synthetic toy corpus.

mod corpus;
mod manifest;
mod mix;
mod toy;

pub use corpus::{load_utterance, load_utterances, training_examples, Utterance};
pub use manifest::{split, Manifest, ManifestEntry, NoiseRef, SplitTag, MANIFEST_COLUMNS};
pub use mix::{measure_snr, mix_at_snr, Mixture};
pub use toy::{make_toy_corpus, noise_track, speech_surrogate, NoiseKind, ToyCorpusConfig, TOY_SNR_CHOICES};
