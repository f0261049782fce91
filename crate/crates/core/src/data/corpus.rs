use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{Manifest, ManifestEntry, NoiseRef};
use super::mix::{mix_at_snr, Mixture};
use super::toy::noise_track;
use crate::dsp::{read_wav, Frontend, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::training::TrainingExample;

/// One manifest row brought into memory and mixed.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub snr_db: f64,
    pub mixture: Mixture,
}

pub fn load_utterance(manifest: &Manifest, entry: &ManifestEntry) -> Result<Utterance> {
    let clean_path = manifest.resolve(&entry.clean);
    let clean = read_wav(&clean_path).map_err(|e| Error::input(format!("{}: {e}", clean_path.display())))?;
    let noise = match &entry.noise {
        NoiseRef::File(p) => {
            let p = manifest.resolve(p);
            read_wav(&p).map_err(|e| Error::input(format!("{}: {e}", p.display())))?
        }
        NoiseRef::Synthetic { kind, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Waveform::new(noise_track(*kind, &mut rng, clean.len()), SAMPLE_RATE)?
        }
    };
    Ok(Utterance {
        id: entry.id(),
        snr_db: entry.snr_db,
        mixture: mix_at_snr(&clean, &noise, entry.snr_db)?,
    })
}

/// Loads every entry, in manifest order.
pub fn load_utterances(manifest: &Manifest) -> Result<Vec<Utterance>> {
    manifest
        .entries()
        .par_iter()
        .map(|e| load_utterance(manifest, e))
        .collect()
}

/// FBank features of the noisy mixture and of its clean component.
pub fn training_examples(utterances: &[Utterance], frontend: &Frontend) -> Result<Vec<TrainingExample>> {
    utterances
        .par_iter()
        .map(|u| {
            TrainingExample::new(
                frontend.features(&u.mixture.noisy)?,
                frontend.features(&u.mixture.clean)?,
                u.snr_db,
                u.id.clone(),
            )
        })
        .collect()
}
