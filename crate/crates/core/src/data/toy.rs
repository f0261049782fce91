use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::manifest::{split, Manifest, ManifestEntry, NoiseRef, SplitTag};
use super::mix::mix_at_snr;
use crate::dsp::{write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const TOY_SNR_CHOICES: [f64; 5] = [-10.0, -5.0, 0.0, 5.0, 10.0];
const SPEECH_RMS: f64 = 0.05;
const NOISE_RMS: f64 = 0.1;
const BABBLE_TALKERS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    White,
    Brown,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Brown, NoiseKind::Babble];
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(Self::White),
            "brown" => Ok(Self::Brown),
            "babble" => Ok(Self::Babble),
            other => Err(Error::input(format!("unknown noise kind {other:?}"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::White => "white",
            Self::Brown => "brown",
            Self::Babble => "babble",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusConfig {
    pub n_utterances: usize,
    pub seed: u64,
    pub snr_choices: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    pub min_secs: f64,
    pub max_secs: f64,
    /// Fraction tagged `train`; the rest are tagged `test`.
    pub train_ratio: f64,
}

impl ToyCorpusConfig {
    pub fn new(n_utterances: usize, seed: u64) -> Self {
        Self {
            n_utterances,
            seed,
            snr_choices: TOY_SNR_CHOICES.to_vec(),
            noise_kinds: NoiseKind::ALL.to_vec(),
            min_secs: 1.0,
            max_secs: 3.0,
            train_ratio: 0.8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_utterances == 0 {
            return Err(Error::config("toy corpus needs at least one utterance"));
        }
        if self.snr_choices.is_empty() || self.snr_choices.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("SNR choices must be finite and nonempty"));
        }
        if self.noise_kinds.is_empty() {
            return Err(Error::config("at least one noise kind is required"));
        }
        if !(self.min_secs > 0.0 && self.min_secs <= self.max_secs) {
            return Err(Error::config("utterance duration range is invalid"));
        }
        Ok(())
    }
}

fn normalize(mut x: Vec<f64>, rms: f64) -> Vec<f64> {
    let now = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if now > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / now);
    }
    x
}

/// Snaps to the PCM16 grid so the written files hold exactly what was mixed.
fn quantize(x: &mut [f64]) {
    x.iter_mut()
        .for_each(|v| *v = (*v * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0);
}

/// Harmonic process: fundamental in `f0_range`, 2-5 harmonics, each with a
/// random phase, under a ±30% amplitude modulation at 2-8 Hz.
fn harmonic_process(rng: &mut ChaCha8Rng, len: usize, f0_range: (f64, f64)) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.random_range(f0_range.0..f0_range.1);
    let n_harm = rng.random_range(2..=5usize);
    let partials: Vec<(f64, f64, f64)> = (1..=n_harm)
        .map(|h| {
            (
                h as f64 * f0,
                rng.random_range(0.3..1.0) / h as f64,
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .filter(|&(f, _, _)| f < sr / 2.0)
        .collect();
    let f_am = rng.random_range(2.0..8.0);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let env = 1.0 + 0.3 * (2.0 * PI * f_am * t + am_phase).sin();
            env * partials
                .iter()
                .map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum::<f64>()
        })
        .collect()
}

/// Speech surrogate of `len` samples at a fixed RMS.
pub fn speech_surrogate(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    normalize(harmonic_process(rng, len, (100.0, 300.0)), SPEECH_RMS)
}

pub fn noise_track(kind: NoiseKind, rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let x = match kind {
        NoiseKind::White => (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseKind::Brown => {
            // Leaky integrator keeps the walk bounded.
            let mut acc = 0.0;
            let mut x: Vec<f64> = (0..len)
                .map(|_| {
                    acc = 0.995 * acc + rng.sample::<f64, _>(StandardNormal);
                    acc
                })
                .collect();
            let mean = x.iter().sum::<f64>() / len as f64;
            x.iter_mut().for_each(|v| *v -= mean);
            x
        }
        NoiseKind::Babble => {
            let mut x = vec![0.0; len];
            for _ in 0..BABBLE_TALKERS {
                for (acc, v) in x.iter_mut().zip(harmonic_process(rng, len, (100.0, 300.0))) {
                    *acc += v;
                }
            }
            x
        }
    };
    normalize(x, NOISE_RMS)
}

/// Writes `clean_NNNN.wav`, `noise_NNNN.wav`, `noisy_NNNN.wav` and finally
/// `manifest.csv` into `out_dir`. Output is a pure function of `cfg`.
pub fn make_toy_corpus(cfg: &ToyCorpusConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sr = SAMPLE_RATE as f64;
    let mut entries = Vec::with_capacity(cfg.n_utterances);
    for i in 0..cfg.n_utterances {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let secs = if cfg.max_secs > cfg.min_secs {
            rng.random_range(cfg.min_secs..cfg.max_secs)
        } else {
            cfg.min_secs
        };
        let len = (secs * sr).round() as usize;
        let snr_db = cfg.snr_choices[rng.random_range(0..cfg.snr_choices.len())];
        let kind = cfg.noise_kinds[rng.random_range(0..cfg.noise_kinds.len())];
        let mut clean = speech_surrogate(&mut rng, len);
        let mut noise = noise_track(kind, &mut rng, len);
        quantize(&mut clean);
        quantize(&mut noise);
        let clean = Waveform::new(clean, SAMPLE_RATE)?;
        let noise = Waveform::new(noise, SAMPLE_RATE)?;
        let mix = mix_at_snr(&clean, &noise, snr_db)?;

        let names = [
            format!("clean_{i:04}.wav"),
            format!("noise_{i:04}.wav"),
            format!("noisy_{i:04}.wav"),
        ];
        write_wav(out_dir.join(&names[0]), &clean)?;
        write_wav(out_dir.join(&names[1]), &noise)?;
        write_wav(out_dir.join(&names[2]), &mix.noisy)?;
        entries.push(ManifestEntry {
            clean: names[0].clone().into(),
            noise: NoiseRef::File(names[1].clone().into()),
            snr_db,
            split: SplitTag::Train,
        });
    }
    let all = Manifest::new(out_dir, entries)?;
    let manifest = if cfg.n_utterances > 1 {
        let (_, test) = split(&all, cfg.train_ratio, cfg.seed)?;
        let test_ids: Vec<_> = test.entries().iter().map(|e| e.clean.clone()).collect();
        let tagged = all
            .entries()
            .iter()
            .map(|e| ManifestEntry {
                split: if test_ids.contains(&e.clean) {
                    SplitTag::Test
                } else {
                    SplitTag::Train
                },
                ..e.clone()
            })
            .collect();
        Manifest::new(out_dir, tagged)?
    } else {
        all
    };
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mix::measure_snr;
    use crate::dsp::read_wav;

    fn small(n: usize, seed: u64) -> ToyCorpusConfig {
        ToyCorpusConfig {
            min_secs: 0.2,
            max_secs: 0.4,
            ..ToyCorpusConfig::new(n, seed)
        }
    }

    #[test]
    fn surrogates_have_requested_length_and_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = speech_surrogate(&mut rng, 16000);
        assert_eq!(s.len(), 16000);
        let rms = (s.iter().map(|v| v * v).sum::<f64>() / 16000.0).sqrt();
        assert!((rms - SPEECH_RMS).abs() < 1e-12);
        for kind in NoiseKind::ALL {
            let x = noise_track(kind, &mut rng, 8000);
            assert_eq!(x.len(), 8000);
            assert!(x.iter().all(|v| v.is_finite() && v.abs() < 1.0));
        }
    }

    #[test]
    fn brown_noise_is_low_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lag1 = |x: &[f64]| {
            let num: f64 = x.windows(2).map(|w| w[0] * w[1]).sum();
            num / x.iter().map(|v| v * v).sum::<f64>()
        };
        let brown = noise_track(NoiseKind::Brown, &mut rng, 16000);
        let white = noise_track(NoiseKind::White, &mut rng, 16000);
        assert!(lag1(&brown) > 0.9);
        assert!(lag1(&white).abs() < 0.05);
    }

    #[test]
    fn corpus_files_and_tags() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_toy_corpus(&small(10, 4), dir.path()).unwrap();
        assert_eq!(m.len(), 10);
        for e in m.entries() {
            assert!(TOY_SNR_CHOICES.contains(&e.snr_db));
            assert!(m.resolve(&e.clean).is_file());
        }
        let count = |prefix: &str| {
            fs::read_dir(dir.path())
                .unwrap()
                .filter(|f| f.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix))
                .count()
        };
        assert_eq!(count("clean_"), 10);
        assert_eq!(count("noisy_"), 10);
        assert_eq!(m.with_split(SplitTag::Train).len(), 8);
        assert_eq!(Manifest::load(dir.path().join("manifest.csv")).unwrap(), m);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_toy_corpus(&small(4, 11), a.path()).unwrap();
        make_toy_corpus(&small(4, 11), b.path()).unwrap();
        for f in ["manifest.csv", "clean_0002.wav", "noise_0003.wav", "noisy_0000.wav"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn remeasured_pair_snr_matches_tag() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_toy_corpus(&small(12, 5), dir.path()).unwrap();
        for (i, e) in m.entries().iter().enumerate() {
            let clean = read_wav(m.resolve(&e.clean)).unwrap();
            let noisy = read_wav(dir.path().join(format!("noisy_{i:04}.wav"))).unwrap();
            let resid: Vec<f64> = noisy
                .samples()
                .iter()
                .zip(clean.samples())
                .map(|(y, s)| y - s)
                .collect();
            let got = measure_snr(clean.samples(), &resid);
            assert!((got - e.snr_db).abs() < 0.01, "tag {} measured {got}", e.snr_db);
        }
    }

    #[test]
    fn unwritable_dir_fails_without_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let out = blocker.join("corpus");
        assert!(matches!(make_toy_corpus(&small(2, 1), &out), Err(Error::Io(_))));
        assert!(!out.join("manifest.csv").exists());
    }

    #[test]
    fn zero_utterances_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(make_toy_corpus(&small(0, 1), dir.path()).is_err());
    }
}
