use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::toy::NoiseKind;
use crate::error::{Error, Result};

pub const MANIFEST_COLUMNS: [&str; 4] = ["clean_path", "noise_ref", "snr_db", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Test,
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(Error::input(format!(
                "unknown split tag {other:?} (expected train or test)"
            ))),
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

/// Where the noise for an entry comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseRef {
    File(PathBuf),
    /// `synthetic:<kind>[:seed]`, generated to the clean signal's length.
    Synthetic {
        kind: NoiseKind,
        seed: u64,
    },
}

impl FromStr for NoiseRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synthetic:") else {
            if s.is_empty() {
                return Err(Error::input("empty noise reference"));
            }
            return Ok(Self::File(PathBuf::from(s)));
        };
        let (kind, seed) = match rest.split_once(':') {
            Some((k, seed)) => {
                let seed = seed
                    .parse()
                    .map_err(|_| Error::input(format!("bad synthetic noise seed {seed:?}")))?;
                (k, seed)
            }
            None => (rest, 0),
        };
        Ok(Self::Synthetic {
            kind: kind.parse()?,
            seed,
        })
    }
}

impl fmt::Display for NoiseRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::File(p) => write!(f, "{}", p.display()),
            Self::Synthetic { kind, seed } => write!(f, "synthetic:{kind}:{seed}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noise: NoiseRef,
    pub snr_db: f64,
    pub split: SplitTag,
}

impl ManifestEntry {
    /// File stem of the clean path, used as the utterance id.
    pub fn id(&self) -> String {
        self.clean
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.clean.display().to_string())
    }
}

/// Corpus listing. Relative paths resolve against `base_dir`, the directory
/// holding the manifest file.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    base_dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !e.snr_db.is_finite() {
                return Err(Error::input(format!("entry {i}: SNR must be finite")));
            }
        }
        Ok(Self {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn with_split(&self, tag: SplitTag) -> Manifest {
        Manifest {
            base_dir: self.base_dir.clone(),
            entries: self.entries.iter().filter(|e| e.split == tag).cloned().collect(),
        }
    }

    /// Parses a manifest CSV and checks that every referenced file exists.
    /// Errors name the 1-based data row.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = Self::parse(path)?;
        for (i, e) in m.entries.iter().enumerate() {
            if let Some(p) = m.missing_file(e) {
                return Err(Error::input(format!(
                    "{} row {}: missing file {}",
                    path.display(),
                    i + 1,
                    p.display()
                )));
            }
        }
        Ok(m)
    }

    /// First referenced file of `entry` that does not exist.
    pub fn missing_file(&self, entry: &ManifestEntry) -> Option<PathBuf> {
        let mut referenced = vec![&entry.clean];
        if let NoiseRef::File(p) = &entry.noise {
            referenced.push(p);
        }
        referenced.into_iter().find(|p| !self.resolve(p).is_file()).cloned()
    }

    /// Like [`Manifest::load`] without the file-existence check.
    pub fn parse(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let mut idx = [0usize; 4];
        for (slot, name) in idx.iter_mut().zip(MANIFEST_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::input(format!("{}: missing column {name:?}", path.display())))?;
        }
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record?;
            let field = |k: usize| record.get(idx[k]).unwrap_or("").trim();
            let diag = |e: Error| Error::input(format!("{} row {row}: {e}", path.display()));
            let clean = PathBuf::from(field(0));
            if field(0).is_empty() {
                return Err(diag(Error::input("empty clean path")));
            }
            let noise: NoiseRef = field(1).parse().map_err(diag)?;
            let snr_db: f64 = field(2)
                .parse()
                .map_err(|_| diag(Error::input(format!("bad SNR {:?}", field(2)))))?;
            if !snr_db.is_finite() {
                return Err(diag(Error::input(format!("SNR must be finite, got {snr_db}"))));
            }
            let split: SplitTag = field(3).parse().map_err(diag)?;
            entries.push(ManifestEntry {
                clean,
                noise,
                snr_db,
                split,
            });
        }
        Ok(Self { base_dir, entries })
    }

    /// Writes the manifest to `path`, going through a temporary file so a
    /// failed write never leaves a partial manifest behind. Paths are
    /// rewritten when the target directory differs from `base_dir`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let target_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let same_dir = fs::canonicalize(&target_dir).ok() == fs::canonicalize(&self.base_dir).ok();
        let rebase = |p: &Path| -> PathBuf {
            if same_dir || p.is_absolute() {
                p.to_path_buf()
            } else {
                let joined = self.base_dir.join(p);
                fs::canonicalize(&joined).unwrap_or(joined)
            }
        };
        let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        {
            let mut w = csv::Writer::from_path(&tmp)?;
            w.write_record(MANIFEST_COLUMNS)?;
            for e in &self.entries {
                let noise = match &e.noise {
                    NoiseRef::File(p) => NoiseRef::File(rebase(p)),
                    other => other.clone(),
                };
                w.write_record([
                    rebase(&e.clean).display().to_string(),
                    noise.to_string(),
                    e.snr_db.to_string(),
                    e.split.to_string(),
                ])?;
            }
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Seeded shuffle, then the first `ceil(ratio * n)` entries go to train and
/// the rest to test. Entries are retagged accordingly.
pub fn split(manifest: &Manifest, ratio: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    if manifest.is_empty() {
        return Err(Error::input("cannot split an empty manifest"));
    }
    let n = manifest.len();
    let n_train = ((ratio * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |ids: &[usize], tag: SplitTag| Manifest {
        base_dir: manifest.base_dir.clone(),
        entries: ids
            .iter()
            .map(|&i| ManifestEntry {
                split: tag,
                ..manifest.entries[i].clone()
            })
            .collect(),
    };
    Ok((
        take(&order[..n_train], SplitTag::Train),
        take(&order[n_train..], SplitTag::Test),
    ))
}
