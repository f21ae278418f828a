use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Official pair counts of the two real datasets (total, train).
pub const CELEB_DF_V2_PAIRS: (usize, usize) = (74_118, 67_513);
pub const FACEFORENSICS_PAIRS: (usize, usize) = (29_388, 26_506);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One fake/original frame pair. Paths are relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub fake_path: PathBuf,
    pub original_path: PathBuf,
    pub original_identity: String,
    pub target_identity: String,
    pub split: Split,
    pub timestamp_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMeta {
    pub source: String,
    pub seed: u64,
    pub test_fraction: f64,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<PairRecord>,
    pub seed: u64,
    pub source: String,
    pub test_fraction: f64,
    /// Directory relative record paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Builds a manifest and assigns splits: a seeded shuffle of record
    /// indices, the first `round(n * test_fraction)` of which become test.
    pub fn with_split(
        mut records: Vec<PairRecord>,
        seed: u64,
        test_fraction: f64,
        source: impl Into<String>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::config(format!(
                "test_fraction must lie in [0, 1], got {test_fraction}"
            )));
        }
        let n = records.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (n as f64 * test_fraction).round() as usize;
        for r in &mut records {
            r.split = Split::Train;
        }
        for &i in &order[..n_test] {
            records[i].split = Split::Test;
        }
        Ok(Self {
            records,
            seed,
            source: source.into(),
            test_fraction,
            base_dir: base_dir.into(),
        })
    }

    pub fn counts(&self) -> SplitCounts {
        let test = self.records.iter().filter(|r| r.split == Split::Test).count();
        SplitCounts {
            train: self.records.len() - test,
            test,
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes the line-delimited records and the metadata sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let meta = ManifestMeta {
            source: self.source.clone(),
            seed: self.seed,
            test_fraction: self.test_fraction,
            counts: self.counts(),
        };
        let meta_path = Self::meta_path(path);
        let mut f = std::fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::to_writer_pretty(&mut f, &meta).expect("meta serializes");
        f.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<PairRecord>(l)
                    .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta_path = Self::meta_path(path);
        let meta: Option<ManifestMeta> = match std::fs::read_to_string(&meta_path) {
            Ok(t) => Some(serde_json::from_str(&t).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?),
            Err(_) => None,
        };
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            records,
            seed: meta.as_ref().map_or(0, |m| m.seed),
            source: meta.as_ref().map_or_else(|| "unknown".into(), |m| m.source.clone()),
            test_fraction: meta.as_ref().map_or(0.0, |m| m.test_fraction),
            base_dir,
        })
    }
}

/// Expresses `path` relative to `base` when it lies underneath it.
pub fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn records(n: usize) -> Vec<PairRecord> {
        (0..n)
            .map(|i| PairRecord {
                fake_path: format!("f{i}.png").into(),
                original_path: format!("o{i}.png").into(),
                original_identity: format!("id{}", i % 3),
                target_identity: format!("id{}", (i + 1) % 3),
                split: Split::Train,
                timestamp_index: i,
            })
            .collect()
    }

    #[test]
    fn zero_test_fraction_keeps_everything_in_train() {
        let m = Manifest::with_split(records(10), 1, 0.0, "t", ".").unwrap();
        assert_eq!(m.counts(), SplitCounts { train: 10, test: 0 });
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = Manifest::with_split(records(7), 3, 0.3, "unit", dir.path()).unwrap();
        m.write(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back.records, m.records);
        assert_eq!(back.seed, 3);
        back.write(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn unknown_record_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"fake_path\":\"a\",\"bogus\":1}\n").unwrap();
        assert!(matches!(Manifest::read(&path), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn split_is_disjoint_exhaustive_and_seeded(n in 0usize..200, seed in any::<u64>(), frac in 0.0f64..=1.0) {
            let m = Manifest::with_split(records(n), seed, frac, "p", ".").unwrap();
            let train = m.indices(Split::Train);
            let test = m.indices(Split::Test);
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(train.iter().all(|i| !test.contains(i)));
            prop_assert_eq!(test.len(), (n as f64 * frac).round() as usize);
            let again = Manifest::with_split(records(n), seed, frac, "p", ".").unwrap();
            prop_assert_eq!(again.records, m.records);
        }
    }
}
