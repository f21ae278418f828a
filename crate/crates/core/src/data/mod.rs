//! Paired fake/original corpora: real-dataset manifests, synthetic ground
//! truth, splitting and batch loading.

pub mod manifest;
pub mod synthetic;
pub mod video;

pub use manifest::{Manifest, PairRecord, Split, SplitCounts};
pub use synthetic::{generate_synthetic, synthesize, Attributes, SyntheticSpec};
pub use video::{build_manifest, sample_frames, BuildReport, FrameVideo, NamingConvention};

use crate::error::Result;
use crate::imageio::read_face;
use crate::model::FaceImage;

/// Decoded pair ready for the network.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub index: usize,
    pub original: FaceImage,
    pub fake: FaceImage,
    pub record: PairRecord,
}

/// Loads the given records, resampled to `resolution`, in index order.
pub fn load_batch(manifest: &Manifest, indices: &[usize], resolution: usize) -> Result<Vec<PairSample>> {
    indices
        .iter()
        .map(|&i| {
            let record = manifest.records.get(i).cloned().ok_or_else(|| {
                crate::Error::config(format!("index {i} out of range for {} records", manifest.records.len()))
            })?;
            Ok(PairSample {
                index: i,
                original: read_face(&manifest.resolve(&record.original_path), Some(resolution))?,
                fake: read_face(&manifest.resolve(&record.fake_path), Some(resolution))?,
                record,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_follow_index_order_and_normalize() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_identities: 2,
            frames_per_identity: 3,
            resolution: 16,
            ..SyntheticSpec::default()
        };
        let m = generate_synthetic(&spec, tmp.path()).unwrap();
        let batch = load_batch(&m, &[2, 0, 1], 16).unwrap();
        assert_eq!(batch.iter().map(|p| p.index).collect::<Vec<_>>(), vec![2, 0, 1]);
        for p in &batch {
            assert!(p
                .original
                .pixels()
                .iter()
                .chain(p.fake.pixels())
                .all(|v| (0.0..=1.0).contains(v)));
        }
        let up = load_batch(&m, &[0], 32).unwrap();
        assert_eq!(up[0].original.height(), 32);
    }

    #[test]
    fn missing_image_reports_path() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_identities: 2,
            frames_per_identity: 1,
            resolution: 16,
            ..SyntheticSpec::default()
        };
        let m = generate_synthetic(&spec, tmp.path()).unwrap();
        std::fs::remove_file(m.resolve(&m.records[1].fake_path)).unwrap();
        let err = load_batch(&m, &[1], 16).unwrap_err();
        assert!(err.to_string().contains("fakes"), "{err}");
        assert!(load_batch(&m, &[9], 16).is_err());
    }
}
