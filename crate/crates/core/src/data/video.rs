//! Frame-directory videos and real-dataset pairing.
//!
//! A video is a directory of frame images (sorted by file name) with a
//! `video.json` declaring its frame rate: `{"fps": 30.0}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{relative_to, Manifest, PairRecord, Split};
use crate::error::{Error, Result};
use crate::imageio::read_face;
use crate::model::FaceImage;

pub const VIDEO_META: &str = "video.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoMeta {
    fps: f64,
}

#[derive(Debug, Clone)]
pub struct FrameVideo {
    pub dir: PathBuf,
    pub fps: f64,
    pub frames: Vec<PathBuf>,
}

impl FrameVideo {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(VIDEO_META);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: VideoMeta =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
        if !(meta.fps.is_finite() && meta.fps > 0.0) {
            return Err(Error::Data(format!("{}: fps must be positive", meta_path.display())));
        }
        let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        frames.sort();
        Ok(Self {
            dir: dir.to_path_buf(),
            fps: meta.fps,
            frames,
        })
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFrame {
    /// Which interval this frame opens (0-based); pairs align on it.
    pub timestamp_index: usize,
    pub time: f64,
    pub path: PathBuf,
}

impl SampledFrame {
    pub fn decode(&self, resolution: Option<usize>) -> Result<FaceImage> {
        read_face(&self.path, resolution)
    }
}

/// One frame at the start of every full `interval` seconds.
pub fn sample_frames(video: &FrameVideo, interval: f64) -> Result<Vec<SampledFrame>> {
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::config(format!(
            "sampling interval must be positive, got {interval}"
        )));
    }
    let count = (video.duration() / interval + 1e-9).floor() as usize;
    Ok((0..count)
        .map(|k| {
            let time = k as f64 * interval;
            let frame = ((time * video.fps).round() as usize).min(video.frames.len() - 1);
            SampledFrame {
                timestamp_index: k,
                time,
                path: video.frames[frame].clone(),
            }
        })
        .collect())
}

/// How fake and original video names encode identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamingConvention {
    /// `real/{src}_{vid}`, `fake/{src}_{target}_{vid}`.
    CelebDf,
    /// `real/{vid}`, `fake/{vid}_{donor}`; identities are video ids.
    Ffpp,
}

impl std::str::FromStr for NamingConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "celebdf" => Ok(Self::CelebDf),
            "ffpp" => Ok(Self::Ffpp),
            other => Err(Error::config(format!(
                "unknown naming convention `{other}` (celebdf|ffpp)"
            ))),
        }
    }
}

struct FakeName {
    original_video: String,
    original_identity: String,
    target_identity: String,
}

fn parse_fake(name: &str, convention: NamingConvention) -> Option<FakeName> {
    let parts: Vec<&str> = name.split('_').collect();
    match (convention, parts.as_slice()) {
        (NamingConvention::CelebDf, [src, tgt, vid]) if !src.is_empty() && !tgt.is_empty() && !vid.is_empty() => {
            Some(FakeName {
                original_video: format!("{src}_{vid}"),
                original_identity: src.to_string(),
                target_identity: tgt.to_string(),
            })
        }
        (NamingConvention::Ffpp, [vid, donor]) if !vid.is_empty() && !donor.is_empty() => Some(FakeName {
            original_video: vid.to_string(),
            original_identity: vid.to_string(),
            target_identity: donor.to_string(),
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub pairs: usize,
    pub orphan_fakes: Vec<String>,
    pub malformed: Vec<String>,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

/// Pairs every sampled fake frame with the same-timestamp frame of its
/// source-identity original video and assigns a seeded split. Paths in the
/// manifest are relative to `manifest_dir` when they lie under it.
pub fn build_manifest(
    root: &Path,
    convention: NamingConvention,
    seed: u64,
    test_fraction: f64,
    interval: f64,
    manifest_dir: &Path,
) -> Result<(Manifest, BuildReport)> {
    let root = root.canonicalize().map_err(|e| Error::io(root, e))?;
    std::fs::create_dir_all(manifest_dir).map_err(|e| Error::io(manifest_dir, e))?;
    let base = manifest_dir.canonicalize().map_err(|e| Error::io(manifest_dir, e))?;
    let real_dir = root.join("real");
    let fake_dir = root.join("fake");
    let mut report = BuildReport::default();
    let mut records = Vec::new();
    for fake in sorted_subdirs(&fake_dir)? {
        let name = fake
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let Some(parsed) = parse_fake(&name, convention) else {
            report.malformed.push(name);
            continue;
        };
        let original = real_dir.join(&parsed.original_video);
        if !original.is_dir() {
            log::warn!("fake video {name} has no original {}; skipped", parsed.original_video);
            report.orphan_fakes.push(name);
            continue;
        }
        let fake_frames = sample_frames(&FrameVideo::open(&fake)?, interval)?;
        let orig_frames = sample_frames(&FrameVideo::open(&original)?, interval)?;
        for (f, o) in fake_frames.iter().zip(&orig_frames) {
            debug_assert_eq!(f.timestamp_index, o.timestamp_index);
            records.push(PairRecord {
                fake_path: relative_to(&f.path, &base),
                original_path: relative_to(&o.path, &base),
                original_identity: parsed.original_identity.clone(),
                target_identity: parsed.target_identity.clone(),
                split: Split::Train,
                timestamp_index: f.timestamp_index,
            });
        }
    }
    report.pairs = records.len();
    let source = format!("{convention:?}").to_lowercase();
    let manifest = Manifest::with_split(records, seed, test_fraction, source, base)?;
    Ok((manifest, report))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::imageio::write_png;

    /// Writes a frame-directory video of `seconds` at `fps` with solid frames.
    pub fn write_video(dir: &Path, fps: f64, frames: usize, shade: f32) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join(VIDEO_META), format!("{{\"fps\": {fps}}}")).unwrap();
        for i in 0..frames {
            let img = FaceImage::filled(8, 8, (shade + i as f32 * 0.01).min(1.0));
            write_png(&dir.join(format!("{i:05}.png")), &img).unwrap();
        }
    }

    #[test]
    fn one_frame_per_full_second() {
        let tmp = tempfile::tempdir().unwrap();
        write_video(&tmp.path().join("v"), 30.0, 300, 0.1);
        let v = FrameVideo::open(&tmp.path().join("v")).unwrap();
        let frames = sample_frames(&v, 1.0).unwrap();
        assert_eq!(frames.len(), 10);
        assert!(frames.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(frames[3].path.ends_with("00090.png"));
        assert_eq!(frames, sample_frames(&v, 1.0).unwrap());

        write_video(&tmp.path().join("short"), 30.0, 15, 0.1);
        let short = FrameVideo::open(&tmp.path().join("short")).unwrap();
        assert!(sample_frames(&short, 1.0).unwrap().is_empty());

        write_video(&tmp.path().join("empty"), 30.0, 0, 0.1);
        let empty = FrameVideo::open(&tmp.path().join("empty")).unwrap();
        assert!(sample_frames(&empty, 1.0).unwrap().is_empty());
    }

    #[test]
    fn undecodable_video_is_an_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("v")).unwrap();
        assert!(matches!(FrameVideo::open(&tmp.path().join("v")), Err(Error::Io { .. })));
    }

    pub fn celebdf_fixture(root: &Path) {
        write_video(&root.join("real/idA_0000"), 10.0, 30, 0.2);
        write_video(&root.join("real/idB_0000"), 10.0, 30, 0.6);
        write_video(&root.join("fake/idA_idB_0000"), 10.0, 30, 0.4);
    }

    #[test]
    fn pairs_align_on_timestamps() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("ds");
        celebdf_fixture(&root);
        write_video(&root.join("fake/idC_idA_0001"), 10.0, 20, 0.4);
        write_video(&root.join("fake/broken"), 10.0, 20, 0.4);
        let (m, report) = build_manifest(&root, NamingConvention::CelebDf, 1, 0.0, 1.0, &root).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(report.orphan_fakes, vec!["idC_idA_0001".to_string()]);
        assert_eq!(report.malformed, vec!["broken".to_string()]);
        for (k, r) in m.records.iter().enumerate() {
            assert_eq!(r.timestamp_index, k);
            assert_eq!(r.original_identity, "idA");
            assert_eq!(r.target_identity, "idB");
            assert_eq!(r.split, Split::Train);
            assert_eq!(r.fake_path.file_name(), r.original_path.file_name());
            assert!(r.original_path.starts_with("real/idA_0000"));
        }
    }

    #[test]
    fn manifest_files_are_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("ds");
        celebdf_fixture(&root);
        let out = tmp.path().join("out");
        let (m1, _) = build_manifest(&root, NamingConvention::CelebDf, 5, 0.34, 1.0, &out).unwrap();
        m1.write(&out.join("a.jsonl")).unwrap();
        let (m2, _) = build_manifest(&root, NamingConvention::CelebDf, 5, 0.34, 1.0, &out).unwrap();
        m2.write(&out.join("b.jsonl")).unwrap();
        assert_eq!(
            std::fs::read(out.join("a.jsonl")).unwrap(),
            std::fs::read(out.join("b.jsonl")).unwrap()
        );
        assert_eq!(m1.counts().test, 1);
    }

    #[test]
    fn ffpp_names() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        write_video(&root.join("real/000"), 5.0, 10, 0.2);
        write_video(&root.join("fake/000_003"), 5.0, 10, 0.3);
        let (m, _) = build_manifest(root, NamingConvention::Ffpp, 0, 0.0, 1.0, root).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].original_identity, "000");
        assert_eq!(m.records[0].target_identity, "003");
    }
}
