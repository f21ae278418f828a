//! Procedural forgery pairs with known ground truth.
//!
//! An "identity" is a seeded parametric face-like pattern (palette, face
//! shape, eye/mouth geometry, skin texture). "Attributes" are a rotation, a
//! brightness factor and a translation. A fake renders the target identity
//! under the original frame's attributes and mixes in `blend_alpha` of the
//! original, standing in for the traces a real forgery leaves behind.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, PairRecord, Split};
use crate::error::{Error, Result};
use crate::imageio::write_png;
use crate::model::FaceImage;

pub const MAX_ROTATION_DEG: f64 = 20.0;
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.7, 1.3);
/// Translation bound as a fraction of the image width.
pub const MAX_TRANSLATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub frames_per_identity: usize,
    pub resolution: usize,
    pub blend_alpha: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_identities: 16,
            frames_per_identity: 32,
            resolution: 32,
            blend_alpha: 0.35,
            test_fraction: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::config(format!(
                "a forgery needs a distinct target identity; n_identities must be >= 2, got {}",
                self.n_identities
            )));
        }
        if self.frames_per_identity == 0 || self.resolution < 8 {
            return Err(Error::config("frames_per_identity must be >= 1 and resolution >= 8"));
        }
        if !(0.0..=1.0).contains(&self.blend_alpha) {
            return Err(Error::config(format!(
                "blend_alpha must lie in [0, 1], got {}",
                self.blend_alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::config(format!(
                "test_fraction must lie in [0, 1], got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Per-frame attribute transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    pub rotation_deg: f64,
    pub brightness: f64,
    /// Translation as fractions of the image width.
    pub translate_x: f64,
    pub translate_y: f64,
}

impl Attributes {
    pub const NEUTRAL: Attributes = Attributes {
        rotation_deg: 0.0,
        brightness: 1.0,
        translate_x: 0.0,
        translate_y: 0.0,
    };

    fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            rotation_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            brightness: rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1),
            translate_x: rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
            translate_y: rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
        }
    }
}

/// Parametric identity pattern evaluated on `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityPattern {
    pub background: [f64; 3],
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub eye: [f64; 3],
    pub mouth: [f64; 3],
    pub face_radii: [f64; 2],
    pub hairline: f64,
    pub eye_offset: [f64; 2],
    pub eye_radius: f64,
    pub mouth_center: f64,
    pub mouth_radii: [f64; 2],
    pub texture_freq: f64,
    pub texture_angle: f64,
    pub texture_amp: f64,
}

fn color<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// Smooth 0..1 ramp as `d` crosses 0 from positive (outside) to negative.
fn inside(d: f64, softness: f64) -> f64 {
    let t = (0.5 - d / softness).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

impl IdentityPattern {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            background: color(rng, 0.05, 0.95),
            skin: color(rng, 0.2, 0.9),
            hair: color(rng, 0.0, 0.7),
            eye: color(rng, 0.0, 1.0),
            mouth: color(rng, 0.1, 0.9),
            face_radii: [rng.random_range(0.45..0.7), rng.random_range(0.6..0.8)],
            hairline: rng.random_range(-0.75..-0.3),
            eye_offset: [rng.random_range(0.15..0.35), rng.random_range(-0.35..-0.05)],
            eye_radius: rng.random_range(0.07..0.16),
            mouth_center: rng.random_range(0.25..0.5),
            mouth_radii: [rng.random_range(0.12..0.3), rng.random_range(0.04..0.1)],
            texture_freq: rng.random_range(4.0..12.0),
            texture_angle: rng.random_range(0.0..std::f64::consts::PI),
            texture_amp: rng.random_range(0.0..0.12),
        }
    }

    pub fn eval(&self, u: f64, v: f64, softness: f64) -> [f64; 3] {
        let [rx, ry] = self.face_radii;
        let face_d = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt() - 1.0;
        let face = inside(face_d * rx.min(ry), softness);

        let (s, c) = self.texture_angle.sin_cos();
        let stripe = (self.texture_freq * (u * c + v * s)).sin() * self.texture_amp;
        let mut skin = self.skin.map(|x| x + stripe);
        let hair = inside(v - self.hairline, softness);
        skin = mix(skin, self.hair, hair);

        let [ex, ey] = self.eye_offset;
        let eye_d = ((u.abs() - ex).powi(2) + (v - ey).powi(2)).sqrt() - self.eye_radius;
        skin = mix(skin, self.eye, inside(eye_d, softness));

        let [mx, my] = self.mouth_radii;
        let mouth_d = ((u / mx).powi(2) + ((v - self.mouth_center) / my).powi(2)).sqrt() - 1.0;
        skin = mix(skin, self.mouth, inside(mouth_d * my, softness));

        mix(self.background, skin, face)
    }

    /// Renders at `resolution` under the given attributes.
    pub fn render(&self, resolution: usize, attrs: &Attributes) -> FaceImage {
        let r = resolution as f64;
        let softness = 3.0 / r;
        let (s, c) = attrs.rotation_deg.to_radians().sin_cos();
        // Image width spans 2 units of pattern space.
        let (tx, ty) = (2.0 * attrs.translate_x, 2.0 * attrs.translate_y);
        let mut img = FaceImage::filled(resolution, resolution, 0.0);
        for py in 0..resolution {
            for px in 0..resolution {
                let x = (px as f64 + 0.5) / r * 2.0 - 1.0 - tx;
                let y = (py as f64 + 0.5) / r * 2.0 - 1.0 - ty;
                // Inverse rotation maps the output pixel back into pattern space.
                let u = c * x + s * y;
                let v = -s * x + c * y;
                let rgb = self.eval(u, v, softness);
                for (ch, val) in rgb.iter().enumerate() {
                    img.set(py, px, ch, (val * attrs.brightness) as f32);
                }
            }
        }
        img
    }
}

/// Fake = `alpha * original + (1 - alpha) * render(target, attributes)`.
pub fn forge(original: &FaceImage, target_render: &FaceImage, alpha: f64) -> FaceImage {
    let a = alpha as f32;
    let pixels = original
        .pixels()
        .iter()
        .zip(target_render.pixels())
        .map(|(o, t)| (a * o + (1.0 - a) * t).clamp(0.0, 1.0))
        .collect();
    FaceImage::new(original.height(), original.width(), pixels).expect("convex mix stays in range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub original_identity: usize,
    pub target_identity: usize,
    pub frame: usize,
    pub original_attributes: Attributes,
    pub fake_attributes: Attributes,
}

/// Generator sidecar: corpus parameters, identity patterns and per-pair attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub spec: SyntheticSpec,
    pub identities: Vec<IdentityPattern>,
    pub pairs: Vec<SyntheticPair>,
}

/// In-memory corpus before it is written to disk.
pub struct SyntheticCorpus {
    pub metadata: SyntheticMetadata,
    pub originals: Vec<FaceImage>,
    pub fakes: Vec<FaceImage>,
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:02}")
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let identities: Vec<IdentityPattern> = (0..spec.n_identities)
        .map(|_| IdentityPattern::sample(&mut rng))
        .collect();
    let mut pairs = Vec::new();
    let mut originals = Vec::new();
    let mut fakes = Vec::new();
    for (src, pattern) in identities.iter().enumerate() {
        for frame in 0..spec.frames_per_identity {
            let attrs = Attributes::sample(&mut rng);
            let mut target = rng.random_range(0..spec.n_identities - 1);
            if target >= src {
                target += 1;
            }
            let original = pattern.render(spec.resolution, &attrs);
            let target_render = identities[target].render(spec.resolution, &attrs);
            fakes.push(forge(&original, &target_render, spec.blend_alpha));
            originals.push(original);
            pairs.push(SyntheticPair {
                original_identity: src,
                target_identity: target,
                frame,
                original_attributes: attrs,
                fake_attributes: attrs,
            });
        }
    }
    Ok(SyntheticCorpus {
        metadata: SyntheticMetadata {
            spec: spec.clone(),
            identities,
            pairs,
        },
        originals,
        fakes,
    })
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const METADATA_NAME: &str = "synthetic.json";

/// Writes PNGs, the manifest and the generator sidecar under `root`;
/// returns the manifest.
pub fn generate_synthetic(spec: &SyntheticSpec, root: &Path) -> Result<Manifest> {
    let corpus = synthesize(spec)?;
    let mut records = Vec::with_capacity(corpus.originals.len());
    for (i, pair) in corpus.metadata.pairs.iter().enumerate() {
        let src = identity_name(pair.original_identity);
        let tgt = identity_name(pair.target_identity);
        let original_path = PathBuf::from("originals").join(format!("{src}_f{:03}.png", pair.frame));
        let fake_path = PathBuf::from("fakes").join(format!("{src}_{tgt}_f{:03}.png", pair.frame));
        write_png(&root.join(&original_path), &corpus.originals[i])?;
        write_png(&root.join(&fake_path), &corpus.fakes[i])?;
        records.push(PairRecord {
            fake_path,
            original_path,
            original_identity: src,
            target_identity: tgt,
            split: Split::Train,
            timestamp_index: pair.frame,
        });
    }
    let manifest = Manifest::with_split(records, spec.seed, spec.test_fraction, "synthetic", root)?;
    manifest.write(&root.join(MANIFEST_NAME))?;
    let meta_path = root.join(METADATA_NAME);
    let text = serde_json::to_string_pretty(&corpus.metadata).expect("metadata serializes");
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(manifest)
}

pub fn read_metadata(root: &Path) -> Result<SyntheticMetadata> {
    let path = root.join(METADATA_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
