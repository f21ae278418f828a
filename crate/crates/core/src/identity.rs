//! Frozen identity embedders: the supervision recognizer and the evaluation
//! recognizer share this interface.
//!
//! The built-in backbone is a small random convolutional projection: three
//! stride-2 3x3 convolutions with `tanh`, global mean and deviation pooling
//! and a linear projection. Weights are fixed by the seed.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Linear, Param};
use crate::model::{images_to_map, FaceImage, IdentityEmbedding};
use crate::tensor::{FeatureMap, Matrix};

const WIDTHS: [usize; 3] = [24, 48, 48];
const TANH_GAIN: f64 = 5.0 / 3.0;

/// Declares what a backbone consumes and produces; stored as a JSON sidecar
/// next to external weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub resolution: usize,
    pub output_dim: usize,
    pub normalize_output: bool,
}

impl BackboneSpec {
    pub fn sidecar_path(weights: &Path) -> std::path::PathBuf {
        let mut s = weights.as_os_str().to_owned();
        s.push(".spec.json");
        s.into()
    }

    pub fn read_sidecar(weights: &Path) -> Result<Self> {
        let path = Self::sidecar_path(weights);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct IdentityBackbone {
    spec: BackboneSpec,
    convs: Vec<Conv2d<f32>>,
    projection: Linear<f32>,
}

impl IdentityBackbone {
    fn skeleton(spec: &BackboneSpec) -> Result<Self> {
        if spec.resolution < 8 || spec.output_dim == 0 {
            return Err(Error::config(format!(
                "backbone needs resolution >= 8 and output_dim > 0, got {spec:?}"
            )));
        }
        let mut cin = 3;
        let convs = WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv2d::new(&format!("backbone.conv{}", i + 1), cin, w, 2);
                cin = w;
                c
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            convs,
            projection: Linear::new("backbone.projection", 2 * cin, spec.output_dim),
        })
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut v: Vec<&mut Param<f32>> = Vec::new();
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v.push(&mut self.projection.weight);
        v.push(&mut self.projection.bias);
        v
    }

    fn params(&self) -> Vec<&Param<f32>> {
        let mut v: Vec<&Param<f32>> = Vec::new();
        for c in &self.convs {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        v.push(&self.projection.weight);
        v.push(&self.projection.bias);
        v
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn resolution(&self) -> usize {
        self.spec.resolution
    }

    /// Writes the weights plus a JSON sidecar describing the backbone.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::default();
        for p in self.params() {
            c.insert(p.name.clone(), p.shape.clone(), p.data.clone());
        }
        c.metadata = serde_json::to_value(&self.spec).expect("spec serializes");
        c.save(path)?;
        let side = BackboneSpec::sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    /// Embeds a batch of images at the backbone's resolution.
    pub fn embed_batch(&self, images: &[&FaceImage]) -> Result<Vec<IdentityEmbedding>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        for img in images {
            if img.height() != self.spec.resolution || img.width() != self.spec.resolution {
                return Err(Error::shape(format!(
                    "backbone expects {r}x{r} images, got {}x{}",
                    img.height(),
                    img.width(),
                    r = self.spec.resolution
                )));
            }
        }
        let mut x: FeatureMap<f32> = images_to_map(images);
        x.data.iter_mut().for_each(|v| *v -= 0.5);
        for conv in &self.convs {
            x = conv.forward(&x);
            x.data.iter_mut().for_each(|v| *v = v.tanh());
        }
        let plane = x.plane();
        let mut pooled = Matrix::<f32>::zeros(x.batch, 2 * x.channels);
        for c in 0..x.channels {
            for b in 0..x.batch {
                let base = x.idx(c, b, 0, 0);
                let vals = &x.data[base..base + plane];
                let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
                let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
                let row = pooled.row_mut(b);
                row[c] = mean as f32;
                row[x.channels + c] = var.sqrt() as f32;
            }
        }
        let out = self.projection.forward(&pooled);
        Ok((0..out.rows)
            .map(|b| {
                let mut v = out.row(b).to_vec();
                if self.spec.normalize_output {
                    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                    if n > 0.0 {
                        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
                    }
                }
                IdentityEmbedding(v)
            })
            .collect())
    }

    pub fn embed(&self, image: &FaceImage) -> Result<IdentityEmbedding> {
        Ok(self.embed_batch(&[image])?.remove(0))
    }
}

/// Built-in stand-in recognizer with seed-determined frozen weights.
pub fn builtin_frozen(
    seed: u64,
    output_dim: usize,
    resolution: usize,
    normalize_output: bool,
) -> Result<IdentityBackbone> {
    let spec = BackboneSpec {
        resolution,
        output_dim,
        normalize_output,
    };
    let mut bb = IdentityBackbone::skeleton(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d3e_7b0c_95a4_f2e1);
    for conv in &mut bb.convs {
        let fan_in = conv.fan_in();
        conv.weight.kaiming_normal(fan_in, 1.0, &mut rng);
        // Kaiming with slope 1 has gain 1; rescale to the tanh gain.
        conv.weight.data.iter_mut().for_each(|w| *w *= TANH_GAIN as f32);
    }
    let fan_in = bb.projection.in_features;
    bb.projection.weight.kaiming_normal(fan_in, 1.0, &mut rng);
    Ok(bb)
}

/// Wraps externally supplied weights in the built-in architecture.
pub fn load_external(path: &Path, spec: &BackboneSpec) -> Result<IdentityBackbone> {
    let mut container = Container::load(path)?;
    let mut bb = IdentityBackbone::skeleton(spec)?;
    for p in bb.params_mut() {
        p.data = container.take(&p.name, &p.shape, path)?;
    }
    if let Some(extra) = container.tensors.keys().next() {
        return Err(Error::config(format!(
            "{}: unexpected tensor `{extra}` for the backbone architecture",
            path.display()
        )));
    }
    Ok(bb)
}

/// Loads external weights if present, otherwise falls back to the built-in
/// backbone with a warning.
pub fn load_or_builtin(
    path: Option<&Path>,
    seed: u64,
    output_dim: usize,
    resolution: usize,
    normalize_output: bool,
) -> Result<IdentityBackbone> {
    match path {
        Some(p) if p.exists() => {
            let spec = BackboneSpec::read_sidecar(p)?;
            load_external(p, &spec)
        }
        Some(p) => {
            log::warn!(
                "identity weights {} not found; using built-in backbone (seed {seed})",
                p.display()
            );
            builtin_frozen(seed, output_dim, resolution, normalize_output)
        }
        None => builtin_frozen(seed, output_dim, resolution, normalize_output),
    }
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine_similarity(a: &IdentityEmbedding, b: &IdentityEmbedding) -> Result<f64> {
    let u: Vec<f64> = a.0.iter().map(|&v| v as f64).collect();
    let v: Vec<f64> = b.0.iter().map(|&v| v as f64).collect();
    Ok(crate::losses::cosine(&u, &v)?.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(r: usize, phase: f32) -> FaceImage {
        let mut img = FaceImage::filled(r, r, 0.0);
        for y in 0..r {
            for x in 0..r {
                for c in 0..3 {
                    let v = 0.5 + 0.4 * ((x as f32 * 0.3 + y as f32 * 0.2 + c as f32 + phase).sin());
                    img.set(y, x, c, v);
                }
            }
        }
        img
    }

    #[test]
    fn embedding_is_deterministic_and_sized() {
        let bb = builtin_frozen(42, 64, 32, false).unwrap();
        let img = gradient_image(32, 0.0);
        let a = bb.embed(&img).unwrap();
        assert_eq!(a.0.len(), 64);
        assert_eq!(a, bb.embed(&img).unwrap());
        let again = builtin_frozen(42, 64, 32, false).unwrap();
        assert_eq!(a, again.embed(&img).unwrap());
    }

    #[test]
    fn normalized_output_has_unit_norm() {
        let bb = builtin_frozen(3, 32, 32, true).unwrap();
        let e = bb.embed(&gradient_image(32, 1.0)).unwrap();
        let n: f64 = e.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn different_seeds_give_different_embedders() {
        let img = gradient_image(32, 0.5);
        let a = builtin_frozen(7, 64, 32, false).unwrap().embed(&img).unwrap();
        let b = builtin_frozen(8, 64, 32, false).unwrap().embed(&img).unwrap();
        assert!(cosine_similarity(&a, &b).unwrap() < 0.99);
    }

    #[test]
    fn wrong_resolution_is_a_shape_error() {
        let bb = builtin_frozen(1, 8, 32, false).unwrap();
        let err = bb.embed(&gradient_image(16, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn cosine_cases() {
        let e = |v: &[f32]| IdentityEmbedding(v.to_vec());
        assert!((cosine_similarity(&e(&[0.3, 2.0]), &e(&[0.3, 2.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&e(&[1.0, 1.0]), &e(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        let s = cosine_similarity(&e(&[2.0, 5.0]), &e(&[-1.0, 3.0])).unwrap();
        let t = cosine_similarity(&e(&[-3.0, 9.0]), &e(&[4.0, 10.0])).unwrap();
        assert!((s - t).abs() < 1e-12);
    }

    #[test]
    fn external_round_trip_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bb.safetensors");
        let bb = builtin_frozen(11, 16, 32, true).unwrap();
        bb.save(&path).unwrap();
        let spec = BackboneSpec::read_sidecar(&path).unwrap();
        let loaded = load_external(&path, &spec).unwrap();
        let img = gradient_image(32, 2.0);
        assert_eq!(bb.embed(&img).unwrap(), loaded.embed(&img).unwrap());

        let wrong = BackboneSpec {
            output_dim: 17,
            ..spec.clone()
        };
        assert!(matches!(load_external(&path, &wrong), Err(Error::Config(_))));

        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.safetensors");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_external(&cut, &spec), Err(Error::Checkpoint { .. })));

        let missing = dir.path().join("absent.safetensors");
        assert!(matches!(load_external(&missing, &spec), Err(Error::Io { .. })));
        let fallback = load_or_builtin(Some(&missing), 11, 16, 32, true).unwrap();
        assert_eq!(fallback.embed(&img).unwrap(), bb.embed(&img).unwrap());
    }
}
