//! Encoders, shared decoder, skip fusion and the two forward paths
//! (disentangle-reconstruct and reverse-trace).

mod network;

use serde::{Deserialize, Serialize};

pub use network::{Decoder, DecoderTape, Encoder, EncoderOutput, EncoderStage, EncoderTape, STAGE_STRIDES};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::{FeatureMap, Scalar};

/// Network topology. Parameter shapes are fully determined by this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub resolution: usize,
    pub channels: [usize; 4],
    pub id_dim: usize,
    pub attr_dim: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            channels: [64, 128, 256, 512],
            id_dim: 512,
            attr_dim: 512,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    /// Same topology at 32 pixels with narrow channels; what the test-suite
    /// and the synthetic experiments run.
    pub fn desk() -> Self {
        Self {
            resolution: 32,
            channels: [16, 32, 64, 128],
            id_dim: 64,
            attr_dim: 64,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || !self.resolution.is_multiple_of(8) {
            return Err(Error::config(format!(
                "resolution must be a positive multiple of 8, got {}",
                self.resolution
            )));
        }
        if self.channels.contains(&0) || self.id_dim == 0 || self.attr_dim == 0 {
            return Err(Error::config("channel counts and embedding sizes must be nonzero"));
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return Err(Error::config(format!(
                "leaky_slope must lie in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// `(scale, channels)` of each encoder level, shallowest first.
    pub fn level_schedule(&self) -> [(usize, usize); 4] {
        let r = self.resolution;
        let c = self.channels;
        [(r / 2, c[0]), (r / 4, c[1]), (r / 8, c[2]), (r / 8, c[3])]
    }
}

/// `H x W x 3` raster with intensities in `[0, 1]`, stored row-major, RGB
/// interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl FaceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "image buffer has {} values, expected {}x{}x3",
                pixels.len(),
                height,
                width
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            pixels: vec![value.clamp(0.0, 1.0); height * width * 3],
        }
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// Writes one channel value, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * 3 + c] = v.clamp(0.0, 1.0);
    }

    pub fn same_shape(&self, other: &FaceImage) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Stacks images into a channel-major batch map.
pub fn images_to_map<T: Scalar>(images: &[&FaceImage]) -> FeatureMap<T> {
    let (h, w) = (images[0].height, images[0].width);
    let mut map = FeatureMap::zeros(3, images.len(), h, w);
    for (b, img) in images.iter().enumerate() {
        assert!(img.height == h && img.width == w, "batch images differ in size");
        for c in 0..3 {
            let base = map.idx(c, b, 0, 0);
            for p in 0..h * w {
                map.data[base + p] = T::lit(img.pixels[p * 3 + c] as f64);
            }
        }
    }
    map
}

pub fn map_to_images<T: Scalar>(map: &FeatureMap<T>) -> Vec<FaceImage> {
    assert_eq!(map.channels, 3);
    let plane = map.plane();
    (0..map.batch)
        .map(|b| {
            let mut pixels = vec![0.0f32; plane * 3];
            for c in 0..3 {
                let base = map.idx(c, b, 0, 0);
                for p in 0..plane {
                    pixels[p * 3 + c] = map.data[base + p].to_f32_lossy().clamp(0.0, 1.0);
                }
            }
            FaceImage {
                height: map.height,
                width: map.width,
                pixels,
            }
        })
        .collect()
}

/// Per-scale encoder outputs, shallowest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureMap<f32>>,
}

impl FeaturePyramid {
    pub fn schedule(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|l| (l.height, l.channels)).collect()
    }

    pub fn deepest(&self) -> &FeatureMap<f32> {
        self.levels.last().expect("pyramid has levels")
    }
}

/// Identity vector from a supervision head or a recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEmbedding(pub Vec<f32>);

/// Attribute vector from the attribute encoder head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeEmbedding(pub Vec<f32>);

/// Channel-concatenated identity and attribute maps per scale, identity first.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepresentation {
    pub levels: Vec<FeatureMap<f32>>,
}

impl FusedRepresentation {
    pub fn channel_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.channels).collect()
    }
}

/// Parameters of the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: ModelConfig,
    pub id_encoder: Encoder<T>,
    pub attr_encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            id_encoder: Encoder::new("id_encoder", config, config.id_dim),
            attr_encoder: Encoder::new("attr_encoder", config, config.attr_dim),
            decoder: Decoder::new("decoder", config),
        })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.id_encoder.params();
        v.extend(self.attr_encoder.params());
        v.extend(self.decoder.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.id_encoder.params_mut();
        v.extend(self.attr_encoder.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.params_mut().into_iter().for_each(|p| p.zero_());
        z
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    pub fn slope(&self) -> T {
        T::lit(self.config.leaky_slope)
    }
}

fn check_image(image: &FaceImage, config: &ModelConfig) -> Result<()> {
    if image.height != config.resolution || image.width != config.resolution {
        return Err(Error::config(format!(
            "image is {}x{}, model expects {}x{}",
            image.height, image.width, config.resolution, config.resolution
        )));
    }
    Ok(())
}

fn run_encoder<T: Scalar>(encoder: &Encoder<T>, x: &FeatureMap<T>, slope: T) -> Result<EncoderOutput<T>> {
    encoder
        .forward(x, slope)
        .map(|(out, _)| out)
        .map_err(|stage| Error::numeric(format!("encoder stage {stage}"), "non-finite activation"))
}

/// Encodes one image into its feature pyramid and supervision-head vector.
pub fn encode(image: &FaceImage, encoder: &Encoder<f32>, config: &ModelConfig) -> Result<(FeaturePyramid, Vec<f32>)> {
    check_image(image, config)?;
    let out = run_encoder(encoder, &images_to_map(&[image]), config.leaky_slope as f32)?;
    Ok((FeaturePyramid { levels: out.levels }, out.embedding.data))
}

/// Per-scale channel concatenation, identity channels first.
pub fn fuse(id_pyr: &FeaturePyramid, attr_pyr: &FeaturePyramid) -> Result<FusedRepresentation> {
    if id_pyr.levels.len() != attr_pyr.levels.len() {
        return Err(Error::shape(format!(
            "pyramids have {} and {} levels",
            id_pyr.levels.len(),
            attr_pyr.levels.len()
        )));
    }
    let levels = id_pyr
        .levels
        .iter()
        .zip(&attr_pyr.levels)
        .enumerate()
        .map(|(k, (a, b))| {
            if (a.batch, a.height, a.width) != (b.batch, b.height, b.width) {
                return Err(Error::shape(format!(
                    "level {k}: identity map is {}x{}, attribute map is {}x{}",
                    a.height, a.width, b.height, b.width
                )));
            }
            Ok(a.concat_channels(b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FusedRepresentation { levels })
}

/// Checks that fused level `k` has the scale of encoder level `k` and the
/// doubled channel count the decoder expects.
pub fn check_fused_schedule<T: Scalar>(levels: &[FeatureMap<T>], config: &ModelConfig) -> Result<()> {
    let schedule = config.level_schedule();
    if levels.len() != schedule.len() {
        return Err(Error::shape(format!(
            "decoder needs {} fused levels, got {}",
            schedule.len(),
            levels.len()
        )));
    }
    for (k, (level, &(scale, ch))) in levels.iter().zip(&schedule).enumerate() {
        if level.height != scale || level.width != scale || level.channels != 2 * ch {
            return Err(Error::shape(format!(
                "fused level {k} is {}x{}x{}, decoder expects {}x{}x{}",
                level.channels,
                level.height,
                level.width,
                2 * ch,
                scale,
                scale
            )));
        }
        if level.batch != levels[0].batch {
            return Err(Error::shape(format!("fused level {k} has a different batch size")));
        }
    }
    Ok(())
}

/// Decodes a fused representation into an image.
pub fn decode(fused: &FusedRepresentation, decoder: &Decoder<f32>, config: &ModelConfig) -> Result<FaceImage> {
    check_fused_schedule(&fused.levels, config)?;
    if fused.levels[0].batch != 1 {
        return Err(Error::shape("decode takes a single-sample representation"));
    }
    let (image, _) = decoder.forward(&fused.levels, config.leaky_slope as f32);
    Ok(map_to_images(&image).remove(0))
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: FaceImage,
    pub identity: IdentityEmbedding,
    pub attribute: AttributeEmbedding,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub image: FaceImage,
    pub generated_identity: IdentityEmbedding,
    pub fake_attribute: AttributeEmbedding,
    pub traced_identity: IdentityEmbedding,
}

struct Decoded {
    images: Vec<FaceImage>,
    image_map: FeatureMap<f32>,
    id: EncoderOutput<f32>,
    attr: EncoderOutput<f32>,
}

fn disentangle_and_decode(images: &[&FaceImage], params: &ModelParams) -> Result<Decoded> {
    for img in images {
        check_image(img, &params.config)?;
    }
    let slope = params.slope();
    let x = images_to_map::<f32>(images);
    let id = run_encoder(&params.id_encoder, &x, slope)?;
    let attr = run_encoder(&params.attr_encoder, &x, slope)?;
    let fused: Vec<_> = id
        .levels
        .iter()
        .zip(&attr.levels)
        .map(|(a, b)| a.concat_channels(b))
        .collect();
    let (image_map, _) = params.decoder.forward(&fused, slope);
    if !image_map.all_finite() {
        return Err(Error::numeric("decoder", "non-finite output"));
    }
    Ok(Decoded {
        images: map_to_images(&image_map),
        image_map,
        id,
        attr,
    })
}

/// Identity-disentangling path: encode the original with both encoders and
/// decode the fused maps back into a reconstruction.
pub fn reconstruct_original(original: &FaceImage, params: &ModelParams) -> Result<Reconstruction> {
    Ok(reconstruct_batch(&[original], params)?.remove(0))
}

pub fn reconstruct_batch(originals: &[&FaceImage], params: &ModelParams) -> Result<Vec<Reconstruction>> {
    let d = disentangle_and_decode(originals, params)?;
    Ok(d.images
        .into_iter()
        .enumerate()
        .map(|(b, image)| Reconstruction {
            image,
            identity: IdentityEmbedding(d.id.embedding.row(b).to_vec()),
            attribute: AttributeEmbedding(d.attr.embedding.row(b).to_vec()),
        })
        .collect())
}

/// Face-reversing path: map a fake face to its traced original and re-extract
/// the traced identity with the same identity encoder.
pub fn trace(fake: &FaceImage, params: &ModelParams) -> Result<Trace> {
    Ok(trace_batch(&[fake], params)?.remove(0))
}

pub fn trace_batch(fakes: &[&FaceImage], params: &ModelParams) -> Result<Vec<Trace>> {
    let d = disentangle_and_decode(fakes, params)?;
    let traced = run_encoder(&params.id_encoder, &d.image_map, params.slope())?;
    Ok(d.images
        .into_iter()
        .enumerate()
        .map(|(b, image)| Trace {
            image,
            generated_identity: IdentityEmbedding(d.id.embedding.row(b).to_vec()),
            fake_attribute: AttributeEmbedding(d.attr.embedding.row(b).to_vec()),
            traced_identity: IdentityEmbedding(traced.embedding.row(b).to_vec()),
        })
        .collect())
}
