use crate::error::{Error, Result};
use crate::identity::{cosine_similarity, IdentityBackbone};
use crate::imageio::resize_bilinear;
use crate::model::FaceImage;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &FaceImage, b: &FaceImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "images are {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

pub fn mse(a: &FaceImage, b: &FaceImage) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.pixels().len() as f64)
}

/// Peak signal-to-noise ratio with peak 1.0.
pub fn psnr(a: &FaceImage, b: &FaceImage) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB)
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut t = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Valid-mode separable filtering of an `h`×`w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over a single channel plane pair.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&prod(a, a), h, w, &taps);
    let e_bb = filter_valid(&prod(b, b), h, w, &taps);
    let e_ab = filter_valid(&prod(a, b), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

fn channel_plane(img: &FaceImage, c: usize) -> Vec<f64> {
    img.pixels().iter().skip(c).step_by(3).map(|&v| v as f64).collect()
}

/// Single-scale SSIM: Gaussian window, computed per channel over valid
/// window positions and averaged.
pub fn ssim(a: &FaceImage, b: &FaceImage) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let s: f64 = (0..3)
        .map(|c| ssim_plane(&channel_plane(a, c), &channel_plane(b, c), h, w))
        .sum();
    Ok(s / 3.0)
}

fn at_resolution(img: &FaceImage, r: usize) -> FaceImage {
    if img.height() == r && img.width() == r {
        img.clone()
    } else {
        resize_bilinear(img, r, r)
    }
}

/// Cosine similarity of recognizer embeddings, in percent.
pub fn facial_similarity(a: &FaceImage, b: &FaceImage, backbone: &IdentityBackbone) -> Result<f64> {
    let r = backbone.resolution();
    let e = backbone.embed_batch(&[&at_resolution(a, r), &at_resolution(b, r)])?;
    Ok(100.0 * cosine_similarity(&e[0], &e[1])?)
}

/// Batched form of [`facial_similarity`] over aligned lists.
pub fn facial_similarities(a: &[&FaceImage], b: &[&FaceImage], backbone: &IdentityBackbone) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape("similarity lists differ in length"));
    }
    let r = backbone.resolution();
    let ra: Vec<FaceImage> = a.iter().map(|i| at_resolution(i, r)).collect();
    let rb: Vec<FaceImage> = b.iter().map(|i| at_resolution(i, r)).collect();
    let ea = backbone.embed_batch(&ra.iter().collect::<Vec<_>>())?;
    let eb = backbone.embed_batch(&rb.iter().collect::<Vec<_>>())?;
    ea.iter()
        .zip(&eb)
        .map(|(x, y)| Ok(100.0 * cosine_similarity(x, y)?))
        .collect()
}

/// Grayscale map of per-pixel mean absolute channel difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DifferenceMask {
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

pub fn difference_mask(a: &FaceImage, b: &FaceImage) -> Result<DifferenceMask> {
    same_shape(a, b)?;
    let values = a
        .pixels()
        .chunks_exact(3)
        .zip(b.pixels().chunks_exact(3))
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f32>() / 3.0)
        .collect();
    Ok(DifferenceMask {
        height: a.height(),
        width: a.width(),
        values,
    })
}
