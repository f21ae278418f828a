//! PNG reading/writing and resampling for [`FaceImage`].

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::model::FaceImage;

/// Decodes an image file, bilinearly resampling to `resolution` square when
/// the stored size differs.
pub fn read_face(path: &Path, resolution: Option<usize>) -> Result<FaceImage> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let face = FaceImage::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())?;
    Ok(match resolution {
        Some(r) if face.height() != r || face.width() != r => resize_bilinear(&face, r, r),
        _ => face,
    })
}

pub fn write_png(path: &Path, image: &FaceImage) -> Result<()> {
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb8())
        .expect("buffer matches dimensions");
    write_rgb(path, &buf)
}

pub fn write_rgb(path: &Path, buf: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn resize_bilinear(image: &FaceImage, height: usize, width: usize) -> FaceImage {
    let src: ImageBuffer<Rgb<f32>, Vec<f32>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, image.pixels().to_vec())
            .expect("buffer matches dimensions");
    let out = imageops::resize(&src, width as u32, height as u32, FilterType::Triangle);
    let pixels = out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    FaceImage::new(height, width, pixels).expect("clamped into range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..4 * 5 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = FaceImage::from_rgb8(4, 5, &bytes).unwrap();
        let path = dir.path().join("x.png");
        write_png(&path, &img).unwrap();
        let back = read_face(&path, None).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn resize_to_requested_resolution_stays_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = FaceImage::filled(256, 256, 0.0);
        for y in 0..256 {
            for x in 0..256 {
                img.set(y, x, 0, x as f32 / 255.0);
                img.set(y, x, 2, 1.0);
            }
        }
        let path = dir.path().join("big.png");
        write_png(&path, &img).unwrap();
        let small = read_face(&path, Some(128)).unwrap();
        assert_eq!((small.height(), small.width()), (128, 128));
        assert!(small.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(small.get(64, 127, 0) > small.get(64, 0, 0));
    }

    #[test]
    fn unreadable_file_reports_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not a png").unwrap();
        match read_face(&path, None) {
            Err(Error::Image { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected image error, got {other:?}"),
        }
    }
}
