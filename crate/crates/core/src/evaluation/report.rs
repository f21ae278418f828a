use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FaceImage;

use super::metrics::difference_mask;

pub const TABLE_HEADER: [&str; 4] = ["Dataset", "PSNR (dB)", "SSIM", "Facial Similarity (%)"];

/// Per-pair scores. The `fake_*` fields score the untouched fake against the
/// original, the baseline a tracer has to beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pair: String,
    pub psnr: f64,
    pub ssim: f64,
    pub facial_similarity: f64,
    pub fake_psnr: f64,
    pub fake_ssim: f64,
    pub fake_facial_similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub psnr: f64,
    pub ssim: f64,
    pub facial_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub records: Vec<EvalRecord>,
    pub traced: MetricMeans,
    pub fake_baseline: MetricMeans,
    pub config: serde_json::Value,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl EvalReport {
    pub fn new(dataset: &str, records: Vec<EvalRecord>, config: serde_json::Value) -> Self {
        let traced = MetricMeans {
            psnr: mean(records.iter().map(|r| r.psnr)),
            ssim: mean(records.iter().map(|r| r.ssim)),
            facial_similarity: mean(records.iter().map(|r| r.facial_similarity)),
        };
        let fake_baseline = MetricMeans {
            psnr: mean(records.iter().map(|r| r.fake_psnr)),
            ssim: mean(records.iter().map(|r| r.fake_ssim)),
            facial_similarity: mean(records.iter().map(|r| r.fake_facial_similarity)),
        };
        Self {
            dataset: dataset.to_string(),
            records,
            traced,
            fake_baseline,
            config,
        }
    }

    /// Summary table: one row for traced faces, one for the fake baseline.
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "| {} |", TABLE_HEADER.join(" | ")).unwrap();
        writeln!(s, "|---|---|---|---|").unwrap();
        let row = |s: &mut String, name: &str, m: &MetricMeans| {
            writeln!(
                s,
                "| {} | {:.2} | {:.4} | {:.2} |",
                name, m.psnr, m.ssim, m.facial_similarity
            )
            .unwrap()
        };
        row(&mut s, &self.dataset, &self.traced);
        row(
            &mut s,
            &format!("{} (fake vs original)", self.dataset),
            &self.fake_baseline,
        );
        s
    }

    /// Line-delimited records: a header line with the config, one line per
    /// pair, and a closing line with the means.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        let header = serde_json::json!({"record": "config", "dataset": self.dataset, "config": self.config});
        writeln!(s, "{header}").unwrap();
        for r in &self.records {
            let mut v = serde_json::to_value(r).expect("record serializes");
            v["record"] = "pair".into();
            writeln!(s, "{v}").unwrap();
        }
        let agg = serde_json::json!({
            "record": "aggregate",
            "count": self.records.len(),
            "traced": self.traced,
            "fake_baseline": self.fake_baseline,
        });
        writeln!(s, "{agg}").unwrap();
        s
    }

    /// Writes `report.jsonl` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let j = dir.join("report.jsonl");
        std::fs::write(&j, self.to_jsonl()).map_err(|e| Error::io(&j, e))?;
        let t = dir.join("report.md");
        std::fs::write(&t, self.table()).map_err(|e| Error::io(&t, e))
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Comparison panel with rows of (fake, original, traced, difference mask).
pub fn render_grid(samples: &[(FaceImage, FaceImage, FaceImage)]) -> Result<RgbImage> {
    let Some(first) = samples.first() else {
        return Err(Error::config("grid needs at least one sample"));
    };
    let (h, w) = (first.0.height(), first.0.width());
    let mut panel = RgbImage::new((4 * w) as u32, (samples.len() * h) as u32);
    for (row, (fake, original, traced)) in samples.iter().enumerate() {
        for img in [fake, original, traced] {
            if img.height() != h || img.width() != w {
                return Err(Error::shape("grid samples must share one resolution"));
            }
        }
        let mask = difference_mask(original, traced)?;
        let oy = (row * h) as u32;
        for y in 0..h {
            for x in 0..w {
                for (col, img) in [fake, original, traced].into_iter().enumerate() {
                    let px = [img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2)].map(to_byte);
                    panel.put_pixel((col * w + x) as u32, oy + y as u32, image::Rgb(px));
                }
                let m = to_byte(mask.get(y, x));
                panel.put_pixel((3 * w + x) as u32, oy + y as u32, image::Rgb([m, m, m]));
            }
        }
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(p: f64) -> EvalRecord {
        EvalRecord {
            pair: format!("p{p}"),
            psnr: p,
            ssim: 0.5,
            facial_similarity: 80.0,
            fake_psnr: 10.0,
            fake_ssim: 0.1,
            fake_facial_similarity: 40.0,
        }
    }

    #[test]
    fn aggregates_are_arithmetic_means() {
        let r = EvalReport::new("synthetic", vec![record(20.0), record(30.0)], serde_json::Value::Null);
        assert_eq!(r.traced.psnr, 25.0);
        assert_eq!(r.fake_baseline.facial_similarity, 40.0);
        let table = r.table();
        let head = table.lines().next().unwrap();
        assert_eq!(head, "| Dataset | PSNR (dB) | SSIM | Facial Similarity (%) |");
        assert!(table.contains("| synthetic | 25.00 | 0.5000 | 80.00 |"), "{table}");
        assert_eq!(r.to_jsonl().lines().count(), 4);
    }

    #[test]
    fn grid_layout() {
        let s = (
            FaceImage::filled(6, 5, 0.0),
            FaceImage::filled(6, 5, 1.0),
            FaceImage::filled(6, 5, 0.0),
        );
        let g = render_grid(&[s.clone(), s.clone(), s]).unwrap();
        assert_eq!((g.width(), g.height()), (20, 18));
        assert_eq!(g.get_pixel(16, 7).0, [255, 255, 255]);
        assert_eq!(g.get_pixel(6, 0).0, [255, 255, 255]);
        assert!(render_grid(&[]).is_err());
    }
}
