//! Fidelity and identity metrics between traced and original faces, difference
//! masks, comparison grids and tabular reports.

pub mod metrics;
pub mod report;

pub use metrics::{
    difference_mask, facial_similarities, facial_similarity, mse, psnr, psnr_from_mse, ssim, DifferenceMask,
    PSNR_CAP_DB,
};
pub use report::{render_grid, EvalRecord, EvalReport, MetricMeans, TABLE_HEADER};

use std::path::Path;

use crate::checkpoint::Container;
use crate::data::{load_batch, Manifest, Split};
use crate::error::{Error, Result};
use crate::identity::IdentityBackbone;
use crate::model::{trace_batch, FaceImage, ModelParams};
use crate::training::checkpoint::{read_model_config, take_params};

/// Something that maps fakes to traced originals.
pub trait Tracer {
    /// `originals` is available for reference tracers only; a real tracer
    /// must not look at it.
    fn trace(&self, fakes: &[&FaceImage], originals: &[&FaceImage]) -> Result<Vec<FaceImage>>;
}

/// The reversing network.
pub struct NetworkTracer<'a>(pub &'a ModelParams);

impl Tracer for NetworkTracer<'_> {
    fn trace(&self, fakes: &[&FaceImage], _originals: &[&FaceImage]) -> Result<Vec<FaceImage>> {
        Ok(trace_batch(fakes, self.0)?.into_iter().map(|t| t.image).collect())
    }
}

/// Perfect-tracer bound: returns the paired original.
pub struct OracleTracer;

impl Tracer for OracleTracer {
    fn trace(&self, _fakes: &[&FaceImage], originals: &[&FaceImage]) -> Result<Vec<FaceImage>> {
        Ok(originals.iter().map(|&o| o.clone()).collect())
    }
}

/// Tracer restored from a checkpoint file.
pub enum LoadedTracer {
    Network(Box<ModelParams>),
    Oracle { resolution: usize },
}

impl LoadedTracer {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Container::load(path)?;
        match c.metadata.get("tracer").and_then(|v| v.as_str()) {
            Some("oracle") => {
                let resolution =
                    c.metadata
                        .get("resolution")
                        .and_then(|v| v.as_u64())
                        .ok_or_else(|| Error::Checkpoint {
                            path: path.to_path_buf(),
                            detail: "oracle checkpoint lacks `resolution`".into(),
                        })?;
                Ok(Self::Oracle {
                    resolution: resolution as usize,
                })
            }
            Some("network") | None => {
                let cfg = read_model_config(&c, path)?;
                Ok(Self::Network(Box::new(take_params(&mut c, &cfg, "", path)?)))
            }
            Some(other) => Err(Error::Checkpoint {
                path: path.to_path_buf(),
                detail: format!("unknown tracer kind `{other}`"),
            }),
        }
    }

    /// Writes a checkpoint that loads as [`OracleTracer`].
    pub fn save_oracle(path: &Path, resolution: usize) -> Result<()> {
        let c = Container {
            metadata: serde_json::json!({"tracer": "oracle", "resolution": resolution}),
            ..Container::default()
        };
        c.save(path)
    }

    pub fn resolution(&self) -> usize {
        match self {
            Self::Network(p) => p.config.resolution,
            Self::Oracle { resolution } => *resolution,
        }
    }
}

impl Tracer for LoadedTracer {
    fn trace(&self, fakes: &[&FaceImage], originals: &[&FaceImage]) -> Result<Vec<FaceImage>> {
        match self {
            Self::Network(p) => NetworkTracer(p).trace(fakes, originals),
            Self::Oracle { .. } => OracleTracer.trace(fakes, originals),
        }
    }
}

/// One evaluation item.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub fake: FaceImage,
    pub original: FaceImage,
}

/// Loads a manifest split as evaluation pairs named after the fake file.
pub fn pairs_from_manifest(manifest: &Manifest, split: Split, resolution: usize) -> Result<Vec<EvalPair>> {
    let idx = manifest.indices(split);
    Ok(load_batch(manifest, &idx, resolution)?
        .into_iter()
        .map(|p| EvalPair {
            id: p.record.fake_path.to_string_lossy().replace('\\', "/"),
            fake: p.fake,
            original: p.original,
        })
        .collect())
}

const EVAL_BATCH: usize = 32;

/// Traces every fake and scores it against its paired original. Records keep
/// the input order.
pub fn evaluate(
    tracer: &dyn Tracer,
    pairs: &[EvalPair],
    backbone: &IdentityBackbone,
    dataset: &str,
    config: serde_json::Value,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::config("evaluation split is empty"));
    }
    let mut records = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_BATCH) {
        let fakes: Vec<&FaceImage> = chunk.iter().map(|p| &p.fake).collect();
        let originals: Vec<&FaceImage> = chunk.iter().map(|p| &p.original).collect();
        let traced = tracer.trace(&fakes, &originals)?;
        let traced_refs: Vec<&FaceImage> = traced.iter().collect();
        let sim = facial_similarities(&traced_refs, &originals, backbone)?;
        let fake_sim = facial_similarities(&fakes, &originals, backbone)?;
        for (k, p) in chunk.iter().enumerate() {
            records.push(EvalRecord {
                pair: p.id.clone(),
                psnr: psnr(&traced[k], &p.original)?,
                ssim: ssim(&traced[k], &p.original)?,
                facial_similarity: sim[k],
                fake_psnr: psnr(&p.fake, &p.original)?,
                fake_ssim: ssim(&p.fake, &p.original)?,
                fake_facial_similarity: fake_sim[k],
            });
        }
    }
    Ok(EvalReport::new(dataset, records, config))
}
