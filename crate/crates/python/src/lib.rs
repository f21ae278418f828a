use std::path::PathBuf;

use facetrace::data::{synthesize, SyntheticSpec};
use facetrace::evaluation;
use facetrace::identity::{self, IdentityBackbone};
use facetrace::losses::{self, RedundancyMode};
use facetrace::model::{self, FaceImage, IdentityEmbedding, ModelConfig, ModelParams};
use facetrace::training::{self, AdamState, TrainConfig, TrainingSet};
use facetrace::{Error, ErrorKind};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        ErrorKind::Data => PyIOError::new_err(e.to_string()),
        ErrorKind::Numeric => PyArithmeticError::new_err(e.to_string()),
    }
}

/// RGB image in [0, 1], stored row-major as H x W x 3.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: FaceImage,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, pixels: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: FaceImage::new(height, width, pixels).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, resolution=None))]
    fn read(path: PathBuf, resolution: Option<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: facetrace::imageio::read_face(&path, resolution).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        facetrace::imageio::write_png(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn pixels(&self) -> Vec<f32> {
        self.inner.pixels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

fn config_from(resolution: usize, channels: [usize; 4], id_dim: usize, attr_dim: usize) -> PyResult<ModelConfig> {
    let cfg = ModelConfig {
        resolution,
        channels,
        id_dim,
        attr_dim,
        ..ModelConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Identity encoder, attribute encoder and shared decoder.
#[pyclass(name = "Model")]
struct PyModel {
    params: ModelParams,
}

#[pymethods]
impl PyModel {
    /// Kaiming-initialized parameters.
    #[staticmethod]
    #[pyo3(signature = (resolution=32, channels=[16, 32, 64, 128], id_dim=64, attr_dim=64, seed=0))]
    fn init(resolution: usize, channels: [usize; 4], id_dim: usize, attr_dim: usize, seed: u64) -> PyResult<Self> {
        let cfg = config_from(resolution, channels, id_dim, attr_dim)?;
        Ok(Self {
            params: training::init_params(&cfg, seed).map_err(py_err)?,
        })
    }

    /// Loads the network from a training checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            params: training::checkpoint::load_params(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.params.config.resolution
    }

    /// (scale, channels) of each encoder level.
    fn level_schedule(&self) -> Vec<(usize, usize)> {
        self.params.config.level_schedule().to_vec()
    }

    /// Returns (reconstruction, identity vector, attribute vector).
    fn reconstruct(&self, original: &PyImage) -> PyResult<(PyImage, Vec<f32>, Vec<f32>)> {
        let r = model::reconstruct_original(&original.inner, &self.params).map_err(py_err)?;
        Ok((PyImage { inner: r.image }, r.identity.0, r.attribute.0))
    }

    /// Returns (traced face, traced identity vector).
    fn trace(&self, fake: &PyImage) -> PyResult<(PyImage, Vec<f32>)> {
        let t = model::trace(&fake.inner, &self.params).map_err(py_err)?;
        Ok((PyImage { inner: t.image }, t.traced_identity.0))
    }
}

/// Frozen identity recognizer.
#[pyclass(name = "Backbone")]
struct PyBackbone {
    inner: IdentityBackbone,
}

#[pymethods]
impl PyBackbone {
    #[staticmethod]
    #[pyo3(signature = (seed, output_dim, resolution, normalize_output=true))]
    fn builtin(seed: u64, output_dim: usize, resolution: usize, normalize_output: bool) -> PyResult<Self> {
        Ok(Self {
            inner: identity::builtin_frozen(seed, output_dim, resolution, normalize_output).map_err(py_err)?,
        })
    }

    fn embed(&self, image: &PyImage) -> PyResult<Vec<f32>> {
        Ok(self.inner.embed(&image.inner).map_err(py_err)?.0)
    }
}

fn mode(s: &str) -> PyResult<RedundancyMode> {
    s.parse().map_err(py_err)
}

/// Adam trainer over an in-memory corpus.
#[pyclass(name = "Trainer")]
struct PyTrainer {
    params: ModelParams,
    adam: AdamState,
    config: TrainConfig,
    data: TrainingSet,
    epoch: usize,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (model, originals, fakes, supervisor, seed=0, batch_size=32, redundancy_mode="raw"))]
    fn new(
        model: &PyModel,
        originals: Vec<PyImage>,
        fakes: Vec<PyImage>,
        supervisor: &PyBackbone,
        seed: u64,
        batch_size: usize,
        redundancy_mode: &str,
    ) -> PyResult<Self> {
        let config = TrainConfig {
            seed,
            batch_size,
            redundancy_mode: mode(redundancy_mode)?,
            ..TrainConfig::default()
        };
        config.validate().map_err(py_err)?;
        let data = TrainingSet::new(
            originals.into_iter().map(|i| i.inner).collect(),
            fakes.into_iter().map(|i| i.inner).collect(),
            &supervisor.inner,
        )
        .map_err(py_err)?;
        Ok(Self {
            adam: AdamState::new(&model.params),
            params: model.params.clone(),
            config,
            data,
            epoch: 0,
        })
    }

    /// Runs one epoch; returns the per-step total losses.
    fn epoch(&mut self) -> PyResult<Vec<f64>> {
        let order = training::epoch_order(self.config.seed, self.epoch, self.data.len());
        let mut totals = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch = self.data.batch::<f32>(chunk);
            let b = training::train_step(&mut self.params, &mut self.adam, &batch, &self.config).map_err(py_err)?;
            totals.push(b.total);
        }
        self.epoch += 1;
        Ok(totals)
    }

    /// Snapshot of the current network.
    fn model(&self) -> PyModel {
        PyModel {
            params: self.params.clone(),
        }
    }
}

/// Deterministic synthetic forgery corpus: (originals, fakes).
#[pyfunction]
#[pyo3(signature = (n_identities=16, frames_per_identity=32, resolution=32, blend_alpha=0.35, seed=7))]
fn synthetic_pairs(
    n_identities: usize,
    frames_per_identity: usize,
    resolution: usize,
    blend_alpha: f64,
    seed: u64,
) -> PyResult<(Vec<PyImage>, Vec<PyImage>)> {
    let spec = SyntheticSpec {
        n_identities,
        frames_per_identity,
        resolution,
        blend_alpha,
        seed,
        ..SyntheticSpec::default()
    };
    let c = synthesize(&spec).map_err(py_err)?;
    let wrap = |v: Vec<FaceImage>| v.into_iter().map(|inner| PyImage { inner }).collect();
    Ok((wrap(c.originals), wrap(c.fakes)))
}

#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    evaluation::psnr(&a.inner, &b.inner).map_err(py_err)
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    evaluation::ssim(&a.inner, &b.inner).map_err(py_err)
}

/// Cosine similarity of backbone embeddings, in percent.
#[pyfunction]
fn facial_similarity(a: &PyImage, b: &PyImage, backbone: &PyBackbone) -> PyResult<f64> {
    evaluation::facial_similarity(&a.inner, &b.inner, &backbone.inner).map_err(py_err)
}

/// Row-major H x W mean absolute channel difference.
#[pyfunction]
fn difference_mask(a: &PyImage, b: &PyImage) -> PyResult<Vec<f32>> {
    Ok(evaluation::difference_mask(&a.inner, &b.inner).map_err(py_err)?.values)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    identity::cosine_similarity(&IdentityEmbedding(a), &IdentityEmbedding(b)).map_err(py_err)
}

/// Redundancy term for one identity/attribute pair.
#[pyfunction]
#[pyo3(signature = (identity, attribute, mode="raw"))]
fn redundancy(identity: Vec<f64>, attribute: Vec<f64>, mode: &str) -> PyResult<f64> {
    if identity.len() != attribute.len() || identity.is_empty() {
        return Err(PyValueError::new_err("vectors must be nonempty and of equal length"));
    }
    losses::redundancy_term(&identity, &attribute, self::mode(mode)?).map_err(py_err)
}

#[pymodule]
fn facetrace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBackbone>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(synthetic_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(facial_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(difference_mask, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(redundancy, m)?)?;
    Ok(())
}
