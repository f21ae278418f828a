//! The six training losses, the optional attribute-consistency term and
//! their weighted total.
//!
//! Reductions are means: an L1 distance is the mean absolute elementwise
//! difference and a squared L2 distance is the mean squared difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttributeEmbedding, FaceImage, IdentityEmbedding};
use crate::tensor::Scalar;

/// Norms below this make a cosine undefined.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub lambda_attr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            lambda5: 1.0,
            lambda6: 5.0,
            lambda_attr: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("lambda6", self.lambda6),
            ("lambda_attr", self.lambda_attr),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// How the identity/attribute cosine enters the redundancy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedundancyMode {
    /// Signed cosine per pair, averaged over the batch.
    #[default]
    Raw,
    /// Absolute cosine per pair, averaged; anti-correlation counts as redundancy.
    Absolute,
}

impl std::str::FromStr for RedundancyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "absolute" => Ok(Self::Absolute),
            other => Err(Error::config(format!(
                "redundancy mode must be `raw` or `absolute`, got `{other}`"
            ))),
        }
    }
}

/// The unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub id: f64,
    pub redun: f64,
    pub recon: f64,
    pub map: f64,
    pub gen: f64,
    pub cycle: f64,
    pub attr: f64,
}

impl LossParts {
    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("id", self.id),
            ("redun", self.redun),
            ("recon", self.recon),
            ("map", self.map),
            ("gen", self.gen),
            ("cycle", self.cycle),
            ("attr", self.attr),
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub id: f64,
    pub redun: f64,
    pub recon: f64,
    pub map: f64,
    pub gen: f64,
    pub cycle: f64,
    pub attr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn parts(&self) -> LossParts {
        LossParts {
            id: self.id,
            redun: self.redun,
            recon: self.recon,
            map: self.map,
            gen: self.gen,
            cycle: self.cycle,
            attr: self.attr,
        }
    }
}

/// Weighted combination of the loss terms.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in parts.named() {
        if !v.is_finite() {
            return Err(Error::numeric(format!("loss term `{name}`"), format!("value {v}")));
        }
    }
    let total = w.lambda1 * parts.id
        + w.lambda2 * parts.redun
        + w.lambda3 * parts.recon
        + w.lambda4 * parts.map
        + w.lambda5 * parts.gen
        + w.lambda6 * parts.cycle
        + w.lambda_attr * parts.attr;
    Ok(LossBreakdown {
        id: parts.id,
        redun: parts.redun,
        recon: parts.recon,
        map: parts.map,
        gen: parts.gen,
        cycle: parts.cycle,
        attr: parts.attr,
        total,
    })
}

// ---------------------------------------------------------------------------
// Reductions and their gradients, generic over the network scalar.

pub fn mean_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let s: T = a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum();
    s / T::lit(a.len() as f64)
}

/// Adds `scale * d/da mean|a - b|` into `da`. The subgradient at 0 is 0.
pub fn mean_abs_diff_grad<T: Scalar>(a: &[T], b: &[T], scale: T, da: &mut [T]) {
    let k = scale / T::lit(a.len() as f64);
    for ((g, x), y) in da.iter_mut().zip(a).zip(b) {
        let d = *x - *y;
        if d > T::zero() {
            *g += k;
        } else if d < T::zero() {
            *g -= k;
        }
    }
}

pub fn mean_sq_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let s: T = a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    s / T::lit(a.len() as f64)
}

/// Adds `scale * d/da mean (a - b)^2` into `da`.
pub fn mean_sq_diff_grad<T: Scalar>(a: &[T], b: &[T], scale: T, da: &mut [T]) {
    let k = T::lit(2.0) * scale / T::lit(a.len() as f64);
    for ((g, x), y) in da.iter_mut().zip(a).zip(b) {
        *g += k * (*x - *y);
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "cosine of vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < T::lit(MIN_NORM) || nv < T::lit(MIN_NORM) {
        return Err(Error::Degenerate(format!(
            "cosine needs nonzero vectors (norms {:e}, {:e})",
            nu.to_f64().unwrap_or(f64::NAN),
            nv.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Adds `scale * d cos(u, v)` into `du` and `dv`; caller has already checked
/// the norms via [`cosine`].
pub fn cosine_grad<T: Scalar>(u: &[T], v: &[T], scale: T, du: &mut [T], dv: &mut [T]) {
    let (nu, nv) = (norm(u), norm(v));
    let c = dot(u, v) / (nu * nv);
    let inv = T::one() / (nu * nv);
    let (cu, cv) = (c / (nu * nu), c / (nv * nv));
    for i in 0..u.len() {
        du[i] += scale * (v[i] * inv - cu * u[i]);
        dv[i] += scale * (u[i] * inv - cv * v[i]);
    }
}

/// One identity/attribute pair's contribution to the redundancy loss.
pub fn redundancy_term<T: Scalar>(id: &[T], attr: &[T], mode: RedundancyMode) -> Result<T> {
    let c = cosine(id, attr)?;
    Ok(match mode {
        RedundancyMode::Raw => c,
        RedundancyMode::Absolute => c.abs(),
    })
}

pub fn redundancy_term_grad<T: Scalar>(
    id: &[T],
    attr: &[T],
    mode: RedundancyMode,
    scale: T,
    did: &mut [T],
    dattr: &mut [T],
) {
    let scale = match mode {
        RedundancyMode::Raw => scale,
        RedundancyMode::Absolute => {
            let c = dot(id, attr);
            if c > T::zero() {
                scale
            } else if c < T::zero() {
                -scale
            } else {
                T::zero()
            }
        }
    };
    cosine_grad(id, attr, scale, did, dattr);
}

// ---------------------------------------------------------------------------
// Public per-term API on domain types.

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("vector lengths differ: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::shape("empty vectors"));
    }
    Ok(())
}

fn l1_f64(a: &[f32], b: &[f32]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    Ok(mean_abs_diff(&a, &b))
}

fn mse_images(a: &FaceImage, b: &FaceImage) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "images are {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let s: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(s / a.pixels().len() as f64)
}

/// Identity supervision: head output against the frozen recognizer.
pub fn loss_id(pred: &IdentityEmbedding, reference: &IdentityEmbedding) -> Result<f64> {
    l1_f64(&pred.0, &reference.0)
}

pub fn loss_redun(
    id_ori: &IdentityEmbedding,
    attr_ori: &AttributeEmbedding,
    id_fake: &IdentityEmbedding,
    attr_fake: &AttributeEmbedding,
    mode: RedundancyMode,
) -> Result<f64> {
    let f = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    Ok(redundancy_term(&f(&id_ori.0), &f(&attr_ori.0), mode)?
        + redundancy_term(&f(&id_fake.0), &f(&attr_fake.0), mode)?)
}

pub fn loss_recon(original: &FaceImage, reconstructed: &FaceImage) -> Result<f64> {
    mse_images(original, reconstructed)
}

pub fn loss_map(id_ori: &IdentityEmbedding, id_fake: &IdentityEmbedding) -> Result<f64> {
    l1_f64(&id_ori.0, &id_fake.0)
}

pub fn loss_gen(original: &FaceImage, traced: &FaceImage) -> Result<f64> {
    mse_images(original, traced)
}

pub fn loss_cycle(id_ori: &IdentityEmbedding, id_tra: &IdentityEmbedding) -> Result<f64> {
    l1_f64(&id_ori.0, &id_tra.0)
}

pub fn loss_attr(attr_ori: &AttributeEmbedding, attr_fake: &AttributeEmbedding) -> Result<f64> {
    l1_f64(&attr_ori.0, &attr_fake.0)
}
