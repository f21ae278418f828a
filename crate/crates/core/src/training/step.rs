//! Joint loss over both forward paths and its gradient.

use crate::error::{Error, Result};
use crate::losses::{
    mean_abs_diff, mean_abs_diff_grad, mean_sq_diff, mean_sq_diff_grad, redundancy_term, redundancy_term_grad,
    total_loss, LossBreakdown, LossParts, LossWeights, RedundancyMode,
};
use crate::model::{check_fused_schedule, EncoderOutput, ModelParams};
use crate::tensor::{FeatureMap, Matrix, Scalar};

/// A batch as network tensors: originals, fakes and the frozen recognizer's
/// embeddings of the originals.
#[derive(Debug, Clone)]
pub struct BatchTensors<T> {
    pub originals: FeatureMap<T>,
    pub fakes: FeatureMap<T>,
    pub reference_ids: Matrix<T>,
}

impl<T: Scalar> BatchTensors<T> {
    pub fn cast<U: Scalar>(&self) -> BatchTensors<U> {
        let m = &self.reference_ids;
        BatchTensors {
            originals: self.originals.cast(),
            fakes: self.fakes.cast(),
            reference_ids: Matrix {
                rows: m.rows,
                cols: m.cols,
                data: m.data.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub redundancy_mode: RedundancyMode,
}

fn encode<T: Scalar>(
    enc: &crate::model::Encoder<T>,
    x: &FeatureMap<T>,
    slope: T,
    which: &str,
) -> Result<(EncoderOutput<T>, crate::model::EncoderTape<T>)> {
    enc.forward(x, slope)
        .map_err(|stage| Error::numeric(format!("{which} stage {stage}"), "non-finite activation"))
}

fn fuse<T: Scalar>(a: &EncoderOutput<T>, b: &EncoderOutput<T>) -> Vec<FeatureMap<T>> {
    a.levels
        .iter()
        .zip(&b.levels)
        .map(|(x, y)| x.concat_channels(y))
        .collect()
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Evaluates every loss term on the batch and, when `with_grad` is set, the
/// gradient of the weighted total with respect to all parameters.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    batch: &BatchTensors<T>,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<ModelParams<T>>)> {
    let slope = params.slope();
    let b = batch.originals.batch;
    if b == 0 || batch.fakes.shape() != batch.originals.shape() || batch.reference_ids.rows != b {
        return Err(Error::shape("batch originals, fakes and reference embeddings disagree"));
    }
    if batch.reference_ids.cols != params.config.id_dim {
        return Err(Error::shape(format!(
            "supervision embeddings have {} dims, identity head has {}",
            batch.reference_ids.cols, params.config.id_dim
        )));
    }

    // Disentangle-reconstruct path.
    let (id_o, id_o_tape) = encode(&params.id_encoder, &batch.originals, slope, "identity encoder")?;
    let (at_o, at_o_tape) = encode(&params.attr_encoder, &batch.originals, slope, "attribute encoder")?;
    let fused_o = fuse(&id_o, &at_o);
    check_fused_schedule(&fused_o, &params.config)?;
    let (recon, recon_tape) = params.decoder.forward(&fused_o, slope);

    // Reverse-trace path.
    let (id_f, id_f_tape) = encode(&params.id_encoder, &batch.fakes, slope, "identity encoder")?;
    let (at_f, at_f_tape) = encode(&params.attr_encoder, &batch.fakes, slope, "attribute encoder")?;
    let (traced, traced_tape) = params.decoder.forward(&fuse(&id_f, &at_f), slope);
    let (id_t, id_t_tape) = encode(&params.id_encoder, &traced, slope, "identity encoder (traced)")?;

    let e_io = &id_o.embedding;
    let e_if = &id_f.embedding;
    let e_it = &id_t.embedding;
    let e_ao = &at_o.embedding;
    let e_af = &at_f.embedding;
    let mode = cfg.redundancy_mode;

    let mut redun = T::zero();
    for r in 0..b {
        redun += redundancy_term(e_io.row(r), e_ao.row(r), mode)?;
        redun += redundancy_term(e_if.row(r), e_af.row(r), mode)?;
    }
    redun = redun / T::lit(b as f64);

    let parts = LossParts {
        id: to_f64(mean_abs_diff(&e_io.data, &batch.reference_ids.data)),
        redun: to_f64(redun),
        recon: to_f64(mean_sq_diff(&batch.originals.data, &recon.data)),
        map: to_f64(mean_abs_diff(&e_io.data, &e_if.data)),
        gen: to_f64(mean_sq_diff(&batch.originals.data, &traced.data)),
        cycle: to_f64(mean_abs_diff(&e_io.data, &e_it.data)),
        attr: to_f64(mean_abs_diff(&e_ao.data, &e_af.data)),
    };
    let breakdown = total_loss(&parts, &cfg.weights)?;
    if !with_grad {
        return Ok((breakdown, None));
    }

    let w = &cfg.weights;
    let lam = |v: f64| T::lit(v);
    let mut d_io = Matrix::zeros(b, e_io.cols);
    let mut d_if = Matrix::zeros(b, e_if.cols);
    let mut d_it = Matrix::zeros(b, e_it.cols);
    let mut d_ao = Matrix::zeros(b, e_ao.cols);
    let mut d_af = Matrix::zeros(b, e_af.cols);

    mean_abs_diff_grad(&e_io.data, &batch.reference_ids.data, lam(w.lambda1), &mut d_io.data);
    mean_abs_diff_grad(&e_io.data, &e_if.data, lam(w.lambda4), &mut d_io.data);
    mean_abs_diff_grad(&e_if.data, &e_io.data, lam(w.lambda4), &mut d_if.data);
    mean_abs_diff_grad(&e_io.data, &e_it.data, lam(w.lambda6), &mut d_io.data);
    mean_abs_diff_grad(&e_it.data, &e_io.data, lam(w.lambda6), &mut d_it.data);
    mean_abs_diff_grad(&e_ao.data, &e_af.data, lam(w.lambda_attr), &mut d_ao.data);
    mean_abs_diff_grad(&e_af.data, &e_ao.data, lam(w.lambda_attr), &mut d_af.data);
    let rs = lam(w.lambda2) / T::lit(b as f64);
    for r in 0..b {
        redundancy_term_grad(e_io.row(r), e_ao.row(r), mode, rs, d_io.row_mut(r), d_ao.row_mut(r));
        redundancy_term_grad(e_if.row(r), e_af.row(r), mode, rs, d_if.row_mut(r), d_af.row_mut(r));
    }

    let mut d_recon = FeatureMap::zeros(recon.channels, recon.batch, recon.height, recon.width);
    mean_sq_diff_grad(&recon.data, &batch.originals.data, lam(w.lambda3), &mut d_recon.data);
    let mut d_traced = FeatureMap::zeros(traced.channels, traced.batch, traced.height, traced.width);
    mean_sq_diff_grad(&traced.data, &batch.originals.data, lam(w.lambda5), &mut d_traced.data);

    let mut grads = params.zeros_like();
    let none = || vec![None, None, None, None];

    // Identity re-extraction from the traced face feeds back into the image.
    let d_from_cycle = params
        .id_encoder
        .backward(&id_t, &id_t_tape, none(), &d_it, &mut grads.id_encoder, slope, true)
        .expect("input gradient requested");
    d_traced.add_assign(&d_from_cycle);

    let split = |d_fused: Vec<FeatureMap<T>>, id: &EncoderOutput<T>| {
        let mut d_id = Vec::with_capacity(4);
        let mut d_attr = Vec::with_capacity(4);
        for (d, level) in d_fused.into_iter().zip(&id.levels) {
            let (a, b) = d.split_channels(level.channels);
            d_id.push(Some(a));
            d_attr.push(Some(b));
        }
        (d_id, d_attr)
    };

    let d_fused_f = params
        .decoder
        .backward(&traced_tape, &d_traced, &mut grads.decoder, slope);
    let (d_id_f, d_at_f) = split(d_fused_f, &id_f);
    params
        .id_encoder
        .backward(&id_f, &id_f_tape, d_id_f, &d_if, &mut grads.id_encoder, slope, false);
    params
        .attr_encoder
        .backward(&at_f, &at_f_tape, d_at_f, &d_af, &mut grads.attr_encoder, slope, false);

    let d_fused_o = params
        .decoder
        .backward(&recon_tape, &d_recon, &mut grads.decoder, slope);
    let (d_id_o, d_at_o) = split(d_fused_o, &id_o);
    params
        .id_encoder
        .backward(&id_o, &id_o_tape, d_id_o, &d_io, &mut grads.id_encoder, slope, false);
    params
        .attr_encoder
        .backward(&at_o, &at_o_tape, d_at_o, &d_ao, &mut grads.attr_encoder, slope, false);

    Ok((breakdown, Some(grads)))
}
