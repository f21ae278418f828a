//! Encoder and decoder stacks with recorded forward passes for backprop.

use crate::layers::{
    flatten, leaky_relu_, leaky_relu_backward_, sigmoid_, sigmoid_backward_, unflatten, upsample2x,
    upsample2x_backward, Conv2d, Linear, Param,
};
use crate::tensor::{FeatureMap, Matrix, Scalar};

use super::ModelConfig;

/// Stage strides: three halvings followed by one resolution-preserving stage.
pub const STAGE_STRIDES: [usize; 4] = [2, 2, 2, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStage<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

/// Four convolutional stages followed by a flatten + fully connected head.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub stages: Vec<EncoderStage<T>>,
    pub head: Linear<T>,
}

pub struct EncoderOutput<T> {
    pub levels: Vec<FeatureMap<T>>,
    pub embedding: Matrix<T>,
}

pub struct EncoderTape<T> {
    input: FeatureMap<T>,
    mids: Vec<FeatureMap<T>>,
    flat: Matrix<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(prefix: &str, config: &ModelConfig, embed_dim: usize) -> Self {
        let mut in_ch = 3;
        let stages = config
            .channels
            .iter()
            .zip(STAGE_STRIDES)
            .enumerate()
            .map(|(i, (&ch, stride))| {
                let stage = EncoderStage {
                    conv1: Conv2d::new(&format!("{prefix}.stage{}.conv1", i + 1), in_ch, ch, stride),
                    conv2: Conv2d::new(&format!("{prefix}.stage{}.conv2", i + 1), ch, ch, 1),
                };
                in_ch = ch;
                stage
            })
            .collect();
        let deepest = config.level_schedule()[3];
        let flat = deepest.1 * deepest.0 * deepest.0;
        Self {
            stages,
            head: Linear::new(&format!("{prefix}.head"), flat, embed_dim),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend([&s.conv1.weight, &s.conv1.bias, &s.conv2.weight, &s.conv2.bias]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend([
                &mut s.conv1.weight,
                &mut s.conv1.bias,
                &mut s.conv2.weight,
                &mut s.conv2.bias,
            ]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    /// Forward pass; `check` reports the first stage (1-based) that produced a
    /// non-finite activation.
    pub fn forward(&self, x: &FeatureMap<T>, slope: T) -> Result<(EncoderOutput<T>, EncoderTape<T>), usize> {
        let mut levels = Vec::with_capacity(self.stages.len());
        let mut mids = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let input = if i == 0 { x } else { &levels[i - 1] };
            let mut mid = stage.conv1.forward(input);
            leaky_relu_(&mut mid, slope);
            let mut out = stage.conv2.forward(&mid);
            leaky_relu_(&mut out, slope);
            if !out.all_finite() || !mid.all_finite() {
                return Err(i + 1);
            }
            mids.push(mid);
            levels.push(out);
        }
        let flat = flatten(levels.last().expect("four stages"));
        let embedding = self.head.forward(&flat);
        if embedding.data.iter().any(|v| !v.is_finite()) {
            return Err(self.stages.len() + 1);
        }
        Ok((
            EncoderOutput { levels, embedding },
            EncoderTape {
                input: x.clone(),
                mids,
                flat,
            },
        ))
    }

    /// Backward pass. `d_levels[k]` is the gradient arriving at pyramid level
    /// `k` from the decoder (if any); `d_embedding` the gradient on the head.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        out: &EncoderOutput<T>,
        tape: &EncoderTape<T>,
        mut d_levels: Vec<Option<FeatureMap<T>>>,
        d_embedding: &Matrix<T>,
        grad: &mut Encoder<T>,
        slope: T,
        need_input_grad: bool,
    ) -> Option<FeatureMap<T>> {
        let last = self.stages.len() - 1;
        let d_flat = self.head.backward(&tape.flat, d_embedding, &mut grad.head);
        let mut d_out = unflatten(&d_flat, &out.levels[last]);
        if let Some(d) = d_levels[last].take() {
            d_out.add_assign(&d);
        }
        for k in (0..=last).rev() {
            let stage = &self.stages[k];
            let gstage = &mut grad.stages[k];
            leaky_relu_backward_(&mut d_out, &out.levels[k], slope);
            let mut d_mid = stage
                .conv2
                .backward(&tape.mids[k], &d_out, &mut gstage.conv2, true)
                .expect("input grad requested");
            leaky_relu_backward_(&mut d_mid, &tape.mids[k], slope);
            let input = if k == 0 { &tape.input } else { &out.levels[k - 1] };
            let want = k > 0 || need_input_grad;
            let d_in = stage.conv1.backward(input, &d_mid, &mut gstage.conv1, want);
            if k == 0 {
                return d_in;
            }
            d_out = d_in.expect("input grad requested");
            if let Some(d) = d_levels[k - 1].take() {
                d_out.add_assign(&d);
            }
        }
        None
    }
}

/// Shared decoder: one fusion block at the deepest scale, three doubling
/// blocks and a 3-channel projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub blocks: Vec<Conv2d<T>>,
}

pub struct DecoderTape<T> {
    inputs: Vec<FeatureMap<T>>,
    outputs: Vec<FeatureMap<T>>,
    deepest_channels: usize,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(prefix: &str, config: &ModelConfig) -> Self {
        let [c1, c2, c3, c4] = config.channels;
        let specs = [
            (2 * c4 + 2 * c3, c3),
            (c3, c2),
            (c2 + 2 * c2, c1),
            (c1 + 2 * c1, c1),
            (c1, 3),
        ];
        let blocks = specs
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| Conv2d::new(&format!("{prefix}.block{}.conv", i + 1), cin, cout, 1))
            .collect();
        Self { blocks }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.blocks.iter().flat_map(|b| [&b.weight, &b.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.weight, &mut b.bias])
            .collect()
    }

    /// `fused[k]` is the fused map of encoder level `k` (shallowest first).
    /// Shapes must already be validated by the caller.
    pub fn forward(&self, fused: &[FeatureMap<T>], slope: T) -> (FeatureMap<T>, DecoderTape<T>) {
        let mut inputs = Vec::with_capacity(5);
        let mut outputs = Vec::with_capacity(5);

        inputs.push(fused[3].concat_channels(&fused[2]));
        for k in 0..5 {
            if k > 0 {
                let prev: &FeatureMap<T> = &outputs[k - 1];
                let next = match k {
                    1 => upsample2x(prev),
                    2 => upsample2x(&prev.concat_channels(&fused[1])),
                    3 => upsample2x(&prev.concat_channels(&fused[0])),
                    _ => prev.clone(),
                };
                inputs.push(next);
            }
            let mut y = self.blocks[k].forward(&inputs[k]);
            if k < 4 {
                leaky_relu_(&mut y, slope);
            } else {
                sigmoid_(&mut y);
            }
            outputs.push(y);
        }
        let image = outputs[4].clone();
        (
            image,
            DecoderTape {
                inputs,
                outputs,
                deepest_channels: fused[3].channels,
            },
        )
    }

    /// Returns gradients for the four fused levels, shallowest first.
    pub fn backward(
        &self,
        tape: &DecoderTape<T>,
        d_image: &FeatureMap<T>,
        grad: &mut Decoder<T>,
        slope: T,
    ) -> Vec<FeatureMap<T>> {
        let mut d = d_image.clone();
        sigmoid_backward_(&mut d, &tape.outputs[4]);
        let mut d_fused: Vec<Option<FeatureMap<T>>> = vec![None, None, None, None];
        for k in (0..5).rev() {
            if k < 4 {
                leaky_relu_backward_(&mut d, &tape.outputs[k], slope);
            }
            let d_in = self.blocks[k]
                .backward(&tape.inputs[k], &d, &mut grad.blocks[k], true)
                .expect("input grad requested");
            d = match k {
                4 => d_in,
                3 | 2 => {
                    let cat = upsample2x_backward(&d_in);
                    let skip = if k == 3 { 0 } else { 1 };
                    let (prev, d_skip) = cat.split_channels(tape.outputs[k - 1].channels);
                    d_fused[skip] = Some(d_skip);
                    prev
                }
                1 => upsample2x_backward(&d_in),
                _ => {
                    let (d4, d3) = d_in.split_channels(tape.deepest_channels);
                    d_fused[3] = Some(d4);
                    d_fused[2] = Some(d3);
                    break;
                }
            };
        }
        d_fused
            .into_iter()
            .map(|d| d.expect("every level receives a gradient"))
            .collect()
    }
}
