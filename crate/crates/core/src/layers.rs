//! Layer primitives with hand-written backward passes.
//!
//! Every layer operates on a whole batch at once. Backward functions take the
//! activations recorded during the forward pass and accumulate parameter
//! gradients into a structurally identical gradient container.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{matmul, FeatureMap, Matrix, Scalar};

/// A named weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![T::zero(); len],
        }
    }

    /// Kaiming-normal fill: `std = gain / sqrt(fan_in)` with the gain of a
    /// leaky rectifier of negative slope `slope`.
    pub fn kaiming_normal<R: Rng>(&mut self, fan_in: usize, slope: f64, rng: &mut R) {
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let std = gain / (fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in &mut self.data {
            *v = T::lit(dist.sample(rng));
        }
    }

    pub fn zero_(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }
}

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// 3x3 convolution with zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            weight: Param::zeros(
                format!("{prefix}.weight"),
                vec![out_channels, in_channels, KERNEL, KERNEL],
            ),
            bias: Param::zeros(format!("{prefix}.bias"), vec![out_channels]),
            in_channels,
            out_channels,
            stride,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * TAPS
    }

    pub fn output_extent(&self, extent: usize) -> usize {
        (extent - 1) / self.stride + 1
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        assert_eq!(x.channels, self.in_channels, "{}: channel mismatch", self.weight.name);
        let ho = self.output_extent(x.height);
        let wo = self.output_extent(x.width);
        let n = x.batch * ho * wo;
        let cols = im2col(x, self.stride, ho, wo);
        let mut y = FeatureMap::zeros(self.out_channels, x.batch, ho, wo);
        for (o, row) in y.data.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias.data[o]);
        }
        matmul(
            &self.weight.data,
            self.out_channels,
            self.fan_in(),
            false,
            &cols,
            self.fan_in(),
            n,
            false,
            &mut y.data,
            true,
        );
        y
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input
    /// gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        x: &FeatureMap<T>,
        dy: &FeatureMap<T>,
        grad: &mut Conv2d<T>,
        need_input_grad: bool,
    ) -> Option<FeatureMap<T>> {
        let (ho, wo) = (dy.height, dy.width);
        let n = x.batch * ho * wo;
        let cols = im2col(x, self.stride, ho, wo);
        matmul(
            &dy.data,
            self.out_channels,
            n,
            false,
            &cols,
            self.fan_in(),
            n,
            true,
            &mut grad.weight.data,
            true,
        );
        for (o, row) in dy.data.chunks(n).enumerate() {
            let s: T = row.iter().copied().sum();
            grad.bias.data[o] += s;
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); self.fan_in() * n];
        matmul(
            &self.weight.data,
            self.out_channels,
            self.fan_in(),
            true,
            &dy.data,
            self.out_channels,
            n,
            false,
            &mut dcols,
            false,
        );
        Some(col2im(&dcols, x, self.stride, ho, wo))
    }
}

/// Unfolds 3x3 neighbourhoods into a `[C*9, B*Ho*Wo]` matrix.
fn im2col<T: Scalar>(x: &FeatureMap<T>, stride: usize, ho: usize, wo: usize) -> Vec<T> {
    let n = x.batch * ho * wo;
    let mut cols = vec![T::zero(); x.channels * TAPS * n];
    let (h, w) = (x.height as isize, x.width as isize);
    for c in 0..x.channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * n;
                for b in 0..x.batch {
                    let src = &x.data[x.idx(c, b, 0, 0)..x.idx(c, b, 0, 0) + x.plane()];
                    let dst = &mut cols[row + b * ho * wo..row + (b + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src_row = &src[iy as usize * x.width..(iy as usize + 1) * x.width];
                        let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
fn col2im<T: Scalar>(dcols: &[T], like: &FeatureMap<T>, stride: usize, ho: usize, wo: usize) -> FeatureMap<T> {
    let n = like.batch * ho * wo;
    let mut dx = FeatureMap::zeros(like.channels, like.batch, like.height, like.width);
    let (h, w) = (like.height as isize, like.width as isize);
    let plane = dx.plane();
    for c in 0..like.channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * n;
                for b in 0..like.batch {
                    let base = dx.idx(c, b, 0, 0);
                    let dst = &mut dx.data[base..base + plane];
                    let src = &dcols[row + b * ho * wo..row + (b + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * like.width..(iy as usize + 1) * like.width];
                        for (ox, s) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w {
                                dst_row[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Fully connected layer `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_features: usize,
    pub out_features: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(prefix: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{prefix}.weight"), vec![out_features, in_features]),
            bias: Param::zeros(format!("{prefix}.bias"), vec![out_features]),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.cols, self.in_features, "{}: feature mismatch", self.weight.name);
        let mut y = Matrix::zeros(x.rows, self.out_features);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.data);
        }
        matmul(
            &x.data,
            x.rows,
            x.cols,
            false,
            &self.weight.data,
            self.out_features,
            self.in_features,
            true,
            &mut y.data,
            true,
        );
        y
    }

    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, grad: &mut Linear<T>) -> Matrix<T> {
        matmul(
            &dy.data,
            dy.rows,
            dy.cols,
            true,
            &x.data,
            x.rows,
            x.cols,
            false,
            &mut grad.weight.data,
            true,
        );
        for r in 0..dy.rows {
            for (g, d) in grad.bias.data.iter_mut().zip(dy.row(r)) {
                *g += *d;
            }
        }
        let mut dx = Matrix::zeros(x.rows, x.cols);
        matmul(
            &dy.data,
            dy.rows,
            dy.cols,
            false,
            &self.weight.data,
            self.out_features,
            self.in_features,
            false,
            &mut dx.data,
            false,
        );
        dx
    }
}

pub fn leaky_relu_<T: Scalar>(x: &mut FeatureMap<T>, slope: T) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Backward through a leaky rectifier given its output; exact for `slope > 0`
/// since output and input share a sign.
pub fn leaky_relu_backward_<T: Scalar>(dy: &mut FeatureMap<T>, y: &FeatureMap<T>, slope: T) {
    for (d, v) in dy.data.iter_mut().zip(&y.data) {
        if *v < T::zero() {
            *d *= slope;
        }
    }
}

pub fn sigmoid_<T: Scalar>(x: &mut FeatureMap<T>) {
    for v in &mut x.data {
        *v = T::one() / (T::one() + (-*v).exp());
    }
}

pub fn sigmoid_backward_<T: Scalar>(dy: &mut FeatureMap<T>, y: &FeatureMap<T>) {
    for (d, v) in dy.data.iter_mut().zip(&y.data) {
        *d = *d * *v * (T::one() - *v);
    }
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample2x<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let mut y = FeatureMap::zeros(x.channels, x.batch, x.height * 2, x.width * 2);
    let (w, w2) = (x.width, x.width * 2);
    for (src, dst) in x.data.chunks(x.plane()).zip(y.data.chunks_mut(4 * x.plane())) {
        for (iy, row) in src.chunks(w).enumerate() {
            for (ix, v) in row.iter().enumerate() {
                let o = 2 * iy * w2 + 2 * ix;
                dst[o] = *v;
                dst[o + 1] = *v;
                dst[o + w2] = *v;
                dst[o + w2 + 1] = *v;
            }
        }
    }
    y
}

/// Adjoint of [`upsample2x`].
pub fn upsample2x_backward<T: Scalar>(dy: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = FeatureMap::zeros(dy.channels, dy.batch, h, w);
    let w2 = dy.width;
    let plane = h * w;
    for (dst, src) in dx.data.chunks_mut(plane).zip(dy.data.chunks(4 * plane)) {
        for iy in 0..h {
            for ix in 0..w {
                let o = 2 * iy * w2 + 2 * ix;
                dst[iy * w + ix] = src[o] + src[o + 1] + src[o + w2] + src[o + w2 + 1];
            }
        }
    }
    dx
}

/// Flattens each batch element to a `C*H*W` row (channel-major within the row).
pub fn flatten<T: Scalar>(x: &FeatureMap<T>) -> Matrix<T> {
    let plane = x.plane();
    let mut m = Matrix::zeros(x.batch, x.channels * plane);
    for c in 0..x.channels {
        for b in 0..x.batch {
            let src = &x.data[x.idx(c, b, 0, 0)..x.idx(c, b, 0, 0) + plane];
            m.row_mut(b)[c * plane..(c + 1) * plane].copy_from_slice(src);
        }
    }
    m
}

pub fn unflatten<T: Scalar>(m: &Matrix<T>, like: &FeatureMap<T>) -> FeatureMap<T> {
    let plane = like.plane();
    let mut x = FeatureMap::zeros(like.channels, like.batch, like.height, like.width);
    for c in 0..like.channels {
        for b in 0..like.batch {
            let base = x.idx(c, b, 0, 0);
            x.data[base..base + plane].copy_from_slice(&m.row(b)[c * plane..(c + 1) * plane]);
        }
    }
    x
}
