use crate::model::ModelParams;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update of a flat parameter slice at step `t`
/// (1-based).
pub fn adam_update<T: Scalar>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, h: &AdamHyper) {
    let b1 = T::lit(h.beta1);
    let b2 = T::lit(h.beta2);
    let one = T::one();
    let c1 = T::lit(1.0 - h.beta1.powf(t as f64));
    let c2 = T::lit(1.0 - h.beta2.powf(t as f64));
    let lr = T::lit(h.learning_rate);
    let eps = T::lit(h.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let step = lr * m_hat / (v_hat.sqrt() + eps);
        // skipping zero steps keeps the sign of -0.0 parameters
        if step != T::zero() {
            param[i] -= step;
        }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub first_moment: ModelParams<T>,
    pub second_moment: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, h: &AdamHyper) {
        self.step += 1;
        let t = self.step;
        for (((p, g), m), v) in params
            .params_mut()
            .into_iter()
            .zip(grads.params())
            .zip(self.first_moment.params_mut())
            .zip(self.second_moment.params_mut())
        {
            adam_update(&mut p.data, &g.data, &mut m.data, &mut v.data, t, h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_steps_on_a_quadratic_match_closed_form() {
        // f(x) = (x - 3)^2, gradient 2(x - 3).
        let h = AdamHyper {
            learning_rate: 0.01,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut x = [0.0f64];
        let (mut m, mut v) = ([0.0f64], [0.0f64]);
        let g0 = 2.0 * (x[0] - 3.0);
        adam_update(&mut x, &[g0], &mut m, &mut v, 1, &h);
        // Bias-corrected first step moves by lr * g / (|g| + eps).
        let expect1 = 0.0 - 0.01 * g0 / (g0.abs() + 1e-8);
        assert!((x[0] - expect1).abs() < 1e-12);

        let g1 = 2.0 * (x[0] - 3.0);
        let m2 = 0.5 * (0.5 * g0) + 0.5 * g1;
        let v2 = 0.999 * (0.001 * g0 * g0) + 0.001 * g1 * g1;
        let expect2 = expect1 - 0.01 * (m2 / (1.0 - 0.25)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        adam_update(&mut x, &[g1], &mut m, &mut v, 2, &h);
        assert!((x[0] - expect2).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise() {
        let h = AdamHyper {
            learning_rate: 0.0,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut x = [1.25f32, -0.0, 7e-12];
        let before = x;
        let (mut m, mut v) = ([0.0f32; 3], [0.0f32; 3]);
        adam_update(&mut x, &[0.3, -2.0, 5.0], &mut m, &mut v, 1, &h);
        assert_eq!(x.map(f32::to_bits), before.map(f32::to_bits));
    }
}
