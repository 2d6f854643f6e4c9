//! The small fully-connected network used as `f_theta` by the NLR/NLC families.
//!
//! Parameters are read straight out of the flat θ vector, layer-major with
//! weights (`[out, in]`, row-major) before biases.

use super::layout::LayoutBuilder;
use super::Activation;

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    act: Activation,
}

pub struct MlpTrace {
    /// Layer inputs; `inputs[0]` is unused (the raw features are passed separately).
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, layers: usize, output: usize, act: Activation) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers));
        dims.push(output);
        Self { dims, act }
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layout(&self, mut b: LayoutBuilder) -> LayoutBuilder {
        for (l, w) in self.dims.windows(2).enumerate() {
            let feature_axis = if l == 0 { Some(1) } else { None };
            b = b.push(format!("layer{l}.weight"), &[w[1], w[0]], feature_axis);
            b = b.push(format!("layer{l}.bias"), &[w[1]], None);
        }
        b
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let wo = off;
                let bo = off + w[0] * w[1];
                off = bo + w[1];
                (wo, bo)
            })
            .collect()
    }

    fn activate(&self, z: f64) -> f64 {
        match self.act {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn activate_grad(&self, z: f64) -> f64 {
        match self.act {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    /// Evaluates the network on `x`, reading only the `active` input features.
    pub fn forward(&self, theta: &[f64], x: &[f64], active: &[usize]) -> MlpTrace {
        let offs = self.offsets();
        let n_layers = offs.len();
        let mut inputs = vec![Vec::new()];
        let mut pre = Vec::with_capacity(n_layers);
        let mut current: Vec<f64> = Vec::new();
        for (l, &(wo, bo)) in offs.iter().enumerate() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let mut z = theta[bo..bo + fan_out].to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &theta[wo + o * fan_in..wo + (o + 1) * fan_in];
                if l == 0 {
                    for &i in active {
                        *zo += row[i] * x[i];
                    }
                } else {
                    for (w, a) in row.iter().zip(&current) {
                        *zo += w * a;
                    }
                }
            }
            if l + 1 < n_layers {
                current = z.iter().map(|v| self.activate(*v)).collect();
                inputs.push(current.clone());
            } else {
                current = z.clone();
            }
            pre.push(z);
        }
        MlpTrace { inputs, pre, output: current }
    }

    /// Accumulates `d(dout . f(x)) / d theta` into `grad`.
    pub fn backward(
        &self,
        theta: &[f64],
        trace: &MlpTrace,
        x: &[f64],
        active: &[usize],
        dout: &[f64],
        grad: &mut [f64],
    ) {
        let offs = self.offsets();
        let mut delta = dout.to_vec();
        for l in (0..offs.len()).rev() {
            let (wo, bo) = offs[l];
            let fan_in = self.dims[l];
            for (o, d) in delta.iter().enumerate() {
                grad[bo + o] += d;
                let g = &mut grad[wo + o * fan_in..wo + (o + 1) * fan_in];
                if l == 0 {
                    for &i in active {
                        g[i] += d * x[i];
                    }
                } else {
                    for (gi, a) in g.iter_mut().zip(&trace.inputs[l]) {
                        *gi += d * a;
                    }
                }
            }
            if l > 0 {
                let mut next = vec![0.0; fan_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &theta[wo + o * fan_in..wo + (o + 1) * fan_in];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                for (n, z) in next.iter_mut().zip(&trace.pre[l - 1]) {
                    *n *= self.activate_grad(*z);
                }
                delta = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nlr_one_layer_count() {
        let m = Mlp::new(1, 32, 1, 1, Activation::Relu);
        assert_eq!(m.param_count(), 97);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = Mlp::new(3, 4, 2, 2, Activation::Tanh);
        let n = m.param_count();
        let theta: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let x = [0.3, -1.2, 0.7];
        let active = [0, 1, 2];
        let dout = [0.6, -1.1];
        let f = |t: &[f64]| {
            let o = m.forward(t, &x, &active).output;
            o[0] * dout[0] + o[1] * dout[1]
        };
        let trace = m.forward(&theta, &x, &active);
        let mut g = vec![0.0; n];
        m.backward(&theta, &trace, &x, &active, &dout, &mut g);
        let h = 1e-6;
        for i in 0..n {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (f(&tp) - f(&tm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g[i]);
        }
    }
}
