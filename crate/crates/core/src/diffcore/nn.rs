//! Small layer building blocks over [`Graph`].

use super::graph::{Graph, Var};
use super::params::{xavier_init, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::models::Activation;
use crate::rng::StreamRng;

/// `x · W + b` with `W` stored `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut StreamRng) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_init(input, output, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, output));
        Self { weight, bias, input, output }
    }

    /// Weight and bias start at zero, so the layer initially outputs zeros.
    pub fn zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(input, output));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, output));
        Self { weight, bias, input, output }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

pub fn activate(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// `hidden_layers` activated layers of width `hidden` followed by a linear
/// output layer; zero hidden layers gives a single linear map.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        hidden_layers: usize,
        output: usize,
        act: Activation,
        rng: &mut StreamRng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut width = input;
        for l in 0..hidden_layers {
            layers.push(Linear::new(store, &format!("{name}.{l}"), width, hidden, rng));
            width = hidden;
        }
        layers.push(Linear::new(store, &format!("{name}.{hidden_layers}"), width, output, rng));
        Self { layers, act }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i < last {
                h = activate(g, h, self.act);
            }
        }
        h
    }

    pub fn output(&self) -> usize {
        self.layers.last().expect("at least one layer").output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::filled(1, width, 1.0));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, width));
        Self { gain, bias, width }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm_rows(x, Self::EPS);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let scaled = g.mul_row(n, gain);
        g.add_row(scaled, bias)
    }

    pub fn param_count(&self) -> usize {
        2 * self.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_shapes_and_counts() {
        let mut store = ParamStore::new();
        let mut rng = StreamRng::from_seed(0);
        let mlp = Mlp::new(&mut store, "m", 3, 8, 2, 4, Activation::Relu, &mut rng);
        assert_eq!(mlp.param_count(), 3 * 8 + 8 + 8 * 8 + 8 + 8 * 4 + 4);
        assert_eq!(store.scalar_count(), mlp.param_count());
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::filled(5, 3, 0.1));
        let y = mlp.forward(&mut g, x);
        assert_eq!(g.shape(y), (5, 4));
    }

    #[test]
    fn zeroed_linear_outputs_zero() {
        let mut store = ParamStore::new();
        let lin = Linear::zeroed(&mut store, "z", 2, 3);
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::filled(4, 2, 7.0));
        let y = lin.forward(&mut g, x);
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }
}
