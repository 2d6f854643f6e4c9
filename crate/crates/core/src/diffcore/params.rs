use std::collections::{BTreeMap, HashMap};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors, their Adam moments, and integer buffers (e.g.
/// fixed flow permutations) that travel with checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    index: HashMap<String, usize>,
    step: u64,
    buffers: BTreeMap<String, Vec<i64>>,
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn add_scaled(&mut self, pid: ParamId, g: &Tensor, scale: f64) {
        let dst = &mut self.grads[pid.0];
        assert_eq!(dst.shape(), g.shape(), "gradient shape mismatch");
        for (d, v) in dst.data_mut().iter_mut().zip(g.data()) {
            *d += scale * v;
        }
    }

    pub fn get(&self, pid: ParamId) -> &Tensor {
        &self.grads[pid.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn merge(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.first_moment.push(Tensor::zeros(value.rows(), value.cols()));
        self.second_moment.push(Tensor::zeros(value.rows(), value.cols()));
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, data: Vec<i64>) {
        self.buffers.insert(name.into(), data);
    }

    pub fn buffer(&self, name: &str) -> Option<&[i64]> {
        self.buffers.get(name).map(Vec::as_slice)
    }

    pub fn buffers(&self) -> &BTreeMap<String, Vec<i64>> {
        &self.buffers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, pid: ParamId) -> &str {
        &self.names[pid.0]
    }

    pub fn value(&self, pid: ParamId) -> &Tensor {
        &self.values[pid.0]
    }

    pub fn value_mut(&mut self, pid: ParamId) -> &mut Tensor {
        &mut self.values[pid.0]
    }

    pub fn moments(&self, pid: ParamId) -> (&Tensor, &Tensor) {
        (&self.first_moment[pid.0], &self.second_moment[pid.0])
    }

    pub(crate) fn restore(
        &mut self,
        name: &str,
        value: Tensor,
        m: Option<Tensor>,
        v: Option<Tensor>,
    ) -> Result<()> {
        let pid = self.id(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let cur = &self.values[pid.0];
        if cur.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, checkpoint has {:?}",
                cur.shape(),
                value.shape()
            )));
        }
        self.values[pid.0] = value;
        if let Some(m) = m {
            self.first_moment[pid.0] = m;
        }
        if let Some(v) = v {
            self.second_moment[pid.0] = v;
        }
        Ok(())
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads { grads: self.values.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect() }
    }

    /// One bias-corrected Adam update with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn adam_step(&mut self, grads: &ParamGrads, lr: f64) -> Result<()> {
        if grads.grads.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.grads.len(),
                self.values.len()
            )));
        }
        for (g, p) in grads.grads.iter().zip(&self.values) {
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..self.values.len() {
            let g = grads.grads[i].data();
            let m = self.first_moment[i].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            }
            let v = self.second_moment[i].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let (m, v) = (self.first_moment[i].data(), self.second_moment[i].data());
            for ((p, mi), vi) in self.values[i].data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Standalone Adam state over a flat vector, used by per-dataset optimizers.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-uniform tensor of shape `fan_in x fan_out`.
pub fn xavier_init(fan_in: usize, fan_out: usize, rng: &mut StreamRng) -> Tensor {
    let b = xavier_bound(fan_in, fan_out);
    Tensor::from_vec(fan_in, fan_out, (0..fan_in * fan_out).map(|_| rng.uniform(-b, b)).collect())
}

/// Reparameterized Gaussian draw `θ = μ + σ ⊙ ε`; returns `(θ, ε)`.
pub fn reparam_gaussian(mu: &[f64], sigma: &[f64], rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
    let eps = rng.normal_vec(mu.len());
    let theta = mu.iter().zip(sigma).zip(&eps).map(|((m, s), e)| m + s * e).collect();
    (theta, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adam_first_step() {
        let mut s = ParamStore::new();
        let p = s.add("w", Tensor::zeros(2, 2));
        let mut g = s.zero_grads();
        g.add_scaled(p, &Tensor::filled(2, 2, 1.0), 1.0);
        s.adam_step(&g, 1e-4).unwrap();
        for v in s.value(p).data() {
            assert_abs_diff_eq!(*v, -1e-4 / (1.0 + 1e-8), epsilon = 1e-18);
        }
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut s = ParamStore::new();
        let p = s.add("w", Tensor::row_vector(vec![0.5, -0.25]));
        s.adam_step(&s.zero_grads(), 1e-3).unwrap();
        assert_eq!(s.value(p).data(), &[0.5, -0.25]);
        assert_eq!(s.step(), 1);
        let mut g = s.zero_grads();
        g.add_scaled(p, &Tensor::row_vector(vec![3.0, -1.0]), 1.0);
        s.adam_step(&g, 0.0).unwrap();
        assert_eq!(s.value(p).data(), &[0.5, -0.25]);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(1, 2));
        let other = ParamStore::new().zero_grads();
        assert!(matches!(s.adam_step(&other, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn xavier_bounds_and_mean() {
        assert_abs_diff_eq!(xavier_bound(1, 1), 3f64.sqrt(), epsilon = 1e-15);
        let mut rng = StreamRng::from_seed(4);
        let t = xavier_init(100, 100, &mut rng);
        let b = xavier_bound(100, 100);
        assert!(t.data().iter().all(|v| v.abs() <= b));
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 4.0 * b / (3.0 * t.len() as f64).sqrt());
    }

    #[test]
    fn reparam_properties() {
        let mut rng = StreamRng::from_seed(2);
        let (th, _) = reparam_gaussian(&[1.5, -2.0], &[0.0, 0.0], &mut rng);
        assert_eq!(th, vec![1.5, -2.0]);
        let n = 10_000;
        let mu = vec![0.0; n];
        let sd = vec![2.0; n];
        let (th, eps) = reparam_gaussian(&mu, &sd, &mut rng);
        for (t, e) in th.iter().zip(&eps) {
            assert_eq!(*t, 2.0 * e);
        }
        let m = th.iter().sum::<f64>() / n as f64;
        let var = th.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 2.0).abs() < 0.2);
    }
}
