//! Likelihood families behind a common trait.
//!
//! Every family shares the standard-normal prior; they differ in how θ is laid
//! out, how observations are scored, and how synthetic data is drawn.

use std::f64::consts::PI;

use super::dataset::{Dataset, Targets};
use super::layout::ThetaLayout;
use super::mlp::Mlp;
use super::{ModelSpec, Prediction, XDist};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kind of target a family observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    None,
    Real,
    Class(usize),
}

pub trait LikelihoodModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn layout(&self) -> ThetaLayout;

    fn target_kind(&self) -> TargetKind;

    /// Log-likelihood of each active row, in row order.
    fn observation_terms(&self, theta: &[f64], data: &Dataset) -> Vec<f64>;

    /// Gradient of the summed log-likelihood with respect to θ.
    fn grad_log_likelihood(&self, theta: &[f64], data: &Dataset) -> Vec<f64>;

    /// Fills active rows of `data` (x for unsupervised families, y otherwise).
    fn simulate(&self, theta: &[f64], data: &mut Dataset, x_dist: XDist, rng: &mut StreamRng);

    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Prediction>;
}

/// Numerically stable `log(mean(exp(v)))`; exact when all entries agree.
fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|a| (a - max).exp()).sum();
    max + (s / v.len() as f64).ln()
}

fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|a| (a - max).exp()).sum();
    logits[idx] - max - s.ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if *a > v[best] {
            best = i;
        }
    }
    best
}

fn draw_x(data: &mut Dataset, i: usize, active: &[usize], x_dist: XDist, rng: &mut StreamRng) {
    for &j in active {
        data.x[i * data.d_max + j] = match x_dist {
            XDist::StdNormal => rng.normal(),
            XDist::UniformPm1 => rng.uniform(-1.0, 1.0),
        };
    }
}

fn set_real(data: &mut Dataset, i: usize, v: f64) {
    if let Targets::Real(y) = &mut data.y {
        y[i] = v;
    }
}

fn set_class(data: &mut Dataset, i: usize, c: usize) {
    if let Targets::Class(y) = &mut data.y {
        y[i] = c;
    }
}

pub struct GaussianMean {
    d: usize,
}

impl LikelihoodModel for GaussianMean {
    fn name(&self) -> &'static str {
        "gm"
    }

    fn layout(&self) -> ThetaLayout {
        ThetaLayout::builder().push("mu", &[self.d], Some(0)).build()
    }

    fn target_kind(&self) -> TargetKind {
        TargetKind::None
    }

    fn observation_terms(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let norm = 0.5 * active.len() as f64 * LN_2PI;
        data.active_rows()
            .map(|i| {
                let row = data.row(i);
                let sq: f64 = active.iter().map(|&j| (row[j] - theta[j]).powi(2)).sum();
                -0.5 * sq - norm
            })
            .collect()
    }

    fn grad_log_likelihood(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let mut g = vec![0.0; theta.len()];
        for i in data.active_rows() {
            let row = data.row(i);
            for &j in &active {
                g[j] += row[j] - theta[j];
            }
        }
        g
    }

    fn simulate(&self, theta: &[f64], data: &mut Dataset, _x: XDist, rng: &mut StreamRng) {
        let active = data.active_features();
        let rows: Vec<usize> = data.active_rows().collect();
        for i in rows {
            for &j in &active {
                data.x[i * data.d_max + j] = theta[j] + rng.normal();
            }
        }
    }

    fn predict(&self, _theta: &[f64], _x: &[f64]) -> Result<Prediction> {
        Err(Error::NotPredictive("gm"))
    }
}

pub struct GaussianMixture {
    d: usize,
    k: usize,
}

impl GaussianMixture {
    fn component_terms(&self, theta: &[f64], row: &[f64], active: &[usize]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let mu = &theta[c * self.d..(c + 1) * self.d];
                -0.5 * active.iter().map(|&j| (row[j] - mu[j]).powi(2)).sum::<f64>()
            })
            .collect()
    }
}

impl LikelihoodModel for GaussianMixture {
    fn name(&self) -> &'static str {
        "gmm"
    }

    fn layout(&self) -> ThetaLayout {
        let mut b = ThetaLayout::builder();
        for c in 0..self.k {
            b = b.push(format!("mu_{}", c + 1), &[self.d], Some(0));
        }
        b.build()
    }

    fn target_kind(&self) -> TargetKind {
        TargetKind::None
    }

    fn observation_terms(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let norm = 0.5 * active.len() as f64 * LN_2PI;
        data.active_rows()
            .map(|i| log_mean_exp(&self.component_terms(theta, data.row(i), &active)) - norm)
            .collect()
    }

    fn grad_log_likelihood(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let mut g = vec![0.0; theta.len()];
        for i in data.active_rows() {
            let row = data.row(i);
            let resp = softmax(&self.component_terms(theta, row, &active));
            for (c, r) in resp.iter().enumerate() {
                for &j in &active {
                    g[c * self.d + j] += r * (row[j] - theta[c * self.d + j]);
                }
            }
        }
        g
    }

    fn simulate(&self, theta: &[f64], data: &mut Dataset, _x: XDist, rng: &mut StreamRng) {
        let active = data.active_features();
        let rows: Vec<usize> = data.active_rows().collect();
        for i in rows {
            let c = rng.below(self.k);
            for &j in &active {
                data.x[i * data.d_max + j] = theta[c * self.d + j] + rng.normal();
            }
        }
    }

    fn predict(&self, _theta: &[f64], _x: &[f64]) -> Result<Prediction> {
        Err(Error::NotPredictive("gmm"))
    }
}

pub struct LinearRegression {
    d: usize,
    sigma2: f64,
}

impl LinearRegression {
    fn mean(&self, theta: &[f64], row: &[f64], active: &[usize]) -> f64 {
        let mut f = 0.0;
        for &j in active {
            f += theta[j] * row[j];
        }
        f + theta[self.d]
    }
}

impl LikelihoodModel for LinearRegression {
    fn name(&self) -> &'static str {
        "lr"
    }

    fn layout(&self) -> ThetaLayout {
        ThetaLayout::builder().push("w", &[self.d], Some(0)).push("b", &[1], None).build()
    }

    fn target_kind(&self) -> TargetKind {
        TargetKind::Real
    }

    fn observation_terms(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let norm = -0.5 * (2.0 * PI * self.sigma2).ln();
        data.active_rows()
            .map(|i| {
                let r = data.real_target(i).unwrap_or(0.0) - self.mean(theta, data.row(i), &active);
                norm - r * r / (2.0 * self.sigma2)
            })
            .collect()
    }

    fn grad_log_likelihood(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let mut g = vec![0.0; theta.len()];
        for i in data.active_rows() {
            let row = data.row(i);
            let r = (data.real_target(i).unwrap_or(0.0) - self.mean(theta, row, &active)) / self.sigma2;
            for &j in &active {
                g[j] += r * row[j];
            }
            g[self.d] += r;
        }
        g
    }

    fn simulate(&self, theta: &[f64], data: &mut Dataset, x_dist: XDist, rng: &mut StreamRng) {
        let active = data.active_features();
        let rows: Vec<usize> = data.active_rows().collect();
        for i in rows {
            draw_x(data, i, &active, x_dist, rng);
            let f = self.mean(theta, data.row(i), &active);
            let y = f + self.sigma2.sqrt() * rng.normal();
            set_real(data, i, y);
        }
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Prediction> {
        let all: Vec<usize> = (0..self.d).collect();
        Ok(Prediction::Real(self.mean(theta, x, &all)))
    }
}

pub struct LinearClassification {
    d: usize,
    classes: usize,
    tau: f64,
}

impl LinearClassification {
    fn logits(&self, theta: &[f64], row: &[f64], active: &[usize]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let w = &theta[c * self.d..(c + 1) * self.d];
                let mut s = 0.0;
                for &j in active {
                    s += w[j] * row[j];
                }
                s
            })
            .collect()
    }
}

impl LikelihoodModel for LinearClassification {
    fn name(&self) -> &'static str {
        "lc"
    }

    fn layout(&self) -> ThetaLayout {
        ThetaLayout::builder().push("W", &[self.classes, self.d], Some(1)).build()
    }

    fn target_kind(&self) -> TargetKind {
        TargetKind::Class(self.classes)
    }

    fn observation_terms(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        data.active_rows()
            .map(|i| {
                let l: Vec<f64> =
                    self.logits(theta, data.row(i), &active).iter().map(|v| v / self.tau).collect();
                log_softmax_at(&l, data.class_target(i).unwrap_or(0))
            })
            .collect()
    }

    fn grad_log_likelihood(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let mut g = vec![0.0; theta.len()];
        for i in data.active_rows() {
            let row = data.row(i);
            let l: Vec<f64> = self.logits(theta, row, &active).iter().map(|v| v / self.tau).collect();
            let p = softmax(&l);
            let y = data.class_target(i).unwrap_or(0);
            for (c, pc) in p.iter().enumerate() {
                let d = ((c == y) as u8 as f64 - pc) / self.tau;
                for &j in &active {
                    g[c * self.d + j] += d * row[j];
                }
            }
        }
        g
    }

    fn simulate(&self, theta: &[f64], data: &mut Dataset, x_dist: XDist, rng: &mut StreamRng) {
        let active = data.active_features();
        let rows: Vec<usize> = data.active_rows().collect();
        for i in rows {
            draw_x(data, i, &active, x_dist, rng);
            let l: Vec<f64> =
                self.logits(theta, data.row(i), &active).iter().map(|v| v / self.tau).collect();
            let c = rng.categorical_logits(&l);
            set_class(data, i, c);
        }
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Prediction> {
        let all: Vec<usize> = (0..self.d).collect();
        Ok(Prediction::Class(argmax(&self.logits(theta, x, &all))))
    }
}

pub struct MlpRegression {
    mlp: Mlp,
    d: usize,
    sigma2: f64,
}

impl LikelihoodModel for MlpRegression {
    fn name(&self) -> &'static str {
        "nlr"
    }

    fn layout(&self) -> ThetaLayout {
        self.mlp.layout(ThetaLayout::builder()).build()
    }

    fn target_kind(&self) -> TargetKind {
        TargetKind::Real
    }

    fn observation_terms(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let norm = -0.5 * (2.0 * PI * self.sigma2).ln();
        data.active_rows()
            .map(|i| {
                let f = self.mlp.forward(theta, data.row(i), &active).output[0];
                let r = data.real_target(i).unwrap_or(0.0) - f;
                norm - r * r / (2.0 * self.sigma2)
            })
            .collect()
    }

    fn grad_log_likelihood(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let mut g = vec![0.0; theta.len()];
        for i in data.active_rows() {
            let row = data.row(i);
            let trace = self.mlp.forward(theta, row, &active);
            let r = (data.real_target(i).unwrap_or(0.0) - trace.output[0]) / self.sigma2;
            self.mlp.backward(theta, &trace, row, &active, &[r], &mut g);
        }
        g
    }

    fn simulate(&self, theta: &[f64], data: &mut Dataset, x_dist: XDist, rng: &mut StreamRng) {
        let active = data.active_features();
        let rows: Vec<usize> = data.active_rows().collect();
        for i in rows {
            draw_x(data, i, &active, x_dist, rng);
            let f = self.mlp.forward(theta, data.row(i), &active).output[0];
            let y = f + self.sigma2.sqrt() * rng.normal();
            set_real(data, i, y);
        }
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Prediction> {
        let all: Vec<usize> = (0..self.d).collect();
        Ok(Prediction::Real(self.mlp.forward(theta, x, &all).output[0]))
    }
}

pub struct MlpClassification {
    mlp: Mlp,
    d: usize,
    classes: usize,
    tau: f64,
}

impl LikelihoodModel for MlpClassification {
    fn name(&self) -> &'static str {
        "nlc"
    }

    fn layout(&self) -> ThetaLayout {
        self.mlp.layout(ThetaLayout::builder()).build()
    }

    fn target_kind(&self) -> TargetKind {
        TargetKind::Class(self.classes)
    }

    fn observation_terms(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        data.active_rows()
            .map(|i| {
                let out = self.mlp.forward(theta, data.row(i), &active).output;
                let l: Vec<f64> = out.iter().map(|v| v / self.tau).collect();
                log_softmax_at(&l, data.class_target(i).unwrap_or(0))
            })
            .collect()
    }

    fn grad_log_likelihood(&self, theta: &[f64], data: &Dataset) -> Vec<f64> {
        let active = data.active_features();
        let mut g = vec![0.0; theta.len()];
        for i in data.active_rows() {
            let row = data.row(i);
            let trace = self.mlp.forward(theta, row, &active);
            let l: Vec<f64> = trace.output.iter().map(|v| v / self.tau).collect();
            let p = softmax(&l);
            let y = data.class_target(i).unwrap_or(0);
            let dout: Vec<f64> =
                p.iter().enumerate().map(|(c, pc)| ((c == y) as u8 as f64 - pc) / self.tau).collect();
            self.mlp.backward(theta, &trace, row, &active, &dout, &mut g);
        }
        g
    }

    fn simulate(&self, theta: &[f64], data: &mut Dataset, x_dist: XDist, rng: &mut StreamRng) {
        let active = data.active_features();
        let rows: Vec<usize> = data.active_rows().collect();
        for i in rows {
            draw_x(data, i, &active, x_dist, rng);
            let out = self.mlp.forward(theta, data.row(i), &active).output;
            let l: Vec<f64> = out.iter().map(|v| v / self.tau).collect();
            let c = rng.categorical_logits(&l);
            set_class(data, i, c);
        }
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Prediction> {
        let all: Vec<usize> = (0..self.d).collect();
        Ok(Prediction::Class(argmax(&self.mlp.forward(theta, x, &all).output)))
    }
}

/// Builds the likelihood model registered for the spec's family.
pub fn build(spec: &ModelSpec) -> Box<dyn LikelihoodModel> {
    use super::Family::*;
    let d = spec.d_max;
    match spec.family {
        Gm => Box::new(GaussianMean { d }),
        Gmm => Box::new(GaussianMixture { d, k: spec.k_clusters }),
        Lr => Box::new(LinearRegression { d, sigma2: spec.sigma2 }),
        Lc => Box::new(LinearClassification { d, classes: spec.n_classes, tau: spec.tau }),
        Nlr => Box::new(MlpRegression {
            mlp: Mlp::new(d, spec.hidden_units, spec.hidden_layers, 1, spec.activation),
            d,
            sigma2: spec.sigma2,
        }),
        Nlc => Box::new(MlpClassification {
            mlp: Mlp::new(d, spec.hidden_units, spec.hidden_layers, spec.n_classes, spec.activation),
            d,
            classes: spec.n_classes,
            tau: spec.tau,
        }),
    }
}
