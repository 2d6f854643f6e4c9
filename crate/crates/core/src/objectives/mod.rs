//! Amortized training losses, the KL warmup schedule, the ELBO estimator and
//! the training loop.

mod estimator;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use estimator::{EstimatorConfig, PosteriorEstimator};

use crate::datagen::{generate_batch, DatasetBatch, GeneratorConfig};
use crate::diffcore::{Graph, ParamGrads, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{likelihood_grad_unchecked, Dataset, LikelihoodModel, ModelSpec};
use crate::rng::{StreamKey, StreamRng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Registered objective name, see [`objective_names`].
    #[serde(default = "reverse_kl")]
    pub objective: String,
    pub iterations: usize,
    #[serde(default)]
    pub warmup_iters: usize,
    #[serde(default = "one")]
    pub mc_samples: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn reverse_kl() -> String {
    "reverse_kl".into()
}
fn one() -> usize {
    1
}
fn default_lr() -> f64 {
    1e-4
}

impl TrainConfig {
    pub fn new(objective: &str, iterations: usize, warmup_iters: usize) -> Self {
        Self { objective: objective.into(), iterations, warmup_iters, mc_samples: 1, lr: 1e-4, seed: 0 }
    }

    pub fn validate(&self, generator: &GeneratorConfig) -> Result<()> {
        let objective = objective(&self.objective)?;
        if self.warmup_iters > self.iterations {
            return Err(Error::InvalidSpec(format!(
                "warmup_iters {} exceeds iterations {}",
                self.warmup_iters, self.iterations
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidSpec("mc_samples must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidSpec(format!("invalid learning rate {}", self.lr)));
        }
        if objective.needs_thetas() && !generator.source.yields_thetas() {
            return Err(Error::InvalidSpec(format!(
                "`{}` needs datasets simulated from the model itself, not `{}`",
                self.objective,
                generator.source.label()
            )));
        }
        Ok(())
    }
}

/// Linear KL warmup `min(1, iter / warmup_iters)`.
pub fn warmup_beta(iter: usize, warmup_iters: usize) -> f64 {
    if warmup_iters == 0 {
        1.0
    } else {
        (iter as f64 / warmup_iters as f64).min(1.0)
    }
}

/// Loss value and parameter gradient of one batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub grads: ParamGrads,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    fn needs_thetas(&self) -> bool;

    /// Weight on the KL part at `iter`; objectives without one ignore warmup.
    fn beta(&self, iter: usize, warmup_iters: usize) -> f64;

    fn batch_loss(
        &self,
        est: &PosteriorEstimator,
        batch: &DatasetBatch,
        beta: f64,
        mc_samples: usize,
        stream: &StreamKey,
    ) -> Result<BatchLoss>;
}

pub struct ReverseKl;
pub struct ForwardKl;

const OBJECTIVES: &[(&str, &dyn Objective)] = &[("reverse_kl", &ReverseKl), ("forward_kl", &ForwardKl)];

pub fn objective(name: &str) -> Result<&'static dyn Objective> {
    OBJECTIVES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, o)| *o)
        .ok_or_else(|| Error::Unknown { kind: "objective", name: name.into() })
}

pub fn objective_names() -> Vec<&'static str> {
    OBJECTIVES.iter().map(|(n, _)| *n).collect()
}

/// Row-wise `log p(θ)` under the standard-normal prior, `M x 1`.
fn log_prior_rows(g: &mut Graph, theta: Var) -> Var {
    let k = g.shape(theta).1 as f64;
    let sq = g.square(theta);
    let ss = g.sum_cols(sq);
    let half = g.scale(ss, -0.5);
    g.add_scalar(half, -k * HALF_LN_2PI)
}

/// Row-wise log-likelihood of `data`, with gradients supplied by the model.
fn log_likelihood_rows(g: &mut Graph, model: &dyn LikelihoodModel, data: &Dataset, theta: Var) -> Var {
    let tv = g.value(theta).clone();
    let mut values = Vec::with_capacity(tv.rows());
    let mut grads = Tensor::zeros(tv.rows(), tv.cols());
    for r in 0..tv.rows() {
        let (ll, grad) = likelihood_grad_unchecked(model, tv.row(r), data);
        values.push(ll);
        grads.row_mut(r).copy_from_slice(&grad);
    }
    g.row_fn(theta, values, grads)
}

/// Reverse-KL loss of one dataset for fixed base noise `eps` (`M x k`):
/// `mean_m [β (log q(θ_m) - log p(θ_m)) - log p(D | θ_m)]`.
pub fn reverse_kl_graph(
    est: &PosteriorEstimator,
    g: &mut Graph,
    data: &Dataset,
    eps: &Tensor,
    beta: f64,
) -> Result<Var> {
    let model = est.spec.model();
    let summary = est.summary_node(g, data)?;
    let e = g.input(eps.clone());
    let (theta, log_q) = est.head().sample(g, summary, e);
    let lp = log_prior_rows(g, theta);
    let ll = log_likelihood_rows(g, model.as_ref(), data, theta);
    let kl = g.sub(log_q, lp);
    let kl = g.scale(kl, beta);
    let per = g.sub(kl, ll);
    Ok(g.mean_all(per))
}

/// Forward-KL loss of one dataset: `-log q(θ* | D)`.
pub fn forward_kl_graph(est: &PosteriorEstimator, g: &mut Graph, data: &Dataset, theta: &[f64]) -> Result<Var> {
    if theta.len() != est.theta_dim() {
        return Err(Error::DimensionMismatch { expected: est.theta_dim(), got: theta.len() });
    }
    let summary = est.summary_node(g, data)?;
    let t = g.input(Tensor::row_vector(theta.to_vec()));
    let lq = est.head().log_q(g, summary, t);
    let nl = g.scale(lq, -1.0);
    Ok(g.sum_all(nl))
}

/// Averages per-dataset losses built by `per_dataset`, one graph per dataset.
fn average_over_batch(
    est: &PosteriorEstimator,
    n: usize,
    mut per_dataset: impl FnMut(&mut Graph, usize) -> Result<Var>,
) -> Result<BatchLoss> {
    if n == 0 {
        return Err(Error::InvalidSpec("empty batch".into()));
    }
    let mut grads = est.store.zero_grads();
    let mut total = 0.0;
    let w = 1.0 / n as f64;
    for i in 0..n {
        let mut g = Graph::with_params(&est.store);
        let l = per_dataset(&mut g, i)?;
        total += g.value(l).item();
        g.backward(l)?.accumulate(&mut grads, w);
    }
    Ok(BatchLoss { loss: total * w, grads })
}

/// Base noise for dataset `i` of a batch.
pub fn batch_noise(stream: &StreamKey, i: usize, m: usize, k: usize) -> Tensor {
    Tensor::from_vec(m, k, stream.tag("mc").index(i as u64).rng().normal_vec(m * k))
}

impl Objective for ReverseKl {
    fn name(&self) -> &'static str {
        "reverse_kl"
    }

    fn needs_thetas(&self) -> bool {
        false
    }

    fn beta(&self, iter: usize, warmup_iters: usize) -> f64 {
        warmup_beta(iter, warmup_iters)
    }

    fn batch_loss(
        &self,
        est: &PosteriorEstimator,
        batch: &DatasetBatch,
        beta: f64,
        mc_samples: usize,
        stream: &StreamKey,
    ) -> Result<BatchLoss> {
        let k = est.theta_dim();
        average_over_batch(est, batch.len(), |g, i| {
            let eps = batch_noise(stream, i, mc_samples, k);
            reverse_kl_graph(est, g, &batch.datasets[i], &eps, beta)
        })
    }
}

impl Objective for ForwardKl {
    fn name(&self) -> &'static str {
        "forward_kl"
    }

    fn needs_thetas(&self) -> bool {
        true
    }

    fn beta(&self, _iter: usize, _warmup_iters: usize) -> f64 {
        1.0
    }

    fn batch_loss(
        &self,
        est: &PosteriorEstimator,
        batch: &DatasetBatch,
        _beta: f64,
        _mc_samples: usize,
        _stream: &StreamKey,
    ) -> Result<BatchLoss> {
        let thetas = batch.thetas.as_ref().ok_or(Error::MissingThetas)?;
        average_over_batch(est, batch.len(), |g, i| forward_kl_graph(est, g, &batch.datasets[i], &thetas[i].values))
    }
}

pub fn reverse_kl_loss(
    est: &PosteriorEstimator,
    batch: &DatasetBatch,
    beta: f64,
    mc_samples: usize,
    stream: &StreamKey,
) -> Result<BatchLoss> {
    ReverseKl.batch_loss(est, batch, beta, mc_samples, stream)
}

pub fn forward_kl_loss(est: &PosteriorEstimator, batch: &DatasetBatch) -> Result<BatchLoss> {
    ForwardKl.batch_loss(est, batch, 1.0, 1, &StreamKey::root(0))
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

/// `mean_m [log p(D, θ_m) - log q(θ_m | D)]` over `m` draws from q.
pub fn elbo_estimate(est: &PosteriorEstimator, data: &Dataset, m: usize, rng: &mut StreamRng) -> Result<Estimate> {
    let batch = est.sample(data, m, rng)?;
    let terms = elbo_terms(&est.spec, data, &batch.thetas, &batch.log_q)?;
    Ok(Estimate::from_samples(&terms))
}

/// Per-sample `log p(D, θ) - log q(θ)`.
pub fn elbo_terms(spec: &ModelSpec, data: &Dataset, thetas: &Tensor, log_q: &[f64]) -> Result<Vec<f64>> {
    (0..thetas.rows()).map(|r| Ok(spec.log_joint(thetas.row(r), data)? - log_q[r])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub beta: f64,
    pub loss: f64,
}

/// Streams fresh batches from `generator`, takes one Adam step per
/// iteration and records `{iter, beta, loss}`; each record is also written
/// as a JSON line to `sink` when given. Aborts on a non-finite loss or
/// gradient.
pub fn train(
    est: &mut PosteriorEstimator,
    generator: &GeneratorConfig,
    cfg: &TrainConfig,
    sink: Option<&mut dyn Write>,
) -> Result<Vec<TraceRecord>> {
    train_range(est, generator, cfg, 0..cfg.iterations, sink)
}

/// The iterations `iters` of the schedule in `cfg`. Batches depend only on
/// the iteration index, so consecutive ranges reproduce a single full run.
pub fn train_range(
    est: &mut PosteriorEstimator,
    generator: &GeneratorConfig,
    cfg: &TrainConfig,
    iters: std::ops::Range<usize>,
    mut sink: Option<&mut dyn Write>,
) -> Result<Vec<TraceRecord>> {
    cfg.validate(generator)?;
    let obj = objective(&cfg.objective)?;
    let root = StreamKey::root(cfg.seed).tag("train");
    let mut trace = Vec::with_capacity(iters.len());
    for iter in iters {
        let key = root.index(iter as u64);
        let batch = generate_batch(generator, &est.spec, &key.tag("data"))?;
        let beta = obj.beta(iter, cfg.warmup_iters);
        let BatchLoss { loss, grads } = obj.batch_loss(est, &batch, beta, cfg.mc_samples, &key)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite { what: format!("{} loss", obj.name()), iter: Some(iter) });
        }
        est.store.adam_step(&grads, cfg.lr)?;
        let rec = TraceRecord { iter, beta, loss };
        if let Some(w) = sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, &rec).map_err(|e| Error::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        trace.push(rec);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_beta(0, 10), 0.0);
        assert_eq!(warmup_beta(10, 10), 1.0);
        assert_eq!(warmup_beta(5, 10), 0.5);
        assert_eq!(warmup_beta(0, 0), 1.0);
        assert_eq!(warmup_beta(20, 10), 1.0);
        let b: Vec<f64> = (0..30).map(|i| warmup_beta(i, 17)).collect();
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn registry() {
        assert_eq!(objective_names(), vec!["reverse_kl", "forward_kl"]);
        assert!(matches!(objective("npe"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn standard_error() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.se - 1.0).abs() < 1e-15);
    }
}
