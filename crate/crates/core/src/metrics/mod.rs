//! Posterior-quality and predictive metrics.

mod divergence;
mod predictive;
mod wasserstein;

pub use divergence::{symmetric_kl_gaussian, symmetric_kl_mc};
pub use predictive::{accuracy, gm_l2, gmm_l2, predictive_l2, Accuracy, GmL2, GmmL2, PredictiveL2, SampleMetric};
pub use wasserstein::{hungarian, w2_squared_empirical, w2_squared_hungarian, w2_squared_sorted, W2_SAMPLE_CAP};

use serde::{Deserialize, Serialize};

use crate::baselines::PosteriorSampler;
use crate::error::{Error, Result};
use crate::models::{Dataset, Family, ModelSpec};
use crate::objectives::Estimate;
use crate::rng::StreamKey;

/// One test problem: the sampler conditions on `context`, predictive
/// metrics score against `query`. `theta` is the generating parameter when
/// known.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub context: Dataset,
    pub query: Dataset,
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// One value per test dataset.
    pub values: Vec<f64>,
    pub mean: f64,
    /// `sd / √T`.
    pub se: f64,
    /// Posterior samples per dataset.
    pub s: usize,
    /// Test datasets.
    pub t: usize,
}

impl MetricReport {
    pub fn from_values(metric: &str, values: Vec<f64>, s: usize) -> Self {
        let e = Estimate::from_samples(&values);
        let t = values.len();
        Self { metric: metric.into(), values, mean: e.mean, se: e.se, s, t }
    }
}

const METRICS: &[(&str, &dyn SampleMetric)] =
    &[("gm_l2", &GmL2), ("gmm_l2", &GmmL2), ("predictive_l2", &PredictiveL2), ("accuracy", &Accuracy)];

pub fn sample_metric_names() -> Vec<&'static str> {
    METRICS.iter().map(|(n, _)| *n).collect()
}

pub fn sample_metric(name: &str) -> Result<&'static dyn SampleMetric> {
    METRICS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, m)| *m)
        .ok_or_else(|| Error::Unknown { kind: "metric", name: name.into() })
}

/// The predictive metric used for a family.
pub fn default_metric(family: Family) -> &'static dyn SampleMetric {
    METRICS.iter().map(|(_, m)| *m).find(|m| m.supports(family)).expect("every family has a metric")
}

/// Averages `metric` over the draws the sampler returns for each case, then
/// summarizes over cases. Case `t` draws from `key.index(t)`.
pub fn evaluate_sample_metric(
    metric: &dyn SampleMetric,
    sampler: &dyn PosteriorSampler,
    spec: &ModelSpec,
    cases: &[EvalCase],
    s: usize,
    key: &StreamKey,
) -> Result<MetricReport> {
    if !metric.supports(spec.family) {
        return Err(Error::InvalidSpec(format!("metric `{}` does not apply to `{}`", metric.name(), spec.family.name())));
    }
    let mut values = Vec::with_capacity(cases.len());
    let mut drawn = s;
    for (t, case) in cases.iter().enumerate() {
        let thetas = sampler.sample(&case.context, s, &key.index(t as u64))?;
        if thetas.rows() == 0 {
            return Err(Error::Shape("sampler returned no draws".into()));
        }
        drawn = thetas.rows();
        let mut total = 0.0;
        for r in 0..thetas.rows() {
            total += metric.score(spec, &case.query, thetas.row(r))?;
        }
        values.push(total / thetas.rows() as f64);
    }
    Ok(MetricReport::from_values(metric.name(), values, drawn))
}

pub fn metric_gm_l2(sampler: &dyn PosteriorSampler, spec: &ModelSpec, cases: &[EvalCase], s: usize, key: &StreamKey) -> Result<MetricReport> {
    evaluate_sample_metric(&GmL2, sampler, spec, cases, s, key)
}

pub fn metric_gmm_l2(sampler: &dyn PosteriorSampler, spec: &ModelSpec, cases: &[EvalCase], s: usize, key: &StreamKey) -> Result<MetricReport> {
    evaluate_sample_metric(&GmmL2, sampler, spec, cases, s, key)
}

pub fn metric_predictive_l2(
    sampler: &dyn PosteriorSampler,
    spec: &ModelSpec,
    cases: &[EvalCase],
    s: usize,
    key: &StreamKey,
) -> Result<MetricReport> {
    evaluate_sample_metric(&PredictiveL2, sampler, spec, cases, s, key)
}

pub fn metric_accuracy(sampler: &dyn PosteriorSampler, spec: &ModelSpec, cases: &[EvalCase], s: usize, key: &StreamKey) -> Result<MetricReport> {
    evaluate_sample_metric(&Accuracy, sampler, spec, cases, s, key)
}
