//! Per-dataset reference methods and the common sampler interface shared
//! with the amortized estimator.

mod conjugate;
mod gaussian;
mod langevin;
mod map;

pub use conjugate::{
    analytic_posterior, analytic_posterior_gm, analytic_posterior_lr, evidence_identity, log_evidence,
    log_evidence_gm, log_evidence_lr,
};
pub use gaussian::GaussianDist;
pub use langevin::{langevin_sample, langevin_with, McmcConfig};
pub use map::{initial_theta, lr_grid_search, map_optimize, map_optimize_with, xavier_theta, MapInit, MapTrajectory, LR_GRID};

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::models::{Dataset, ModelSpec};
use crate::objectives::PosteriorEstimator;
use crate::rng::StreamKey;

/// Anything that turns a dataset into posterior draws. All randomness comes
/// from `key`, so a call is a pure function of its arguments.
pub trait PosteriorSampler {
    fn name(&self) -> &str;

    /// `s x k` draws. Samplers with their own budget (Langevin) may return a
    /// different row count.
    fn sample(&self, data: &Dataset, s: usize, key: &StreamKey) -> Result<Tensor>;

    fn as_density(&self) -> Option<&dyn PosteriorDensity> {
        None
    }

    /// The sampled distribution as an explicit Gaussian, when it is one.
    fn explicit_gaussian(&self, _data: &Dataset) -> Result<Option<GaussianDist>> {
        Ok(None)
    }
}

/// A sampler that can also evaluate its own log density.
pub trait PosteriorDensity: PosteriorSampler {
    /// Draws with their log densities.
    fn sample_with_log_q(&self, data: &Dataset, m: usize, key: &StreamKey) -> Result<(Tensor, Vec<f64>)>;

    fn log_q(&self, data: &Dataset, thetas: &Tensor) -> Result<Vec<f64>>;
}

impl PosteriorSampler for PosteriorEstimator {
    fn name(&self) -> &str {
        "amortized"
    }

    fn sample(&self, data: &Dataset, s: usize, key: &StreamKey) -> Result<Tensor> {
        Ok(PosteriorEstimator::sample(self, data, s, &mut key.rng())?.thetas)
    }

    fn as_density(&self) -> Option<&dyn PosteriorDensity> {
        Some(self)
    }

    fn explicit_gaussian(&self, data: &Dataset) -> Result<Option<GaussianDist>> {
        self.gaussian_posterior(data)
    }
}

impl PosteriorDensity for PosteriorEstimator {
    fn sample_with_log_q(&self, data: &Dataset, m: usize, key: &StreamKey) -> Result<(Tensor, Vec<f64>)> {
        let b = PosteriorEstimator::sample(self, data, m, &mut key.rng())?;
        Ok((b.thetas, b.log_q))
    }

    fn log_q(&self, data: &Dataset, thetas: &Tensor) -> Result<Vec<f64>> {
        PosteriorEstimator::log_q(self, data, thetas)
    }
}

/// The "Random" reference: draws from the prior, ignoring the data.
pub struct PriorSampler {
    pub spec: ModelSpec,
}

impl PosteriorSampler for PriorSampler {
    fn name(&self) -> &str {
        "prior"
    }

    fn sample(&self, _data: &Dataset, s: usize, key: &StreamKey) -> Result<Tensor> {
        let mut rng = key.rng();
        let k = self.spec.theta_dim();
        let mut out = Tensor::zeros(s, k);
        for r in 0..s {
            out.row_mut(r).copy_from_slice(&self.spec.sample_theta(&mut rng).values);
        }
        Ok(out)
    }

    fn as_density(&self) -> Option<&dyn PosteriorDensity> {
        Some(self)
    }

    fn explicit_gaussian(&self, _data: &Dataset) -> Result<Option<GaussianDist>> {
        Ok(Some(GaussianDist::standard(self.spec.theta_dim())))
    }
}

impl PosteriorDensity for PriorSampler {
    fn sample_with_log_q(&self, data: &Dataset, m: usize, key: &StreamKey) -> Result<(Tensor, Vec<f64>)> {
        let thetas = self.sample(data, m, key)?;
        let lq = self.log_q(data, &thetas)?;
        Ok((thetas, lq))
    }

    fn log_q(&self, _data: &Dataset, thetas: &Tensor) -> Result<Vec<f64>> {
        (0..thetas.rows()).map(|r| self.spec.log_prior(thetas.row(r))).collect()
    }
}

/// Exact posterior of the conjugate families.
pub struct AnalyticSampler {
    pub spec: ModelSpec,
}

impl PosteriorSampler for AnalyticSampler {
    fn name(&self) -> &str {
        "analytic"
    }

    fn sample(&self, data: &Dataset, s: usize, key: &StreamKey) -> Result<Tensor> {
        Ok(analytic_posterior(&self.spec, data)?.sample_n(s, &mut key.rng()))
    }

    fn as_density(&self) -> Option<&dyn PosteriorDensity> {
        Some(self)
    }

    fn explicit_gaussian(&self, data: &Dataset) -> Result<Option<GaussianDist>> {
        analytic_posterior(&self.spec, data).map(Some)
    }
}

impl PosteriorDensity for AnalyticSampler {
    fn sample_with_log_q(&self, data: &Dataset, m: usize, key: &StreamKey) -> Result<(Tensor, Vec<f64>)> {
        let post = analytic_posterior(&self.spec, data)?;
        let thetas = post.sample_n(m, &mut key.rng());
        let lq = (0..m).map(|r| post.log_pdf(thetas.row(r))).collect();
        Ok((thetas, lq))
    }

    fn log_q(&self, data: &Dataset, thetas: &Tensor) -> Result<Vec<f64>> {
        let post = analytic_posterior(&self.spec, data)?;
        Ok((0..thetas.rows()).map(|r| post.log_pdf(thetas.row(r))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// `None` selects the rate by grid search over [`LR_GRID`].
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_map_iters")]
    pub iters: usize,
    #[serde(default = "default_map_init")]
    pub init: MapInit,
}

fn default_map_iters() -> usize {
    1000
}

fn default_map_init() -> MapInit {
    MapInit::PriorSample
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { lr: None, iters: default_map_iters(), init: default_map_init() }
    }
}

/// One MAP run per requested sample, restart `i` initialized from `key.index(i)`.
pub struct MapSampler {
    pub spec: ModelSpec,
    pub lr: f64,
    pub iters: usize,
    pub init: MapInit,
}

impl PosteriorSampler for MapSampler {
    fn name(&self) -> &str {
        "map"
    }

    fn sample(&self, data: &Dataset, s: usize, key: &StreamKey) -> Result<Tensor> {
        let mut out = Tensor::zeros(s, self.spec.theta_dim());
        for r in 0..s {
            let mut rng = key.index(r as u64).rng();
            let t = map_optimize(&self.spec, data, &self.init, self.lr, self.iters, &mut rng)?;
            out.row_mut(r).copy_from_slice(&t.theta);
        }
        Ok(out)
    }
}

/// Pooled Langevin chains; the row count is set by the chain budget.
pub struct LangevinSampler {
    pub spec: ModelSpec,
    pub mcmc: McmcConfig,
}

impl PosteriorSampler for LangevinSampler {
    fn name(&self) -> &str {
        "langevin"
    }

    fn sample(&self, data: &Dataset, _s: usize, key: &StreamKey) -> Result<Tensor> {
        langevin_sample(&self.spec, data, &self.mcmc, key)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

type SamplerCtor = fn(&ModelSpec, &BaselineConfig, f64) -> Box<dyn PosteriorSampler>;

const BASELINES: &[(&str, SamplerCtor)] = &[
    ("prior", |s, _, _| Box::new(PriorSampler { spec: s.clone() })),
    ("analytic", |s, _, _| Box::new(AnalyticSampler { spec: s.clone() })),
    ("map", |s, c, lr| Box::new(MapSampler { spec: s.clone(), lr, iters: c.map.iters, init: c.map.init.clone() })),
    ("langevin", |s, c, _| Box::new(LangevinSampler { spec: s.clone(), mcmc: c.mcmc.clone() })),
];

pub fn baseline_names() -> Vec<&'static str> {
    BASELINES.iter().map(|(n, _)| *n).collect()
}

/// Builds a baseline by name. `tuning` supplies datasets for the MAP grid
/// search when no rate is configured.
pub fn build_baseline(
    name: &str,
    spec: &ModelSpec,
    cfg: &BaselineConfig,
    tuning: &[Dataset],
    key: &StreamKey,
) -> Result<Box<dyn PosteriorSampler>> {
    let ctor = BASELINES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::Unknown { kind: "baseline", name: name.into() })?;
    match name {
        "analytic" => {
            if !matches!(spec.family, crate::models::Family::Gm | crate::models::Family::Lr) {
                return Err(Error::InvalidSpec(format!("no closed-form posterior for `{}`", spec.family.name())));
            }
        }
        "langevin" => cfg.mcmc.validate()?,
        _ => {}
    }
    let lr = match (name, cfg.map.lr) {
        ("map", None) => lr_grid_search(spec, tuning, &LR_GRID, cfg.map.iters, &key.tag("lr_grid"))?,
        (_, lr) => lr.unwrap_or(0.0),
    };
    Ok(ctor(spec, cfg, lr))
}
