use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::GaussianDist;
use crate::diffcore::{Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::encoders::{build_encoder, encode, token_dim, tokenize, EncoderConfig, SummaryNetwork};
use crate::error::{Error, Result};
use crate::heads::{build_head, log_q_values, sample_values, HeadConfig, PosteriorHead, PosteriorSampleBatch};
use crate::models::{Dataset, ModelSpec};
use crate::rng::{StreamKey, StreamRng};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub head: HeadConfig,
}

impl EstimatorConfig {
    pub fn new(encoder: &str, head: &str) -> Self {
        Self { encoder: EncoderConfig::with_kind(encoder), head: HeadConfig::with_kind(head) }
    }
}

/// Summary network plus posterior head, sharing one parameter store.
pub struct PosteriorEstimator {
    pub spec: ModelSpec,
    pub config: EstimatorConfig,
    pub store: ParamStore,
    encoder: Box<dyn SummaryNetwork>,
    head: Box<dyn PosteriorHead>,
}

impl std::fmt::Debug for PosteriorEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PosteriorEstimator")
            .field("family", &self.spec.family)
            .field("encoder", &self.encoder.name())
            .field("head", &self.head.name())
            .field("params", &self.store.scalar_count())
            .finish()
    }
}

impl PosteriorEstimator {
    /// Parameters are initialized from the `init` stream of `seed`.
    pub fn new(spec: &ModelSpec, config: &EstimatorConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = StreamKey::root(seed).tag("init").rng();
        let mut store = ParamStore::new();
        let encoder = build_encoder(&config.encoder, token_dim(spec), &mut store, &mut rng)?;
        let head = build_head(&config.head, spec.theta_dim(), encoder.summary_dim(), &mut store, &mut rng)?;
        Ok(Self { spec: spec.clone(), config: config.clone(), store, encoder, head })
    }

    pub fn encoder(&self) -> &dyn SummaryNetwork {
        self.encoder.as_ref()
    }

    pub fn head(&self) -> &dyn PosteriorHead {
        self.head.as_ref()
    }

    pub fn theta_dim(&self) -> usize {
        self.head.theta_dim()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.d_max != self.spec.d_max {
            return Err(Error::DimensionMismatch { expected: self.spec.d_max, got: data.d_max });
        }
        Ok(())
    }

    /// Summary row of `data` recorded on `g`.
    pub fn summary_node(&self, g: &mut Graph, data: &Dataset) -> Result<Var> {
        self.check(data)?;
        encode(self.encoder.as_ref(), g, &tokenize(data, &self.spec))
    }

    pub fn summary(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.store);
        let s = self.summary_node(&mut g, data)?;
        Ok(g.value(s).data().to_vec())
    }

    pub fn sample(&self, data: &Dataset, m: usize, rng: &mut StreamRng) -> Result<PosteriorSampleBatch> {
        let s = self.summary(data)?;
        sample_values(self.head.as_ref(), &self.store, &s, m, rng)
    }

    pub fn log_q(&self, data: &Dataset, thetas: &Tensor) -> Result<Vec<f64>> {
        if thetas.cols() != self.theta_dim() {
            return Err(Error::DimensionMismatch { expected: self.theta_dim(), got: thetas.cols() });
        }
        let s = self.summary(data)?;
        Ok(log_q_values(self.head.as_ref(), &self.store, &s, thetas))
    }

    /// q as an explicit distribution, for heads that are diagonal Gaussians.
    pub fn gaussian_posterior(&self, data: &Dataset) -> Result<Option<GaussianDist>> {
        let s = self.summary(data)?;
        let mut g = Graph::with_params(&self.store);
        let sv = g.input(Tensor::row_vector(s));
        let Some((mu, ls)) = self.head.diagonal_moments(&mut g, sv) else {
            return Ok(None);
        };
        let var: Vec<f64> = g.value(ls).data().iter().map(|l| (2.0 * l).exp()).collect();
        GaussianDist::diagonal(g.value(mu).data().to_vec(), &var).map(Some)
    }

    pub fn checkpoint(&self, meta: &str) -> Checkpoint {
        Checkpoint::from_store(&self.store, meta)
    }

    pub fn save(&self, path: &Path, meta: &str) -> Result<()> {
        self.checkpoint(meta).save(path)
    }

    /// Loads parameters, optimizer state and buffers into an estimator built
    /// with the matching configuration.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.apply(&mut self.store)?;
        self.head.load_buffers(&self.store)
    }
}
