//! Posterior heads: distributions over θ conditioned on a dataset summary.

mod flow;
mod gaussian;

use serde::{Deserialize, Serialize};

pub use flow::{FlowHead, SCALE_CLAMP};
pub use gaussian::{GaussianHead, LOG_SIGMA_MAX, LOG_SIGMA_MIN};

use crate::diffcore::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianHeadConfig {
    #[serde(default = "d256")]
    pub hidden: usize,
    #[serde(default = "d1")]
    pub hidden_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowHeadConfig {
    #[serde(default = "d6")]
    pub blocks: usize,
    #[serde(default = "d128")]
    pub hidden: usize,
}

fn d1() -> usize {
    1
}
fn d6() -> usize {
    6
}
fn d128() -> usize {
    128
}
fn d256() -> usize {
    256
}
fn gaussian_name() -> String {
    "gaussian".into()
}

impl Default for GaussianHeadConfig {
    fn default() -> Self {
        Self { hidden: 256, hidden_layers: 1 }
    }
}

impl Default for FlowHeadConfig {
    fn default() -> Self {
        Self { blocks: 6, hidden: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// Registered head name, see [`head_names`].
    #[serde(default = "gaussian_name")]
    pub kind: String,
    #[serde(default)]
    pub gaussian: GaussianHeadConfig,
    #[serde(default)]
    pub flow: FlowHeadConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { kind: gaussian_name(), gaussian: GaussianHeadConfig::default(), flow: FlowHeadConfig::default() }
    }
}

impl HeadConfig {
    pub fn with_kind(kind: &str) -> Self {
        Self { kind: kind.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        lookup(&self.kind)?;
        if self.gaussian.hidden == 0 || self.flow.hidden == 0 || self.flow.blocks == 0 {
            return Err(Error::InvalidSpec("head widths and block count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws from q with their log densities.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSampleBatch {
    /// `M x k`.
    pub thetas: Tensor,
    pub log_q: Vec<f64>,
}

pub trait PosteriorHead: Send + Sync {
    fn name(&self) -> &'static str;

    fn theta_dim(&self) -> usize;

    fn param_count(&self) -> usize;

    /// Pushes standard-normal base noise `eps` (`M x k`) through q given a
    /// `1 x S` summary; returns `(θ: M x k, log q(θ): M x 1)`.
    fn sample(&self, g: &mut Graph, summary: Var, eps: Var) -> (Var, Var);

    /// `log q(θ)` for each row of `theta`, as `M x 1`.
    fn log_q(&self, g: &mut Graph, summary: Var, theta: Var) -> Var;

    /// Re-reads non-trainable state (e.g. permutations) after a checkpoint
    /// has been applied to `store`.
    fn load_buffers(&mut self, _store: &ParamStore) -> Result<()> {
        Ok(())
    }

    /// `(μ, log σ)` rows when q is a diagonal Gaussian.
    fn diagonal_moments(&self, _g: &mut Graph, _summary: Var) -> Option<(Var, Var)> {
        None
    }
}

type HeadCtor = fn(&HeadConfig, usize, usize, &mut ParamStore, &mut StreamRng) -> Box<dyn PosteriorHead>;

const HEADS: &[(&str, HeadCtor)] = &[
    ("gaussian", |c, k, s, st, r| Box::new(GaussianHead::new(&c.gaussian, k, s, st, r))),
    ("flow", |c, k, s, st, r| Box::new(FlowHead::new(&c.flow, k, s, st, r))),
];

fn lookup(name: &str) -> Result<HeadCtor> {
    let name = if name == "diag_gaussian" { "gaussian" } else { name };
    HEADS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::Unknown { kind: "head", name: name.into() })
}

pub fn head_names() -> Vec<&'static str> {
    HEADS.iter().map(|(n, _)| *n).collect()
}

/// Registers the head's parameters under `head.` in `store`.
pub fn build_head(
    cfg: &HeadConfig,
    theta_dim: usize,
    summary_dim: usize,
    store: &mut ParamStore,
    rng: &mut StreamRng,
) -> Result<Box<dyn PosteriorHead>> {
    cfg.validate()?;
    if theta_dim == 0 {
        return Err(Error::InvalidSpec("θ must have at least one dimension".into()));
    }
    Ok(lookup(&cfg.kind)?(cfg, theta_dim, summary_dim, store, rng))
}

/// Row-wise standard-normal log density, `M x 1`.
pub(crate) fn std_normal_logpdf(g: &mut Graph, z: Var) -> Var {
    let k = g.shape(z).1 as f64;
    let sq = g.square(z);
    let ss = g.sum_cols(sq);
    let half = g.scale(ss, -0.5);
    g.add_scalar(half, -k * HALF_LN_2PI)
}

/// Samples `m` draws given fixed summary values, without gradients.
pub fn sample_values(
    head: &dyn PosteriorHead,
    store: &ParamStore,
    summary: &[f64],
    m: usize,
    rng: &mut StreamRng,
) -> Result<PosteriorSampleBatch> {
    let k = head.theta_dim();
    let mut g = Graph::with_params(store);
    let s = g.input(Tensor::row_vector(summary.to_vec()));
    let eps = g.input(Tensor::from_vec(m, k, rng.normal_vec(m * k)));
    let (theta, log_q) = head.sample(&mut g, s, eps);
    let batch = PosteriorSampleBatch { thetas: g.value(theta).clone(), log_q: g.value(log_q).data().to_vec() };
    if !batch.thetas.is_finite() || batch.log_q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "posterior samples".into(), iter: None });
    }
    Ok(batch)
}

/// `log q(θ)` for each row of `thetas` given fixed summary values.
pub fn log_q_values(head: &dyn PosteriorHead, store: &ParamStore, summary: &[f64], thetas: &Tensor) -> Vec<f64> {
    let mut g = Graph::with_params(store);
    let s = g.input(Tensor::row_vector(summary.to_vec()));
    let th = g.input(thetas.clone());
    let lq = head.log_q(&mut g, s, th);
    g.value(lq).data().to_vec()
}
