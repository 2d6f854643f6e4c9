use super::{GaussianHeadConfig, PosteriorHead, HALF_LN_2PI};
use crate::diffcore::{Graph, Mlp, ParamStore, Var};
use crate::models::Activation;
use crate::rng::StreamRng;

pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Diagonal Gaussian whose mean and log standard deviation come from an MLP
/// of the summary.
pub struct GaussianHead {
    net: Mlp,
    k: usize,
}

impl GaussianHead {
    pub fn new(cfg: &GaussianHeadConfig, k: usize, summary_dim: usize, store: &mut ParamStore, rng: &mut StreamRng) -> Self {
        let net = Mlp::new(store, "head.gaussian", summary_dim, cfg.hidden, cfg.hidden_layers, 2 * k, Activation::Relu, rng);
        Self { net, k }
    }

    /// `(μ, log σ)` as `1 x k` rows.
    pub fn moments(&self, g: &mut Graph, summary: Var) -> (Var, Var) {
        let out = self.net.forward(g, summary);
        let mu = g.slice_cols(out, 0, self.k);
        let raw = g.slice_cols(out, self.k, self.k);
        (mu, g.clamp(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX))
    }

    /// `-Σ log σ - (k/2) ln 2π - ½‖ε‖²` per row of `eps`.
    fn density(&self, g: &mut Graph, log_sigma: Var, eps: Var) -> Var {
        let sls = g.sum_all(log_sigma);
        let norm = g.scale(sls, -1.0);
        let norm = g.add_scalar(norm, -(self.k as f64) * HALF_LN_2PI);
        let sq = g.square(eps);
        let ss = g.sum_cols(sq);
        let quad = g.scale(ss, -0.5);
        g.add_row(quad, norm)
    }
}

impl PosteriorHead for GaussianHead {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn theta_dim(&self) -> usize {
        self.k
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn diagonal_moments(&self, g: &mut Graph, summary: Var) -> Option<(Var, Var)> {
        Some(self.moments(g, summary))
    }

    fn sample(&self, g: &mut Graph, summary: Var, eps: Var) -> (Var, Var) {
        let (mu, ls) = self.moments(g, summary);
        let sigma = g.exp(ls);
        let scaled = g.mul_row(eps, sigma);
        let theta = g.add_row(scaled, mu);
        let lq = self.density(g, ls, eps);
        (theta, lq)
    }

    fn log_q(&self, g: &mut Graph, summary: Var, theta: Var) -> Var {
        let (mu, ls) = self.moments(g, summary);
        let neg_mu = g.scale(mu, -1.0);
        let diff = g.add_row(theta, neg_mu);
        let neg_ls = g.scale(ls, -1.0);
        let inv_sigma = g.exp(neg_ls);
        let eps = g.mul_row(diff, inv_sigma);
        self.density(g, ls, eps)
    }
}
