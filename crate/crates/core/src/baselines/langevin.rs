use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::models::{joint_grad_unchecked, Dataset, ModelSpec};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_total")]
    pub total_steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin_interval: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
}

fn default_step() -> f64 {
    1e-3
}
fn default_total() -> usize {
    21_000
}
fn default_burn_in() -> usize {
    1000
}
fn default_thin() -> usize {
    10
}
fn default_chains() -> usize {
    4
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            step_size: default_step(),
            total_steps: default_total(),
            burn_in: default_burn_in(),
            thin_interval: default_thin(),
            chains: default_chains(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_steps || self.thin_interval == 0 || self.chains == 0 {
            return Err(Error::InvalidSpec(
                "MCMC needs burn_in < total_steps, thin_interval >= 1 and at least one chain".into(),
            ));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidSpec(format!("invalid step size {}", self.step_size)));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.total_steps - self.burn_in) / self.thin_interval
    }
}

/// Unadjusted Langevin chains `θ ← θ + (ε/2) ∇log p(D, θ) + √ε ξ`, each
/// started at a prior draw on its own stream `key.index(chain)`. Returns the
/// kept states of all chains, chain-major.
pub fn langevin_sample(spec: &ModelSpec, data: &Dataset, cfg: &McmcConfig, key: &StreamKey) -> Result<Tensor> {
    cfg.validate()?;
    spec.log_joint(&vec![0.0; spec.theta_dim()], data)?;
    let model = spec.model();
    langevin_with(spec.theta_dim(), cfg, key, |theta| {
        Ok(joint_grad_unchecked(model.as_ref(), theta, data).1)
    }, |rng| spec.sample_theta(rng).values)
}

/// Langevin driver over an arbitrary gradient field.
pub fn langevin_with(
    k: usize,
    cfg: &McmcConfig,
    key: &StreamKey,
    grad: impl Fn(&[f64]) -> Result<Vec<f64>>,
    init: impl Fn(&mut crate::rng::StreamRng) -> Vec<f64>,
) -> Result<Tensor> {
    cfg.validate()?;
    let kept = cfg.kept_per_chain();
    let mut out = Tensor::zeros(cfg.chains * kept, k);
    let noise = cfg.step_size.sqrt();
    let half = 0.5 * cfg.step_size;
    let mut row = 0;
    for c in 0..cfg.chains {
        let mut rng = key.index(c as u64).rng();
        let mut theta = init(&mut rng);
        for t in 0..cfg.total_steps {
            let g = grad(&theta)?;
            for (th, gi) in theta.iter_mut().zip(&g) {
                *th += half * gi + noise * rng.normal();
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: format!("Langevin chain {c}"), iter: Some(t) });
            }
            if t >= cfg.burn_in && (t - cfg.burn_in + 1) % cfg.thin_interval == 0 {
                out.row_mut(row).copy_from_slice(&theta);
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, cfg.chains * kept);
    Ok(out)
}
