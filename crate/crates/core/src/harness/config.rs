use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BaselineConfig;
use crate::datagen::{GeneratorConfig, SourceConfig};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::HeadConfig;
use crate::metrics::sample_metric;
use crate::models::ModelSpec;
use crate::objectives::{EstimatorConfig, TrainConfig};

/// Metric names accepted in `eval.metrics` besides the per-sample ones.
pub const DISTRIBUTION_METRICS: [&str; 3] = ["sym_kl", "w2", "elbo"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Posterior samples per test dataset.
    #[serde(default = "default_s")]
    pub s: usize,
    /// Number of test datasets.
    #[serde(default = "default_t")]
    pub t: usize,
    /// `predictive` resolves to the family's own predictive metric.
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_kl_samples")]
    pub kl_samples: usize,
    #[serde(default = "default_w2_samples")]
    pub w2_samples: usize,
    #[serde(default = "default_kl_samples")]
    pub elbo_samples: usize,
}

fn default_s() -> usize {
    25
}
fn default_t() -> usize {
    100
}
fn default_metrics() -> Vec<String> {
    vec!["predictive".into()]
}
fn default_kl_samples() -> usize {
    1000
}
fn default_w2_samples() -> usize {
    256
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            s: default_s(),
            t: default_t(),
            metrics: default_metrics(),
            kl_samples: default_kl_samples(),
            w2_samples: default_w2_samples(),
            elbo_samples: default_kl_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisspecConfig {
    #[serde(default = "SourceConfig::model")]
    pub train_source: SourceConfig,
    #[serde(default)]
    pub eval_sources: Vec<SourceConfig>,
}

impl Default for MisspecConfig {
    fn default() -> Self {
        Self { train_source: SourceConfig::model(), eval_sources: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Finetuning runs per arm and fold.
    #[serde(default = "default_s")]
    pub inits: usize,
    #[serde(default = "default_finetune_iters")]
    pub finetune_iters: usize,
    #[serde(default = "default_finetune_lr")]
    pub finetune_lr: f64,
    /// Test metric is recorded every this many finetune iterations.
    #[serde(default = "default_curve_every")]
    pub curve_every: usize,
}

fn default_folds() -> usize {
    5
}
fn default_finetune_iters() -> usize {
    1000
}
fn default_finetune_lr() -> f64 {
    1e-3
}
fn default_curve_every() -> usize {
    10
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            folds: default_folds(),
            inits: default_s(),
            finetune_iters: default_finetune_iters(),
            finetune_lr: default_finetune_lr(),
            curve_every: default_curve_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Root of every random stream; overrides `train.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub head: HeadConfig,
    pub train: TrainConfig,
    /// Save a checkpoint every this many iterations; 0 saves only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub misspec: MisspecConfig,
    #[serde(default)]
    pub tabular: TabularConfig,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        at("model", self.model.validate())?;
        at("generator", self.generator.validate(&self.model))?;
        at("encoder", self.encoder.validate())?;
        at("head", self.head.validate())?;
        at("train", self.train.validate(&self.generator))?;
        for (i, m) in self.eval.metrics.iter().enumerate() {
            if m != "predictive" && !DISTRIBUTION_METRICS.contains(&m.as_str()) {
                at(&format!("eval.metrics[{i}]"), sample_metric(m).map(|_| ()))?;
            }
        }
        if self.eval.s == 0 || self.eval.t == 0 || self.eval.kl_samples == 0 || self.eval.elbo_samples == 0 {
            return Err(Error::config("eval", "s, t, kl_samples and elbo_samples must be positive"));
        }
        if self.eval.w2_samples == 0 || self.eval.w2_samples > crate::metrics::W2_SAMPLE_CAP {
            return Err(Error::config("eval.w2_samples", format!("must lie in [1, {}]", crate::metrics::W2_SAMPLE_CAP)));
        }
        at("baseline.mcmc", self.baseline.mcmc.validate())?;
        if self.tabular.folds < 2 || self.tabular.inits == 0 || self.tabular.curve_every == 0 {
            return Err(Error::config("tabular", "folds >= 2, inits >= 1 and curve_every >= 1 required"));
        }
        Ok(())
    }

    /// The train schedule with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig { encoder: self.encoder.clone(), head: self.head.clone() }
    }

    /// Divides every iteration budget by `divisor` (rounding up, never to
    /// zero from a positive count).
    pub fn scaled(&self, divisor: usize) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::config("scale_divisor", "must be at least 1"));
        }
        let div = |n: usize| n.div_ceil(divisor);
        let mut c = self.clone();
        c.train.iterations = div(c.train.iterations);
        c.train.warmup_iters = div(c.train.warmup_iters).min(c.train.iterations);
        c.checkpoint_every = div(c.checkpoint_every);
        c.baseline.map.iters = div(c.baseline.map.iters);
        let kept = c.baseline.mcmc.total_steps - c.baseline.mcmc.burn_in;
        c.baseline.mcmc.burn_in = div(c.baseline.mcmc.burn_in);
        c.baseline.mcmc.total_steps = c.baseline.mcmc.burn_in + div(kept).max(c.baseline.mcmc.thin_interval);
        c.tabular.finetune_iters = div(c.tabular.finetune_iters);
        c.validate()?;
        Ok(c)
    }

    /// SHA-256 of the canonical JSON form; JSON objects serialize with
    /// sorted keys, so field order in the source file does not matter.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex(&Sha256::digest(value.to_string().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a source label as used on the command line: `model`, `gp_rbf`,
/// `nlr_tanh`, `nlr_relu`, `lr` (linear-regression generator) or `csv:PATH`.
pub fn parse_source(label: &str, model: &ModelSpec) -> Result<SourceConfig> {
    use crate::models::{Activation, Family};
    Ok(match label {
        "model" => SourceConfig::model(),
        "gp_rbf" | "gp" => SourceConfig::GpRbf,
        "nlr_tanh" | "nlr" => SourceConfig::nlr_fixed(),
        "nlr_relu" => SourceConfig::NlrFixed { layers: 1, units: 32, activation: Activation::Relu, sigma2: 0.25 },
        "lr" => SourceConfig::Model { spec: Some(ModelSpec { n_max: model.n_max, ..ModelSpec::new(Family::Lr, model.d_max) }) },
        other => match other.strip_prefix("csv:") {
            Some(path) => SourceConfig::Csv { path: path.into() },
            None => return Err(Error::Unknown { kind: "source", name: other.into() }),
        },
    })
}
