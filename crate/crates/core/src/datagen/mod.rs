//! The dataset-generating distribution: ancestral simulation from a model,
//! misspecified generators, variable cardinality and dimensionality, and
//! tabular ingestion.

mod sources;
mod tabular;

use serde::{Deserialize, Serialize};

pub use sources::{gp_dataset, rbf_kernel, source_for, DatasetSource, GP_NOISE};
pub use tabular::{ingest_csv, kfold_indices, kfold_split, read_csv_table, CsvTarget, Normalizer, RawTable, MAX_FEATURES, MAX_ROWS};

use crate::error::{Error, Result};
use crate::models::{Activation, Dataset, ModelSpec, ThetaVector, XDist};
use crate::rng::{StreamKey, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    /// Ancestral sampling from a model; `None` means the experiment's own model.
    Model {
        #[serde(default)]
        spec: Option<ModelSpec>,
    },
    GpRbf,
    NlrFixed {
        #[serde(default = "one")]
        layers: usize,
        #[serde(default = "thirty_two")]
        units: usize,
        #[serde(default = "tanh")]
        activation: Activation,
        #[serde(default = "quarter")]
        sigma2: f64,
    },
    Csv {
        path: std::path::PathBuf,
    },
}

fn one() -> usize {
    1
}
fn thirty_two() -> usize {
    32
}
fn tanh() -> Activation {
    Activation::Tanh
}
fn quarter() -> f64 {
    0.25
}

impl SourceConfig {
    pub fn model() -> Self {
        SourceConfig::Model { spec: None }
    }

    pub fn nlr_fixed() -> Self {
        SourceConfig::NlrFixed { layers: 1, units: 32, activation: Activation::Tanh, sigma2: 0.25 }
    }

    /// Whether datasets come with the parameters that generated them under
    /// the experiment's own model (required by forward KL).
    pub fn yields_thetas(&self) -> bool {
        matches!(self, SourceConfig::Model { spec: None })
    }

    pub fn label(&self) -> String {
        match self {
            SourceConfig::Model { spec: None } => "model".into(),
            SourceConfig::Model { spec: Some(s) } => format!("model_{}", s.family.name()),
            SourceConfig::GpRbf => "gp_rbf".into(),
            SourceConfig::NlrFixed { activation, .. } => format!(
                "nlr_{}",
                match activation {
                    Activation::Relu => "relu",
                    Activation::Tanh => "tanh",
                }
            ),
            SourceConfig::Csv { path } => format!("csv_{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "d", rename_all = "snake_case")]
pub enum DimMode {
    Fixed(usize),
    UniformUpTo(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default = "SourceConfig::model")]
    pub source: SourceConfig,
    #[serde(default = "default_n_range")]
    pub n_range: [usize; 2],
    #[serde(default)]
    pub x_dist: XDist,
    /// `None` uses every feature of the model.
    #[serde(default)]
    pub dim_mode: Option<DimMode>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_n_range() -> [usize; 2] {
    [64, 128]
}

fn default_batch() -> usize {
    128
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::model(),
            n_range: default_n_range(),
            x_dist: XDist::StdNormal,
            dim_mode: None,
            batch_size: default_batch(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let [lo, hi] = self.n_range;
        if !(1 <= lo && lo <= hi && hi <= spec.n_max) {
            return Err(Error::InvalidSpec(format!(
                "n_range [{lo}, {hi}] must satisfy 1 <= lo <= hi <= {}",
                spec.n_max
            )));
        }
        match self.dim_mode {
            Some(DimMode::Fixed(d)) | Some(DimMode::UniformUpTo(d)) if d == 0 || d > spec.d_max => {
                return Err(Error::InvalidSpec(format!("dimension {d} outside [1, {}]", spec.d_max)));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn dim_mode_for(&self, spec: &ModelSpec) -> DimMode {
        self.dim_mode.unwrap_or(DimMode::Fixed(spec.d_max))
    }
}

/// Datasets of one training/evaluation step, with generating parameters when
/// the source is the experiment's own model.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBatch {
    pub datasets: Vec<Dataset>,
    pub thetas: Option<Vec<ThetaVector>>,
}

impl DatasetBatch {
    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }
}

pub fn sample_cardinality(cfg: &GeneratorConfig, rng: &mut StreamRng) -> usize {
    rng.int_inclusive(cfg.n_range[0], cfg.n_range[1])
}

pub fn sample_dim(mode: DimMode, rng: &mut StreamRng) -> usize {
    match mode {
        DimMode::Fixed(d) => d,
        DimMode::UniformUpTo(d) => rng.int_inclusive(1, d),
    }
}

/// Fills a batch; slot `i` draws from its own stream `stream.index(i)`.
pub fn generate_batch(cfg: &GeneratorConfig, spec: &ModelSpec, stream: &StreamKey) -> Result<DatasetBatch> {
    cfg.validate(spec)?;
    let source = source_for(&cfg.source, spec)?;
    let mode = cfg.dim_mode_for(spec);
    let mut datasets = Vec::with_capacity(cfg.batch_size);
    let mut thetas = Vec::with_capacity(cfg.batch_size);
    for slot in 0..cfg.batch_size {
        let mut rng = stream.index(slot as u64).rng();
        let d = sample_dim(mode, &mut rng);
        let n = sample_cardinality(cfg, &mut rng);
        let (ds, theta) = source.sample(n, d, cfg.x_dist, &mut rng)?;
        datasets.push(ds);
        if let Some(t) = theta {
            thetas.push(t);
        }
    }
    let thetas = if cfg.source.yields_thetas() { Some(thetas) } else { None };
    Ok(DatasetBatch { datasets, thetas })
}

/// Pads a dataset's feature axis to `d_max` columns; the new columns are zero
/// and inactive.
pub fn embed_variable_dim(data: &Dataset, d_max: usize) -> Result<Dataset> {
    if data.d_max > d_max {
        return Err(Error::DimensionMismatch { expected: d_max, got: data.d_max });
    }
    let mut x = vec![0.0; data.n_max * d_max];
    for i in 0..data.n_max {
        x[i * d_max..i * d_max + data.d_max].copy_from_slice(data.row(i));
    }
    let mut feat_mask = data.feat_mask.clone();
    feat_mask.resize(d_max, false);
    Dataset::new(data.n_max, d_max, x, data.y.clone(), data.obs_mask.clone(), feat_mask)
}
