use nalgebra::{DMatrix, DVector};

use super::tabular::{ingest_csv, CsvTarget};
use super::{embed_variable_dim, SourceConfig};
use crate::error::{Error, Result};
use crate::models::{Dataset, Family, ModelSpec, TargetKind, Targets, ThetaVector, XDist};
use crate::rng::StreamRng;

pub const GP_NOISE: f64 = 1e-6;
const GP_JITTER: [f64; 3] = [1e-6, 1e-5, 1e-4];

/// Something that produces padded datasets in the experiment's shape.
pub trait DatasetSource: Send + Sync {
    fn name(&self) -> &'static str;

    /// One dataset with `n` observed rows over `d` active features, plus the
    /// generating parameters when they live in the experiment's θ-space.
    fn sample(&self, n: usize, d: usize, x_dist: XDist, rng: &mut StreamRng)
        -> Result<(Dataset, Option<ThetaVector>)>;
}

pub fn source_for(cfg: &SourceConfig, spec: &ModelSpec) -> Result<Box<dyn DatasetSource>> {
    spec.validate()?;
    let real_target = || -> Result<()> {
        if spec.target_kind() != TargetKind::Real {
            return Err(Error::InvalidSpec(format!(
                "source `{}` produces real targets but the model is `{}`",
                cfg.label(),
                spec.family.name()
            )));
        }
        Ok(())
    };
    Ok(match cfg {
        SourceConfig::Model { spec: None } => Box::new(ModelSource { spec: spec.clone(), target: spec.clone() }),
        SourceConfig::Model { spec: Some(other) } => {
            other.validate()?;
            if other.target_kind() != spec.target_kind() || other.d_max > spec.d_max || other.n_max > spec.n_max {
                return Err(Error::InvalidSpec(format!(
                    "generator model `{}` is incompatible with `{}`",
                    other.family.name(),
                    spec.family.name()
                )));
            }
            Box::new(ModelSource { spec: other.clone(), target: spec.clone() })
        }
        SourceConfig::GpRbf => {
            real_target()?;
            Box::new(GpSource { target: spec.clone() })
        }
        SourceConfig::NlrFixed { layers, units, activation, sigma2 } => {
            real_target()?;
            let gen = ModelSpec {
                family: Family::Nlr,
                hidden_layers: *layers,
                hidden_units: *units,
                activation: *activation,
                sigma2: *sigma2,
                ..spec.clone()
            };
            gen.validate()?;
            Box::new(ModelSource { spec: gen, target: spec.clone() })
        }
        SourceConfig::Csv { path } => {
            let kind = match spec.target_kind() {
                TargetKind::Real => CsvTarget::Regression,
                TargetKind::Class(2) => CsvTarget::BinaryClassification,
                _ => return Err(Error::InvalidSpec("csv source needs a regression or binary model".into())),
            };
            let data = ingest_csv(path, kind)?;
            if data.d_max > spec.d_max {
                return Err(Error::DimensionMismatch { expected: spec.d_max, got: data.d_max });
            }
            Box::new(CsvSource { data: embed_variable_dim(&data, spec.d_max)? })
        }
    })
}

/// Ancestral sampling from `spec`, reshaped to the experiment's `target`.
struct ModelSource {
    spec: ModelSpec,
    target: ModelSpec,
}

impl DatasetSource for ModelSource {
    fn name(&self) -> &'static str {
        self.spec.family.name()
    }

    fn sample(&self, n: usize, d: usize, x_dist: XDist, rng: &mut StreamRng)
        -> Result<(Dataset, Option<ThetaVector>)> {
        let theta = self.spec.sample_theta(rng);
        let d = d.min(self.spec.d_max);
        let data = self.spec.sample_dataset(&theta.values, n, Some(d), x_dist, rng)?;
        if self.spec == self.target {
            return Ok((data, Some(theta)));
        }
        Ok((embed_variable_dim(&data, self.target.d_max)?, None))
    }
}

struct GpSource {
    target: ModelSpec,
}

impl DatasetSource for GpSource {
    fn name(&self) -> &'static str {
        "gp_rbf"
    }

    fn sample(&self, n: usize, d: usize, x_dist: XDist, rng: &mut StreamRng)
        -> Result<(Dataset, Option<ThetaVector>)> {
        let low = gp_dataset(n, d, x_dist, rng)?;
        let mut x = vec![0.0; self.target.n_max * d];
        x[..n * d].copy_from_slice(&low.x);
        let mut y = vec![0.0; self.target.n_max];
        if let Targets::Real(v) = &low.y {
            y[..n].copy_from_slice(v);
        }
        let obs: Vec<bool> = (0..self.target.n_max).map(|i| i < n).collect();
        let padded = Dataset::new(self.target.n_max, d, x, Targets::Real(y), obs, vec![true; d])?;
        Ok((embed_variable_dim(&padded, self.target.d_max)?, None))
    }
}

/// Random subsets of a fixed, already-normalized table.
struct CsvSource {
    data: Dataset,
}

impl DatasetSource for CsvSource {
    fn name(&self) -> &'static str {
        "csv"
    }

    fn sample(&self, n: usize, _d: usize, _x_dist: XDist, rng: &mut StreamRng)
        -> Result<(Dataset, Option<ThetaVector>)> {
        let mut rows = rng.permutation(self.data.n_active);
        rows.truncate(n.min(self.data.n_active));
        Ok((self.data.select_rows(&rows), None))
    }
}

pub fn rbf_kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-0.5 * d2).exp()
}

/// Draws `n` points with `d` features and real targets from a zero-mean GP
/// with a unit-lengthscale RBF kernel plus observation noise `GP_NOISE`.
/// Returns a compact dataset (`n_max = n`, `d_max = d`).
pub fn gp_dataset(n: usize, d: usize, x_dist: XDist, rng: &mut StreamRng) -> Result<Dataset> {
    let x: Vec<f64> = (0..n * d)
        .map(|_| match x_dist {
            XDist::StdNormal => rng.normal(),
            XDist::UniformPm1 => rng.uniform(-1.0, 1.0),
        })
        .collect();
    let gram = DMatrix::from_fn(n, n, |i, j| rbf_kernel(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]));
    let chol = GP_JITTER
        .iter()
        .find_map(|j| (gram.clone() + DMatrix::identity(n, n) * *j).cholesky())
        .ok_or_else(|| Error::Cholesky("GP Gram matrix is singular even with jitter 1e-4".into()))?;
    let xi = DVector::from_vec(rng.normal_vec(n));
    let f = chol.l() * xi;
    let y: Vec<f64> = f.iter().map(|v| v + GP_NOISE.sqrt() * rng.normal()).collect();
    Dataset::new(n, d, x, Targets::Real(y), vec![true; n], vec![true; d])
}
