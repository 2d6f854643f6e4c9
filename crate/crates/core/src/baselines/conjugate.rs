//! Closed-form posteriors and evidences of the conjugate families.

use nalgebra::{DMatrix, DVector};

use super::GaussianDist;
use crate::error::{Error, Result};
use crate::models::{Dataset, Family, ModelSpec};

/// Posterior over the mean under a unit-variance likelihood and standard
/// normal prior: `N(Σ xᵢ / (n + 1), I / (n + 1))` on active dimensions,
/// the prior elsewhere.
pub fn analytic_posterior_gm(data: &Dataset) -> Result<GaussianDist> {
    data.validate()?;
    let n = data.n_active as f64;
    let mut mean = vec![0.0; data.d_max];
    let mut var = vec![1.0; data.d_max];
    for j in data.active_features() {
        let s: f64 = data.active_rows().map(|i| data.row(i)[j]).sum();
        mean[j] = s / (n + 1.0);
        var[j] = 1.0 / (n + 1.0);
    }
    GaussianDist::diagonal(mean, &var)
}

/// Design matrix `[X, 1]` over active rows, with inactive feature columns zeroed.
fn augmented_design(data: &Dataset) -> DMatrix<f64> {
    let rows: Vec<usize> = data.active_rows().collect();
    let active = data.active_features();
    let mut x = DMatrix::zeros(rows.len(), data.d_max + 1);
    for (r, &i) in rows.iter().enumerate() {
        for &j in &active {
            x[(r, j)] = data.row(i)[j];
        }
        x[(r, data.d_max)] = 1.0;
    }
    x
}

fn targets(data: &Dataset) -> Result<DVector<f64>> {
    data.active_rows()
        .map(|i| data.real_target(i).ok_or_else(|| Error::InvalidSpec("regression targets required".into())))
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// Posterior over `(w, b)`: precision `I + X̃ᵀX̃/σ²`, mean `A⁻¹X̃ᵀy/σ²`.
pub fn analytic_posterior_lr(data: &Dataset, sigma2: f64) -> Result<GaussianDist> {
    data.validate()?;
    let x = augmented_design(data);
    let y = targets(data)?;
    let k = data.d_max + 1;
    let precision = DMatrix::identity(k, k) + x.transpose() * &x / sigma2;
    let shift = x.transpose() * y / sigma2;
    GaussianDist::from_precision(precision, shift)
}

/// Closed-form posterior for the conjugate families.
pub fn analytic_posterior(spec: &ModelSpec, data: &Dataset) -> Result<GaussianDist> {
    match spec.family {
        Family::Gm => analytic_posterior_gm(data),
        Family::Lr => analytic_posterior_lr(data, spec.sigma2),
        other => Err(Error::InvalidSpec(format!("no closed-form posterior for `{}`", other.name()))),
    }
}

/// `log p(D|θ₀) + log p(θ₀) − log p(θ₀|D)`, which equals `log p(D)` for any θ₀.
pub fn evidence_identity(spec: &ModelSpec, data: &Dataset, posterior: &GaussianDist, theta0: &[f64]) -> Result<f64> {
    Ok(spec.log_joint(theta0, data)? - posterior.log_pdf(theta0))
}

pub fn log_evidence_gm(spec: &ModelSpec, data: &Dataset) -> Result<f64> {
    let post = analytic_posterior_gm(data)?;
    evidence_identity(spec, data, &post, &post.mean().to_vec())
}

pub fn log_evidence_lr(spec: &ModelSpec, data: &Dataset) -> Result<f64> {
    let post = analytic_posterior_lr(data, spec.sigma2)?;
    evidence_identity(spec, data, &post, &post.mean().to_vec())
}

pub fn log_evidence(spec: &ModelSpec, data: &Dataset) -> Result<f64> {
    match spec.family {
        Family::Gm => log_evidence_gm(spec, data),
        Family::Lr => log_evidence_lr(spec, data),
        other => Err(Error::InvalidSpec(format!("no closed-form evidence for `{}`", other.name()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Targets;
    use approx::assert_abs_diff_eq;

    fn gm(xs: &[f64]) -> Dataset {
        Dataset::new(xs.len(), 1, xs.to_vec(), Targets::None, vec![true; xs.len()], vec![true]).unwrap()
    }

    #[test]
    fn gm_examples() {
        let p = analytic_posterior_gm(&gm(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(p.mean()[0], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.variances()[0], 1.0 / 3.0, epsilon = 1e-15);
        let p = analytic_posterior_gm(&gm(&[1.0])).unwrap();
        assert_eq!((p.mean()[0], p.variances()[0]), (0.5, 0.5));
        let empty = Dataset::empty(3, 2, 2, Targets::None);
        let p = analytic_posterior_gm(&empty).unwrap();
        assert_eq!(p, GaussianDist::standard(2));
    }

    #[test]
    fn gm_evidence_examples() {
        let spec = ModelSpec { n_max: 4, ..ModelSpec::new(Family::Gm, 1) };
        let mut one = Dataset::empty(4, 1, 1, Targets::None);
        assert_abs_diff_eq!(log_evidence_gm(&spec, &one).unwrap(), 0.0, epsilon = 1e-14);
        one.obs_mask[0] = true;
        one.n_active = 1;
        assert_abs_diff_eq!(log_evidence_gm(&spec, &one).unwrap(), -0.5 * (4.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn lr_single_point() {
        let ds = Dataset::new(1, 1, vec![0.0], Targets::Real(vec![1.0]), vec![true], vec![true]).unwrap();
        let p = analytic_posterior_lr(&ds, 0.25).unwrap();
        assert_abs_diff_eq!(p.mean()[1], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variances()[1], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(p.mean()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variances()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn non_conjugate_rejected() {
        let spec = ModelSpec::new(Family::Nlr, 1);
        let ds = Dataset::empty(2, 1, 1, Targets::Real(vec![0.0; 2]));
        assert!(analytic_posterior(&spec, &ds).is_err());
    }
}
