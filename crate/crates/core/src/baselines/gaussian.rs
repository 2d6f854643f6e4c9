use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal with a cached Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for GaussianDist {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianDist {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::DimensionMismatch { expected: k, got: cov.nrows() });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-10 * cov.abs().max().max(1.0) {
            return Err(Error::Cholesky(format!("covariance is not symmetric (max deviation {asym:e})")));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Cholesky("covariance is not positive definite".into()))?;
        Ok(Self { mean: DVector::from_vec(mean), cov, chol })
    }

    pub fn diagonal(mean: Vec<f64>, var: &[f64]) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(&DVector::from_column_slice(var)))
    }

    pub fn standard(k: usize) -> Self {
        Self::diagonal(vec![0.0; k], &vec![1.0; k]).expect("identity covariance")
    }

    /// From a precision matrix `A` and the vector `A μ`.
    pub fn from_precision(precision: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let pc = Cholesky::new(precision).ok_or_else(|| Error::Cholesky("precision is not positive definite".into()))?;
        let mean = pc.solve(&shift);
        let mut cov = pc.inverse();
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean.iter().copied().collect(), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self.chol.l().solve_lower_triangular(&diff).expect("nonsingular factor");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov() + z.norm_squared())
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let z = DVector::from_vec(rng.normal_vec(self.dim()));
        (self.chol.l() * z + &self.mean).iter().copied().collect()
    }

    /// `m x k` draws.
    pub fn sample_n(&self, m: usize, rng: &mut StreamRng) -> Tensor {
        let k = self.dim();
        let mut out = Tensor::zeros(m, k);
        for r in 0..m {
            out.row_mut(r).copy_from_slice(&self.sample(rng));
        }
        out
    }

    /// `KL(self ‖ other)` in closed form, floored at zero to absorb rounding.
    pub fn kl(&self, other: &GaussianDist) -> f64 {
        let k = self.dim() as f64;
        let inv_other = other.chol.inverse();
        let trace = (&inv_other * &self.cov).trace();
        let diff = &other.mean - &self.mean;
        let maha = diff.dot(&(&inv_other * &diff));
        (0.5 * (trace + maha - k + other.log_det_cov() - self.log_det_cov())).max(0.0)
    }
}
