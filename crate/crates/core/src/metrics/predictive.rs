use crate::error::{Error, Result};
use crate::models::{Dataset, Family, ModelSpec, Prediction};

/// A score of one posterior draw against a query dataset.
pub trait SampleMetric: Send + Sync {
    fn name(&self) -> &'static str;

    fn supports(&self, family: Family) -> bool;

    fn score(&self, spec: &ModelSpec, query: &Dataset, theta: &[f64]) -> Result<f64>;
}

/// `Σ_{i active} ‖xᵢ − μ‖²` over active dimensions.
pub fn gm_l2(data: &Dataset, mu: &[f64]) -> f64 {
    let feats = data.active_features();
    data.active_rows()
        .map(|i| feats.iter().map(|&j| (data.row(i)[j] - mu[j]).powi(2)).sum::<f64>())
        .sum()
}

/// Each observation is charged the squared distance to its nearest cluster
/// mean; `theta` holds `k` blocks of `d_max` means.
pub fn gmm_l2(data: &Dataset, theta: &[f64], k: usize) -> f64 {
    let d = data.d_max;
    let feats = data.active_features();
    data.active_rows()
        .map(|i| {
            (0..k)
                .map(|c| feats.iter().map(|&j| (data.row(i)[j] - theta[c * d + j]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// `Σ_{i active} (yᵢ − Mode[p(y | xᵢ, θ)])²`.
pub fn predictive_l2(spec: &ModelSpec, data: &Dataset, theta: &[f64]) -> Result<f64> {
    data.active_rows()
        .map(|i| {
            let y = data.real_target(i).ok_or_else(|| Error::InvalidSpec("real targets required".into()))?;
            match spec.predict_mode(theta, data.row(i))? {
                Prediction::Real(p) => Ok((y - p).powi(2)),
                Prediction::Class(_) => Err(Error::InvalidSpec("classifier used with an L2 metric".into())),
            }
        })
        .sum()
}

/// Percentage of active points whose label equals the predicted class.
pub fn accuracy(spec: &ModelSpec, data: &Dataset, theta: &[f64]) -> Result<f64> {
    if data.n_active == 0 {
        return Err(Error::Shape("accuracy of an empty dataset".into()));
    }
    let mut hits = 0usize;
    for i in data.active_rows() {
        let y = data.class_target(i).ok_or_else(|| Error::InvalidSpec("class targets required".into()))?;
        match spec.predict_mode(theta, data.row(i))? {
            Prediction::Class(c) => hits += usize::from(c == y),
            Prediction::Real(_) => return Err(Error::InvalidSpec("regressor used with accuracy".into())),
        }
    }
    Ok(100.0 * hits as f64 / data.n_active as f64)
}

fn check_theta(spec: &ModelSpec, theta: &[f64]) -> Result<()> {
    if theta.len() != spec.theta_dim() {
        return Err(Error::DimensionMismatch { expected: spec.theta_dim(), got: theta.len() });
    }
    Ok(())
}

pub struct GmL2;
pub struct GmmL2;
pub struct PredictiveL2;
pub struct Accuracy;

impl SampleMetric for GmL2 {
    fn name(&self) -> &'static str {
        "gm_l2"
    }

    fn supports(&self, family: Family) -> bool {
        family == Family::Gm
    }

    fn score(&self, spec: &ModelSpec, query: &Dataset, theta: &[f64]) -> Result<f64> {
        check_theta(spec, theta)?;
        Ok(gm_l2(query, theta))
    }
}

impl SampleMetric for GmmL2 {
    fn name(&self) -> &'static str {
        "gmm_l2"
    }

    fn supports(&self, family: Family) -> bool {
        family == Family::Gmm
    }

    fn score(&self, spec: &ModelSpec, query: &Dataset, theta: &[f64]) -> Result<f64> {
        check_theta(spec, theta)?;
        Ok(gmm_l2(query, theta, spec.k_clusters))
    }
}

impl SampleMetric for PredictiveL2 {
    fn name(&self) -> &'static str {
        "predictive_l2"
    }

    fn supports(&self, family: Family) -> bool {
        matches!(family, Family::Lr | Family::Nlr)
    }

    fn score(&self, spec: &ModelSpec, query: &Dataset, theta: &[f64]) -> Result<f64> {
        predictive_l2(spec, query, theta)
    }
}

impl SampleMetric for Accuracy {
    fn name(&self) -> &'static str {
        "accuracy"
    }

    fn supports(&self, family: Family) -> bool {
        matches!(family, Family::Lc | Family::Nlc)
    }

    fn score(&self, spec: &ModelSpec, query: &Dataset, theta: &[f64]) -> Result<f64> {
        accuracy(spec, query, theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Targets;

    fn points(xs: &[f64]) -> Dataset {
        Dataset::new(xs.len(), 1, xs.to_vec(), Targets::None, vec![true; xs.len()], vec![true]).unwrap()
    }

    #[test]
    fn gm_hand_sums() {
        assert_eq!(gm_l2(&points(&[0.0, 2.0]), &[1.0]), 2.0);
        assert_eq!(gm_l2(&points(&[3.5]), &[3.5]), 0.0);
    }

    #[test]
    fn gmm_nearest() {
        assert_eq!(gmm_l2(&points(&[1.0]), &[0.0, 10.0], 2), 1.0);
        let ds = points(&[0.5, -1.0, 2.0]);
        assert_eq!(gmm_l2(&ds, &[0.3, 0.3, 0.3], 3), gm_l2(&ds, &[0.3]));
    }

    #[test]
    fn lr_zero_predictor() {
        let spec = ModelSpec { n_max: 3, ..ModelSpec::new(Family::Lr, 1) };
        let ds = Dataset::new(3, 1, vec![1.0, 2.0, 3.0], Targets::Real(vec![1.0, -2.0, 0.5]), vec![true; 3], vec![true])
            .unwrap();
        assert_eq!(predictive_l2(&spec, &ds, &[0.0, 0.0]).unwrap(), 1.0 + 4.0 + 0.25);
        // w = 1, b = 0.5: residuals 1−1.5, −2−2.5, 0.5−3.5
        let by_hand = 0.25 + 20.25 + 9.0;
        assert_eq!(predictive_l2(&spec, &ds, &[1.0, 0.5]).unwrap(), by_hand);
    }
}
