use crate::baselines::{GaussianDist, PosteriorDensity};
use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::objectives::Estimate;
use crate::rng::StreamKey;

/// `½ KL(p‖q) + ½ KL(q‖p)` in closed form.
pub fn symmetric_kl_gaussian(p: &GaussianDist, q: &GaussianDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    Ok(0.5 * p.kl(q) + 0.5 * q.kl(p))
}

/// Monte Carlo `½ E_p[log p − log q] + ½ E_q[log q − log p]` with `m`
/// draws from each side; p draws come from `key.tag("p")`, q draws from
/// `key.tag("q")`.
pub fn symmetric_kl_mc(
    q: &dyn PosteriorDensity,
    data: &Dataset,
    p: &GaussianDist,
    m: usize,
    key: &StreamKey,
) -> Result<Estimate> {
    if m == 0 {
        return Err(Error::Shape("symmetric KL needs at least one sample".into()));
    }
    let from_p = p.sample_n(m, &mut key.tag("p").rng());
    let lq_at_p = q.log_q(data, &from_p)?;
    let a: Vec<f64> = (0..m).map(|r| p.log_pdf(from_p.row(r)) - lq_at_p[r]).collect();
    let (from_q, lq) = q.sample_with_log_q(data, m, &key.tag("q"))?;
    if from_q.cols() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: from_q.cols() });
    }
    let b: Vec<f64> = (0..m).map(|r| lq[r] - p.log_pdf(from_q.row(r))).collect();
    let (ea, eb) = (Estimate::from_samples(&a), Estimate::from_samples(&b));
    Ok(Estimate { mean: 0.5 * ea.mean + 0.5 * eb.mean, se: 0.5 * (ea.se.powi(2) + eb.se.powi(2)).sqrt() })
}
