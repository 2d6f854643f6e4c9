#![allow(dead_code)]

use amortize::diffcore::ParamStore;
use amortize::objectives::EstimatorConfig;

/// Narrow networks for gradient checks and unit-scale properties.
pub fn tiny(encoder: &str, head: &str) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::new(encoder, head);
    cfg.encoder.summary_dim = 8;
    cfg.encoder.transformer.layers = 1;
    cfg.encoder.transformer.model_dim = 8;
    cfg.encoder.transformer.ff_dim = 16;
    cfg.encoder.transformer.heads = 2;
    cfg.encoder.deepsets.hidden = 8;
    cfg.encoder.deepsets.embed_layers = 2;
    cfg.encoder.deepsets.regress_layers = 2;
    cfg.encoder.gru.layers = 2;
    cfg.encoder.gru.hidden = 8;
    cfg.head.gaussian.hidden = 8;
    cfg.head.flow.blocks = 2;
    cfg.head.flow.hidden = 8;
    cfg
}

/// The laptop-scale transformer used for training runs in tests.
pub fn desk(head: &str) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::new("transformer", head);
    cfg.encoder.summary_dim = 16;
    cfg.encoder.transformer.layers = 1;
    cfg.encoder.transformer.model_dim = 16;
    cfg.encoder.transformer.ff_dim = 32;
    cfg.encoder.transformer.heads = 2;
    cfg.head.gaussian.hidden = 32;
    cfg.head.flow.hidden = 32;
    cfg
}

pub fn set(store: &mut ParamStore, name: &str, values: &[f64]) {
    let id = store.id(name).unwrap_or_else(|| panic!("missing {name}"));
    store.value_mut(id).data_mut().copy_from_slice(values);
}

/// Makes a Gaussian head ignore its input and output `(μ, log σ)`.
pub fn force_gaussian(store: &mut ParamStore, mu: &[f64], log_sigma: &[f64]) {
    let id = store.id("head.gaussian.1.weight").expect("one hidden layer");
    store.value_mut(id).data_mut().fill(0.0);
    set(store, "head.gaussian.1.bias", &[mu, log_sigma].concat());
}

/// Posterior mean and log evidence of `exp(log_joint)` by the midpoint rule on
/// a `[lo, hi]^k` grid with `n` cells per axis (k = 1 or 2).
pub fn grid_posterior(log_joint: impl Fn(&[f64]) -> f64, k: usize, lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / n as f64;
    let axis: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect();
    let points: Vec<Vec<f64>> = match k {
        1 => axis.iter().map(|a| vec![*a]).collect(),
        2 => axis.iter().flat_map(|a| axis.iter().map(move |b| vec![*a, *b])).collect(),
        _ => panic!("grid oracle supports k <= 2"),
    };
    let logs: Vec<f64> = points.iter().map(|p| log_joint(p)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mean = (0..k).map(|j| points.iter().zip(&weights).map(|(p, w)| p[j] * w).sum::<f64>() / z).collect();
    (mean, top + (z * h.powi(k as i32)).ln())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Standard error of the mean from `batches` contiguous batch means, which
/// stays honest for autocorrelated chains.
pub fn batch_means_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&v[b * size..(b + 1) * size])).collect();
    (variance(&means) / batches as f64).sqrt()
}

pub fn lag1_autocorrelation(v: &[f64]) -> f64 {
    let m = mean(v);
    let num: f64 = v.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    num / den
}
