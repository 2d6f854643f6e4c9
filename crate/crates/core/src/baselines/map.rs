use serde::{Deserialize, Serialize};

use crate::diffcore::{xavier_bound, Adam};
use crate::error::{Error, Result};
use crate::models::{joint_grad_unchecked, Dataset, ModelSpec};
use crate::rng::{StreamKey, StreamRng};

/// The grid searched for per-dataset optimizers.
pub const LR_GRID: [f64; 6] = [0.01, 0.003, 0.001, 0.0003, 0.0001, 0.00003];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapInit {
    PriorSample,
    Xavier,
    Given(Vec<f64>),
}

/// Objective (log-joint) before the first step and after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTrajectory {
    pub theta: Vec<f64>,
    pub objective: Vec<f64>,
}

impl MapTrajectory {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("objective at init")
    }
}

/// Xavier-uniform draws for weight matrices (shape `[out, in]` or `[in]`),
/// zeros for bias entries.
pub fn xavier_theta(spec: &ModelSpec, rng: &mut StreamRng) -> Vec<f64> {
    let layout = spec.layout();
    let mut theta = vec![0.0; layout.len()];
    for e in layout.entries() {
        if e.feature_axis.is_none() && (e.name == "b" || e.name.ends_with("bias")) {
            continue;
        }
        let (fan_out, fan_in) = match e.shape.as_slice() {
            [n] => (1, *n),
            [o, i] => (*o, *i),
            _ => (1, e.len()),
        };
        let bound = xavier_bound(fan_in, fan_out);
        for v in &mut theta[e.offset..e.offset + e.len()] {
            *v = rng.uniform(-bound, bound);
        }
    }
    theta
}

pub fn initial_theta(spec: &ModelSpec, init: &MapInit, rng: &mut StreamRng) -> Result<Vec<f64>> {
    match init {
        MapInit::PriorSample => Ok(spec.sample_theta(rng).values),
        MapInit::Xavier => Ok(xavier_theta(spec, rng)),
        MapInit::Given(t) if t.len() == spec.theta_dim() => Ok(t.clone()),
        MapInit::Given(t) => Err(Error::DimensionMismatch { expected: spec.theta_dim(), got: t.len() }),
    }
}

/// Adam ascent on `log p(D, θ)`.
pub fn map_optimize(
    spec: &ModelSpec,
    data: &Dataset,
    init: &MapInit,
    lr: f64,
    iters: usize,
    rng: &mut StreamRng,
) -> Result<MapTrajectory> {
    let theta = initial_theta(spec, init, rng)?;
    map_optimize_with(spec, data, theta, lr, iters, |_, _, _| {})
}

/// [`map_optimize`] from an explicit start, calling `on_step(iter, θ,
/// objective)` at the start (iter 0) and after every step.
pub fn map_optimize_with(
    spec: &ModelSpec,
    data: &Dataset,
    mut theta: Vec<f64>,
    lr: f64,
    iters: usize,
    mut on_step: impl FnMut(usize, &[f64], f64),
) -> Result<MapTrajectory> {
    spec.log_joint(&theta, data)?;
    let model = spec.model();
    let mut adam = Adam::new(theta.len());
    let mut objective = Vec::with_capacity(iters + 1);
    let (mut value, mut grad) = joint_grad_unchecked(model.as_ref(), &theta, data);
    on_step(0, &theta, value);
    objective.push(value);
    for it in 0..iters {
        let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam.step(&mut theta, &descent, lr);
        (value, grad) = joint_grad_unchecked(model.as_ref(), &theta, data);
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "MAP objective".into(), iter: Some(it) });
        }
        on_step(it + 1, &theta, value);
        objective.push(value);
    }
    Ok(MapTrajectory { theta, objective })
}

/// The grid value with the best mean final log-joint over `datasets`;
/// ties go to the smaller learning rate. Every grid value starts from the
/// same prior-sample initializations.
pub fn lr_grid_search(
    spec: &ModelSpec,
    datasets: &[Dataset],
    grid: &[f64],
    iters: usize,
    key: &StreamKey,
) -> Result<f64> {
    if grid.is_empty() || datasets.is_empty() {
        return Err(Error::InvalidSpec("grid search needs a grid and at least one dataset".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &lr in grid {
        let mut total = 0.0;
        for (i, data) in datasets.iter().enumerate() {
            let mut rng = key.index(i as u64).rng();
            total += map_optimize(spec, data, &MapInit::PriorSample, lr, iters, &mut rng)?.final_objective();
        }
        let score = total / datasets.len() as f64;
        let better = match best {
            None => true,
            Some((b_lr, b_score)) => score > b_score || (score == b_score && lr < b_lr),
        };
        if better {
            best = Some((lr, score));
        }
    }
    Ok(best.expect("non-empty grid").0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    #[test]
    fn zero_lr_stays_put() {
        let spec = ModelSpec::new(Family::Gm, 2);
        let ds = spec.sample_dataset(&[1.0, -1.0], 10, None, Default::default(), &mut StreamRng::from_seed(1)).unwrap();
        let t = map_optimize(&spec, &ds, &MapInit::Given(vec![0.3, 0.4]), 0.0, 50, &mut StreamRng::from_seed(0)).unwrap();
        assert_eq!(t.theta, vec![0.3, 0.4]);
        assert_eq!(t.objective.len(), 51);
    }

    #[test]
    fn grid_edge_cases() {
        let spec = ModelSpec::new(Family::Gm, 1);
        let ds = spec.sample_dataset(&[2.0], 20, None, Default::default(), &mut StreamRng::from_seed(2)).unwrap();
        let key = StreamKey::root(3);
        assert_eq!(lr_grid_search(&spec, &[ds.clone()], &[0.001], 10, &key).unwrap(), 0.001);
        assert_eq!(lr_grid_search(&spec, &[ds], &[0.0, 0.01], 100, &key).unwrap(), 0.01);
    }

    #[test]
    fn xavier_zero_biases() {
        let spec = ModelSpec::new(Family::Nlr, 2);
        let theta = xavier_theta(&spec, &mut StreamRng::from_seed(0));
        let layout = spec.layout();
        let b = layout.get("layer0.bias").unwrap();
        assert!(theta[b.offset..b.offset + b.len()].iter().all(|v| *v == 0.0));
        let w = layout.get("layer0.weight").unwrap();
        assert!(theta[w.offset..w.offset + w.len()].iter().any(|v| *v != 0.0));
        let lr = ModelSpec::new(Family::Lr, 3);
        let t = xavier_theta(&lr, &mut StreamRng::from_seed(0));
        assert_eq!(t[3], 0.0);
    }
}
