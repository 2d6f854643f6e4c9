//! Probabilistic models: standard-normal priors over θ and the six likelihood
//! families (GM, GMM, LR, LC, NLR, NLC), evaluated over padded, masked datasets.

mod dataset;
pub mod families;
mod layout;
mod mlp;

use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, Targets};
pub use families::{LikelihoodModel, TargetKind};
pub use layout::{LayoutEntry, ThetaLayout, ThetaVector};
pub use mlp::Mlp;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const DEFAULT_N_MAX: usize = 128;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gm,
    Gmm,
    Lr,
    Lc,
    Nlr,
    Nlc,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gm => "gm",
            Family::Gmm => "gmm",
            Family::Lr => "lr",
            Family::Lc => "lc",
            Family::Nlr => "nlr",
            Family::Nlc => "nlc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Distribution of synthetic inputs for the supervised families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XDist {
    #[default]
    StdNormal,
    UniformPm1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Real(f64),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub d_max: usize,
    #[serde(default = "defaults::k_clusters")]
    pub k_clusters: usize,
    #[serde(default = "defaults::n_classes")]
    pub n_classes: usize,
    #[serde(default = "defaults::hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "defaults::hidden_units")]
    pub hidden_units: usize,
    #[serde(default = "defaults::activation")]
    pub activation: Activation,
    #[serde(default = "defaults::sigma2")]
    pub sigma2: f64,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::n_max")]
    pub n_max: usize,
}

mod defaults {
    use super::Activation;
    pub fn k_clusters() -> usize {
        2
    }
    pub fn n_classes() -> usize {
        2
    }
    pub fn hidden_layers() -> usize {
        1
    }
    pub fn hidden_units() -> usize {
        32
    }
    pub fn activation() -> Activation {
        Activation::Tanh
    }
    pub fn sigma2() -> f64 {
        0.25
    }
    pub fn tau() -> f64 {
        0.1
    }
    pub fn n_max() -> usize {
        super::DEFAULT_N_MAX
    }
}

/// Sums terms in a canonical (value-sorted) order so the result does not
/// depend on the order the terms were produced in.
pub fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().fold(0.0, |a, b| a + b)
}

impl ModelSpec {
    pub fn new(family: Family, d_max: usize) -> Self {
        Self {
            family,
            d_max,
            k_clusters: defaults::k_clusters(),
            n_classes: defaults::n_classes(),
            hidden_layers: defaults::hidden_layers(),
            hidden_units: defaults::hidden_units(),
            activation: defaults::activation(),
            sigma2: defaults::sigma2(),
            tau: defaults::tau(),
            n_max: defaults::n_max(),
        }
    }

    pub fn with_dim(&self, d: usize) -> Self {
        Self { d_max: d, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.d_max == 0 {
            return bad("d_max must be at least 1");
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2 must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if self.family == Family::Gmm && self.k_clusters < 2 {
            return bad("GMM needs k_clusters >= 2");
        }
        if matches!(self.family, Family::Lc | Family::Nlc) && self.n_classes < 2 {
            return bad("classification needs n_classes >= 2");
        }
        if matches!(self.family, Family::Nlr | Family::Nlc)
            && (!(1..=2).contains(&self.hidden_layers) || self.hidden_units == 0)
        {
            return bad("MLP families need 1 or 2 hidden layers of width >= 1");
        }
        if self.n_max == 0 {
            return bad("n_max must be at least 1");
        }
        Ok(())
    }

    pub fn model(&self) -> Box<dyn LikelihoodModel> {
        families::build(self)
    }

    pub fn layout(&self) -> ThetaLayout {
        self.model().layout()
    }

    pub fn theta_dim(&self) -> usize {
        match self.family {
            Family::Gm => self.d_max,
            Family::Gmm => self.k_clusters * self.d_max,
            Family::Lr => self.d_max + 1,
            Family::Lc => self.n_classes * self.d_max,
            Family::Nlr => Mlp::new(self.d_max, self.hidden_units, self.hidden_layers, 1, self.activation)
                .param_count(),
            Family::Nlc => {
                Mlp::new(self.d_max, self.hidden_units, self.hidden_layers, self.n_classes, self.activation)
                    .param_count()
            }
        }
    }

    pub fn target_kind(&self) -> TargetKind {
        self.model().target_kind()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let k = self.theta_dim();
        if theta.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: theta.len() });
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.d_max != self.d_max {
            return Err(Error::DimensionMismatch { expected: self.d_max, got: data.d_max });
        }
        data.validate()?;
        match (self.target_kind(), &data.y) {
            (TargetKind::None, Targets::None) | (TargetKind::Real, Targets::Real(_)) => Ok(()),
            (TargetKind::Class(c), Targets::Class(y)) => {
                for i in data.active_rows() {
                    if y[i] >= c {
                        return Err(Error::InvalidClass { index: y[i], classes: c });
                    }
                }
                Ok(())
            }
            _ => Err(Error::MaskInconsistent("targets do not match the model family".into())),
        }
    }

    pub fn empty_targets(&self, n: usize) -> Targets {
        match self.target_kind() {
            TargetKind::None => Targets::None,
            TargetKind::Real => Targets::Real(vec![0.0; n]),
            TargetKind::Class(_) => Targets::Class(vec![0; n]),
        }
    }

    pub fn log_prior(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(prior_terms_sum(theta.iter().copied()))
    }

    /// Prior restricted to components where `mask` is true.
    pub fn log_prior_masked(&self, theta: &[f64], mask: &[bool]) -> Result<f64> {
        self.check_theta(theta)?;
        if mask.len() != theta.len() {
            return Err(Error::DimensionMismatch { expected: theta.len(), got: mask.len() });
        }
        Ok(prior_terms_sum(theta.iter().zip(mask).filter(|(_, m)| **m).map(|(t, _)| *t)))
    }

    pub fn log_likelihood(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_data(data)?;
        Ok(canonical_sum(self.model().observation_terms(theta, data)))
    }

    pub fn log_joint(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        Ok(self.log_prior(theta)? + self.log_likelihood(theta, data)?)
    }

    /// `(log p(D, θ), ∇_θ log p(D, θ))`.
    pub fn log_joint_grad(&self, theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta)?;
        self.check_data(data)?;
        let model = self.model();
        Ok(joint_grad_unchecked(model.as_ref(), theta, data))
    }

    pub fn sample_theta(&self, rng: &mut StreamRng) -> ThetaVector {
        let layout = self.layout();
        let values = rng.normal_vec(layout.len());
        ThetaVector { values, layout }
    }

    /// Draws `n` active observations (prefix rows) with the first `d_active`
    /// features active. `d_active = None` uses every feature.
    pub fn sample_dataset(
        &self,
        theta: &[f64],
        n: usize,
        d_active: Option<usize>,
        x_dist: XDist,
        rng: &mut StreamRng,
    ) -> Result<Dataset> {
        self.check_theta(theta)?;
        if n > self.n_max {
            return Err(Error::TooManyObservations { n, max: self.n_max });
        }
        let d_active = d_active.unwrap_or(self.d_max);
        if d_active == 0 || d_active > self.d_max {
            return Err(Error::InvalidSpec(format!("d_active {d_active} outside [1, {}]", self.d_max)));
        }
        let mut data = Dataset::empty(self.n_max, self.d_max, d_active, self.empty_targets(self.n_max));
        for m in data.obs_mask.iter_mut().take(n) {
            *m = true;
        }
        data.n_active = n;
        self.model().simulate(theta, &mut data, x_dist, rng);
        Ok(data)
    }

    pub fn predict_mode(&self, theta: &[f64], x: &[f64]) -> Result<Prediction> {
        self.check_theta(theta)?;
        if x.len() != self.d_max {
            return Err(Error::DimensionMismatch { expected: self.d_max, got: x.len() });
        }
        self.model().predict(theta, x)
    }
}

fn prior_terms_sum(theta: impl Iterator<Item = f64>) -> f64 {
    canonical_sum(theta.map(|t| -HALF_LN_2PI - 0.5 * t * t).collect())
}

/// Log-joint and gradient without validation; for inner loops.
pub(crate) fn joint_grad_unchecked(
    model: &dyn LikelihoodModel,
    theta: &[f64],
    data: &Dataset,
) -> (f64, Vec<f64>) {
    let ll = canonical_sum(model.observation_terms(theta, data));
    let lp = prior_terms_sum(theta.iter().copied());
    let mut g = model.grad_log_likelihood(theta, data);
    for (gi, t) in g.iter_mut().zip(theta) {
        *gi -= t;
    }
    (lp + ll, g)
}

/// Log-likelihood and its gradient without validation; for inner loops.
pub(crate) fn likelihood_grad_unchecked(
    model: &dyn LikelihoodModel,
    theta: &[f64],
    data: &Dataset,
) -> (f64, Vec<f64>) {
    (canonical_sum(model.observation_terms(theta, data)), model.grad_log_likelihood(theta, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_point(spec: &ModelSpec, x: &[f64], y: Targets) -> Dataset {
        let mut xs = vec![0.0; spec.n_max * spec.d_max];
        xs[..x.len()].copy_from_slice(x);
        let mut obs = vec![false; spec.n_max];
        obs[0] = true;
        Dataset::new(spec.n_max, spec.d_max, xs, y, obs, vec![true; spec.d_max]).unwrap()
    }

    fn padded_y(n: usize, v: f64) -> Targets {
        let mut y = vec![0.0; n];
        y[0] = v;
        Targets::Real(y)
    }

    #[test]
    fn theta_dims() {
        assert_eq!(ModelSpec::new(Family::Gm, 2).theta_dim(), 2);
        assert_eq!(ModelSpec::new(Family::Lr, 100).theta_dim(), 101);
        let mut nlr = ModelSpec::new(Family::Nlr, 1);
        nlr.hidden_units = 32;
        nlr.hidden_layers = 1;
        assert_eq!(nlr.theta_dim(), 97);
        for fam in [Family::Gm, Family::Gmm, Family::Lr, Family::Lc, Family::Nlr, Family::Nlc] {
            let s = ModelSpec::new(fam, 3);
            assert_eq!(s.theta_dim(), s.layout().len(), "{fam:?}");
        }
    }

    #[test]
    fn prior_values() {
        let s = ModelSpec::new(Family::Gm, 3);
        assert_abs_diff_eq!(s.log_prior(&[0.0; 3]).unwrap(), -1.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        let s1 = ModelSpec::new(Family::Gm, 1);
        assert_abs_diff_eq!(s1.log_prior(&[1.0]).unwrap(), -1.418_938_533_204_672_7, epsilon = 1e-12);
        let s2 = ModelSpec::new(Family::Gm, 2);
        assert_eq!(s2.log_prior(&[1.0, 0.0]).unwrap(), s2.log_prior(&[0.0, 1.0]).unwrap());
        assert!(matches!(s2.log_prior(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn likelihood_examples() {
        let gm = ModelSpec::new(Family::Gm, 1);
        let d = one_point(&gm, &[0.0], Targets::None);
        assert_abs_diff_eq!(gm.log_likelihood(&[0.0], &d).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        assert_abs_diff_eq!(gm.log_joint(&[0.0], &d).unwrap(), -1.837_877_066_409_345, epsilon = 1e-12);

        let lr = ModelSpec::new(Family::Lr, 1);
        let d = one_point(&lr, &[0.0], padded_y(lr.n_max, 0.0));
        assert_abs_diff_eq!(lr.log_likelihood(&[0.0, 0.0], &d).unwrap(), -0.225_791_352_644_727_4, epsilon = 1e-12);

        let lc = ModelSpec::new(Family::Lc, 3);
        let mut y = vec![0; lc.n_max];
        y[0] = 1;
        let d = one_point(&lc, &[0.4, -2.0, 1.0], Targets::Class(y));
        assert_abs_diff_eq!(lc.log_likelihood(&[0.0; 6], &d).unwrap(), 0.5f64.ln(), epsilon = 1e-12);

        let gmm = ModelSpec::new(Family::Gmm, 1);
        let d = one_point(&gmm, &[0.0], Targets::None);
        assert_abs_diff_eq!(gmm.log_likelihood(&[0.0, 0.0], &d).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn invalid_class_rejected() {
        let lc = ModelSpec::new(Family::Lc, 1);
        let mut y = vec![0; lc.n_max];
        y[0] = 5;
        let d = one_point(&lc, &[1.0], Targets::Class(y));
        assert!(matches!(lc.log_likelihood(&[0.0, 0.0], &d), Err(Error::InvalidClass { .. })));
    }

    #[test]
    fn empty_dataset_joint_is_prior() {
        let s = ModelSpec::new(Family::Lr, 2);
        let d = Dataset::empty(s.n_max, 2, 2, s.empty_targets(s.n_max));
        let th = [0.3, -0.2, 1.1];
        assert_eq!(s.log_joint(&th, &d).unwrap(), s.log_prior(&th).unwrap());
    }

    #[test]
    fn predict_mode_examples() {
        let lr = ModelSpec::new(Family::Lr, 1);
        assert_eq!(lr.predict_mode(&[2.0, 1.0], &[3.0]).unwrap(), Prediction::Real(7.0));
        let mut nlr = ModelSpec::new(Family::Nlr, 2);
        nlr.hidden_units = 4;
        let mut th = vec![0.0; nlr.theta_dim()];
        *th.last_mut().unwrap() = 0.37;
        assert_eq!(nlr.predict_mode(&th, &[1.0, -1.0]).unwrap(), Prediction::Real(0.37));
        let gm = ModelSpec::new(Family::Gm, 1);
        assert!(matches!(gm.predict_mode(&[0.0], &[0.0]), Err(Error::NotPredictive(_))));
        // LC: W rows give logits (0.3, 0.9) at x = 1.
        let lc = ModelSpec::new(Family::Lc, 1);
        assert_eq!(lc.predict_mode(&[0.3, 0.9], &[1.0]).unwrap(), Prediction::Class(1));
    }

    #[test]
    fn sample_theta_is_deterministic() {
        let s = ModelSpec::new(Family::Lc, 4);
        let a = s.sample_theta(&mut StreamRng::from_seed(9));
        let b = s.sample_theta(&mut StreamRng::from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_observations() {
        let s = ModelSpec::new(Family::Gm, 1);
        let r = s.sample_dataset(&[0.0], 129, None, XDist::StdNormal, &mut StreamRng::from_seed(0));
        assert!(matches!(r, Err(Error::TooManyObservations { .. })));
        let d = s.sample_dataset(&[0.0], 0, None, XDist::StdNormal, &mut StreamRng::from_seed(0)).unwrap();
        assert_eq!(d.n_active, 0);
        assert!(d.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::new(Family::Gmm, 2);
        s.k_clusters = 1;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::new(Family::Lr, 2);
        s.sigma2 = 0.0;
        assert!(s.validate().is_err());
        assert!(ModelSpec::new(Family::Nlc, 2).validate().is_ok());
    }

    #[test]
    fn spec_toml_defaults() {
        let s: ModelSpec = toml::from_str("family = \"nlr\"\nd_max = 1\nactivation = \"relu\"").unwrap();
        assert_eq!(s.hidden_units, 32);
        assert_eq!(s.sigma2, 0.25);
        assert_eq!(s.tau, 0.1);
        assert_eq!(s.n_max, 128);
    }
}
