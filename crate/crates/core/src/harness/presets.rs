//! Named experiment settings at paper scale. Combine with a scale divisor
//! for desk runs.

use std::path::PathBuf;

use super::config::{EvalConfig, ExperimentConfig, MisspecConfig};
use crate::datagen::{DimMode, GeneratorConfig, SourceConfig};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::HeadConfig;
use crate::models::{Activation, Family, ModelSpec, XDist};
use crate::objectives::TrainConfig;

fn base(name: &str, model: ModelSpec, iterations: usize, warmup: usize) -> ExperimentConfig {
    let generator = GeneratorConfig::default();
    let metrics = match model.family {
        Family::Gm | Family::Lr => vec!["predictive".into(), "sym_kl".into()],
        _ => vec!["predictive".into()],
    };
    ExperimentConfig {
        name: name.into(),
        seed: 0,
        output_dir: PathBuf::from("runs").join(name),
        model,
        generator,
        encoder: EncoderConfig::default(),
        head: HeadConfig::default(),
        train: TrainConfig::new("reverse_kl", iterations, warmup),
        checkpoint_every: 0,
        eval: EvalConfig { metrics, ..EvalConfig::default() },
        baseline: Default::default(),
        misspec: MisspecConfig::default(),
        tabular: Default::default(),
    }
}

fn nonlinear(family: Family, d: usize, layers: usize, activation: Activation) -> ModelSpec {
    ModelSpec { hidden_layers: layers, activation, ..ModelSpec::new(family, d) }
}

/// Variable-dimension training draws inputs from U(-1, 1).
fn variable(mut c: ExperimentConfig) -> ExperimentConfig {
    c.generator.dim_mode = Some(DimMode::UniformUpTo(c.model.d_max));
    c.generator.x_dist = XDist::UniformPm1;
    c
}

fn classes(mut m: ModelSpec, c: usize) -> ModelSpec {
    m.n_classes = c;
    m
}

type Preset = fn() -> ExperimentConfig;

const PRESETS: &[(&str, Preset)] = &[
    ("gm_1d", || base("gm_1d", ModelSpec::new(Family::Gm, 1), 20_000, 5_000)),
    ("gm_2d", || base("gm_2d", ModelSpec::new(Family::Gm, 2), 20_000, 5_000)),
    ("gm_100d", || base("gm_100d", ModelSpec::new(Family::Gm, 100), 20_000, 5_000)),
    ("gmm_2d_2c", || base("gmm_2d_2c", ModelSpec::new(Family::Gmm, 2), 200_000, 50_000)),
    ("gmm_5d_5c", || base("gmm_5d_5c", ModelSpec { k_clusters: 5, ..ModelSpec::new(Family::Gmm, 5) }, 200_000, 50_000)),
    ("lr_1d", || base("lr_1d", ModelSpec::new(Family::Lr, 1), 50_000, 12_500)),
    ("lr_100d", || base("lr_100d", ModelSpec::new(Family::Lr, 100), 50_000, 12_500)),
    ("nlr_tanh_1l", || base("nlr_tanh_1l", nonlinear(Family::Nlr, 1, 1, Activation::Tanh), 100_000, 25_000)),
    ("nlr_relu_1l", || base("nlr_relu_1l", nonlinear(Family::Nlr, 1, 1, Activation::Relu), 100_000, 25_000)),
    ("nlr_tanh_2l", || base("nlr_tanh_2l", nonlinear(Family::Nlr, 1, 2, Activation::Tanh), 100_000, 25_000)),
    ("nlr_relu_25d", || base("nlr_relu_25d", nonlinear(Family::Nlr, 25, 1, Activation::Relu), 100_000, 25_000)),
    ("lc_2d", || base("lc_2d", ModelSpec::new(Family::Lc, 2), 50_000, 12_500)),
    ("lc_2d_5c", || base("lc_2d_5c", classes(ModelSpec::new(Family::Lc, 2), 5), 50_000, 12_500)),
    ("lc_100d", || base("lc_100d", ModelSpec::new(Family::Lc, 100), 50_000, 12_500)),
    ("nlc_relu_2d", || base("nlc_relu_2d", nonlinear(Family::Nlc, 2, 1, Activation::Relu), 100_000, 25_000)),
    ("nlc_tanh_25d", || base("nlc_tanh_25d", nonlinear(Family::Nlc, 25, 1, Activation::Tanh), 100_000, 25_000)),
    ("gm_vardim", || variable(base("gm_vardim", ModelSpec::new(Family::Gm, 100), 50_000, 12_500))),
    ("gmm_vardim", || variable(base("gmm_vardim", ModelSpec::new(Family::Gmm, 5), 500_000, 125_000))),
    ("lr_vardim", || variable(base("lr_vardim", ModelSpec::new(Family::Lr, 100), 100_000, 25_000))),
    ("nlr_vardim", || variable(base("nlr_vardim", nonlinear(Family::Nlr, 100, 1, Activation::Relu), 250_000, 62_500))),
    ("lc_vardim", || variable(base("lc_vardim", ModelSpec::new(Family::Lc, 100), 100_000, 25_000))),
    ("nlc_vardim", || variable(base("nlc_vardim", nonlinear(Family::Nlc, 100, 1, Activation::Relu), 250_000, 62_500))),
    ("misspec_lr", || {
        let mut c = base("misspec_lr", ModelSpec::new(Family::Lr, 1), 50_000, 12_500);
        c.eval.s = 10;
        c.eval.metrics = vec!["predictive".into()];
        c.misspec = MisspecConfig {
            train_source: SourceConfig::model(),
            eval_sources: vec![SourceConfig::model(), SourceConfig::nlr_fixed(), SourceConfig::GpRbf],
        };
        c
    }),
    ("misspec_nlr_tanh", || {
        let mut c = base("misspec_nlr_tanh", nonlinear(Family::Nlr, 1, 1, Activation::Tanh), 100_000, 25_000);
        c.eval.s = 10;
        let lr = ModelSpec::new(Family::Lr, 1);
        c.misspec = MisspecConfig {
            train_source: SourceConfig::model(),
            eval_sources: vec![SourceConfig::Model { spec: Some(lr) }, SourceConfig::model(), SourceConfig::GpRbf],
        };
        c
    }),
    ("tabular_lr", || {
        let mut c = variable(base("tabular_lr", ModelSpec::new(Family::Lr, 100), 100_000, 25_000));
        c.generator.x_dist = XDist::StdNormal;
        c
    }),
    ("tabular_lc", || {
        let mut c = variable(base("tabular_lc", ModelSpec::new(Family::Lc, 100), 100_000, 25_000));
        c.generator.x_dist = XDist::StdNormal;
        c
    }),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| p())
        .ok_or_else(|| Error::Unknown { kind: "preset", name: name.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in preset_names() {
            let c = preset(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c.name, name);
        }
    }
}
