use sha2::{Digest, Sha256};

use super::config::{hex, ExperimentConfig};
use crate::baselines::{analytic_posterior, langevin_sample, PosteriorSampler};
use crate::datagen::{sample_cardinality, sample_dim, source_for, GeneratorConfig, SourceConfig};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{
    default_metric, evaluate_sample_metric, sample_metric, symmetric_kl_gaussian, symmetric_kl_mc, w2_squared_empirical,
    EvalCase, MetricReport,
};
use crate::models::{Dataset, Family, ModelSpec, Targets};
use crate::objectives::{elbo_terms, Estimate};
use crate::rng::StreamKey;

/// The fixed test problems of an experiment for `source`: case `t` comes
/// from stream `(seed, "test", t)`. The context has the generator's
/// cardinality; supervised families get a query set of equal size drawn
/// with the same parameters, the others are scored on the context itself.
pub fn test_cases(
    spec: &ModelSpec,
    generator: &GeneratorConfig,
    source: &SourceConfig,
    t: usize,
    seed: u64,
) -> Result<Vec<EvalCase>> {
    let supervised = !matches!(spec.family, Family::Gm | Family::Gmm);
    let wide = ModelSpec { n_max: 2 * spec.n_max, ..spec.clone() };
    let src = source_for(source, &wide)?;
    let gen = GeneratorConfig { source: source.clone(), ..generator.clone() };
    gen.validate(spec)?;
    let mode = gen.dim_mode_for(spec);
    let root = StreamKey::root(seed).tag("test");
    (0..t)
        .map(|i| {
            let mut rng = root.index(i as u64).rng();
            let d = sample_dim(mode, &mut rng);
            let n = sample_cardinality(&gen, &mut rng);
            let total = if supervised { 2 * n } else { n };
            let (data, theta) = src.sample(total, d, gen.x_dist, &mut rng)?;
            if data.n_active < total {
                return Err(Error::TooManyObservations { n: total, max: data.n_active });
            }
            let rows: Vec<usize> = data.active_rows().collect();
            let context = data.select_rows(&rows[..n]);
            let query = if supervised { data.select_rows(&rows[n..total]) } else { context.clone() };
            Ok(EvalCase { context, query, theta: theta.map(|t| t.values) })
        })
        .collect()
}

fn hash_dataset(h: &mut Sha256, d: &Dataset) {
    for v in [d.n_max, d.d_max, d.n_active, d.d_active] {
        h.update((v as u64).to_le_bytes());
    }
    for v in &d.x {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(d.obs_mask.iter().map(|&b| b as u8).collect::<Vec<_>>());
    h.update(d.feat_mask.iter().map(|&b| b as u8).collect::<Vec<_>>());
    match &d.y {
        Targets::None => h.update([0u8]),
        Targets::Real(v) => {
            h.update([1u8]);
            v.iter().for_each(|x| h.update(x.to_bits().to_le_bytes()));
        }
        Targets::Class(v) => {
            h.update([2u8]);
            v.iter().for_each(|x| h.update((*x as u64).to_le_bytes()));
        }
    }
}

/// SHA-256 over the exact bits of every context and query dataset.
pub fn cases_hash(cases: &[EvalCase]) -> String {
    let mut h = Sha256::new();
    for c in cases {
        hash_dataset(&mut h, &c.context);
        hash_dataset(&mut h, &c.query);
    }
    hex(&h.finalize())
}

/// `m` rows spread evenly over `t`.
fn take_evenly(t: &Tensor, m: usize) -> Result<Tensor> {
    if t.rows() < m {
        return Err(Error::Shape(format!("need {m} samples, sampler produced {}", t.rows())));
    }
    let mut out = Tensor::zeros(m, t.cols());
    for r in 0..m {
        out.row_mut(r).copy_from_slice(t.row(r * t.rows() / m));
    }
    Ok(out)
}

fn conjugate(spec: &ModelSpec) -> bool {
    matches!(spec.family, Family::Gm | Family::Lr)
}

/// Reference posterior draws for W2: exact for conjugate families, pooled
/// Langevin chains otherwise.
fn reference_samples(cfg: &ExperimentConfig, data: &Dataset, m: usize, key: &StreamKey) -> Result<Tensor> {
    if conjugate(&cfg.model) {
        return Ok(analytic_posterior(&cfg.model, data)?.sample_n(m, &mut key.rng()));
    }
    take_evenly(&langevin_sample(&cfg.model, data, &cfg.baseline.mcmc, key)?, m)
}

/// Runs every metric listed in `cfg.eval` for `sampler`. Metrics the
/// sampler cannot support (no density, no closed-form reference) are
/// returned by name in the second slot instead.
pub fn evaluate_sampler(
    sampler: &dyn PosteriorSampler,
    cfg: &ExperimentConfig,
    cases: &[EvalCase],
) -> Result<(Vec<MetricReport>, Vec<String>)> {
    let spec = &cfg.model;
    let eval = &cfg.eval;
    let root = StreamKey::root(cfg.seed).tag("eval");
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for name in &eval.metrics {
        let key = root.tag(name);
        match name.as_str() {
            "sym_kl" => {
                if !conjugate(spec) {
                    skipped.push(name.clone());
                    continue;
                }
                let mut values = Vec::with_capacity(cases.len());
                let mut s = 0;
                for (t, case) in cases.iter().enumerate() {
                    let p = analytic_posterior(spec, &case.context)?;
                    let v = match (sampler.explicit_gaussian(&case.context)?, sampler.as_density()) {
                        (Some(q), _) => symmetric_kl_gaussian(&p, &q)?,
                        (None, Some(q)) => {
                            s = eval.kl_samples;
                            symmetric_kl_mc(q, &case.context, &p, eval.kl_samples, &key.index(t as u64))?.mean
                        }
                        (None, None) => break,
                    };
                    values.push(v);
                }
                if values.len() < cases.len() {
                    skipped.push(name.clone());
                    continue;
                }
                reports.push(MetricReport::from_values(name, values, s));
            }
            "w2" => {
                let m = eval.w2_samples;
                let mut values = Vec::with_capacity(cases.len());
                for (t, case) in cases.iter().enumerate() {
                    let reference = reference_samples(cfg, &case.context, m, &StreamKey::root(cfg.seed).tag("reference").index(t as u64))?;
                    let q = take_evenly(&sampler.sample(&case.context, m, &key.index(t as u64))?, m)?;
                    values.push(w2_squared_empirical(&q, &reference)?);
                }
                reports.push(MetricReport::from_values(name, values, m));
            }
            "elbo" => {
                let Some(q) = sampler.as_density() else {
                    skipped.push(name.clone());
                    continue;
                };
                let mut values = Vec::with_capacity(cases.len());
                for (t, case) in cases.iter().enumerate() {
                    let (thetas, lq) = q.sample_with_log_q(&case.context, eval.elbo_samples, &key.index(t as u64))?;
                    values.push(Estimate::from_samples(&elbo_terms(spec, &case.context, &thetas, &lq)?).mean);
                }
                reports.push(MetricReport::from_values(name, values, eval.elbo_samples));
            }
            other => {
                let metric = if other == "predictive" { default_metric(spec.family) } else { sample_metric(other)? };
                if !metric.supports(spec.family) {
                    skipped.push(name.clone());
                    continue;
                }
                let mut r = evaluate_sample_metric(metric, sampler, spec, cases, eval.s, &key)?;
                r.metric = metric.name().into();
                reports.push(r);
            }
        }
    }
    Ok((reports, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_subsample() {
        let t = Tensor::from_vec(6, 1, (0..6).map(f64::from).collect());
        assert_eq!(take_evenly(&t, 3).unwrap().data(), &[0.0, 2.0, 4.0]);
        assert!(take_evenly(&t, 7).is_err());
    }
}
