mod common;

use amortize::baselines::{analytic_posterior_gm, log_evidence_gm};
use amortize::datagen::{generate_batch, DatasetBatch, GeneratorConfig, SourceConfig};
use amortize::diffcore::{check_gradients, Graph, Tensor};
use amortize::models::{Dataset, Family, ModelSpec, ThetaVector, XDist};
use amortize::objectives::{
    batch_noise, elbo_estimate, elbo_terms, forward_kl_graph, forward_kl_loss, reverse_kl_graph, reverse_kl_loss,
    train, train_range, PosteriorEstimator, TrainConfig,
};
use amortize::rng::{StreamKey, StreamRng};
use amortize::Error;
use common::{force_gaussian, tiny};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn gm_dataset(spec: &ModelSpec, n: usize, seed: u64) -> (Vec<f64>, Dataset) {
    let mut rng = StreamRng::from_seed(seed);
    let theta = spec.sample_theta(&mut rng).values;
    let ds = spec.sample_dataset(&theta, n, None, XDist::StdNormal, &mut rng).unwrap();
    (theta, ds)
}

fn single(ds: &Dataset, theta: Option<&[f64]>, spec: &ModelSpec) -> DatasetBatch {
    DatasetBatch {
        datasets: vec![ds.clone()],
        thetas: theta.map(|t| vec![ThetaVector::new(t.to_vec(), spec.layout()).unwrap()]),
    }
}

#[test]
fn reverse_kl_at_the_exact_posterior_is_negative_evidence() {
    let spec = ModelSpec { n_max: 32, ..ModelSpec::new(Family::Gm, 2) };
    let (_, ds) = gm_dataset(&spec, 20, 1);
    let post = analytic_posterior_gm(&ds).unwrap();
    let mut est = PosteriorEstimator::new(&spec, &tiny("deepsets", "gaussian"), 0).unwrap();
    let ls: Vec<f64> = post.variances().iter().map(|v| 0.5 * v.ln()).collect();
    force_gaussian(&mut est.store, post.mean(), &ls);
    let evidence = log_evidence_gm(&spec, &ds).unwrap();
    let loss = reverse_kl_loss(&est, &single(&ds, None, &spec), 1.0, 10_000, &StreamKey::root(2)).unwrap().loss;
    // log p(D, θ) - log q(θ) is constant in θ at the exact posterior
    assert!((loss + evidence).abs() < 1e-8, "{loss} vs {}", -evidence);
    let e = elbo_estimate(&est, &ds, 10_000, &mut StreamRng::from_seed(3)).unwrap();
    assert!((e.mean - evidence).abs() <= 3.0 * e.se + 1e-8);
}

#[test]
fn reverse_kl_without_kl_term_is_expected_negative_likelihood() {
    let spec = ModelSpec { n_max: 16, ..ModelSpec::new(Family::Lr, 1) };
    let (_, ds) = gm_dataset(&spec, 10, 4);
    let mut est = PosteriorEstimator::new(&spec, &tiny("transformer", "gaussian"), 0).unwrap();
    let (mu, ls) = ([0.3, -0.2], [-0.5, 0.1]);
    force_gaussian(&mut est.store, &mu, &ls);
    let key = StreamKey::root(5);
    let m = 7;
    let loss = reverse_kl_loss(&est, &single(&ds, None, &spec), 0.0, m, &key).unwrap().loss;
    let eps = batch_noise(&key, 0, m, 2);
    let mut total = 0.0;
    for r in 0..m {
        let theta: Vec<f64> = (0..2).map(|j| mu[j] + ls[j].exp() * eps.get(r, j)).collect();
        total -= spec.log_likelihood(&theta, &ds).unwrap();
    }
    assert!((loss - total / m as f64).abs() < 1e-10);
}

#[test]
fn prior_as_q_has_zero_kl_on_empty_data() {
    // encoders need one observation, so the identity is checked on the ELBO terms
    let spec = ModelSpec::new(Family::Gm, 3);
    let empty = Dataset::empty(spec.n_max, 3, 3, spec.empty_targets(spec.n_max));
    let mut rng = StreamRng::from_seed(6);
    let thetas = Tensor::from_vec(100, 3, rng.normal_vec(300));
    let log_q: Vec<f64> = (0..100).map(|r| spec.log_prior(thetas.row(r)).unwrap()).collect();
    let terms = elbo_terms(&spec, &empty, &thetas, &log_q).unwrap();
    assert!(terms.iter().all(|t| *t == 0.0));
}

#[test]
fn forward_kl_examples() {
    let spec = ModelSpec { n_max: 16, ..ModelSpec::new(Family::Lr, 2) };
    let (theta, ds) = gm_dataset(&spec, 12, 7);
    let k = spec.theta_dim();
    let mut est = PosteriorEstimator::new(&spec, &tiny("gru", "gaussian"), 0).unwrap();
    force_gaussian(&mut est.store, &theta, &vec![0.0; k]);
    let batch = single(&ds, Some(&theta), &spec);
    let at_mean = forward_kl_loss(&est, &batch).unwrap().loss;
    assert!((at_mean - k as f64 * HALF_LN_2PI).abs() < 1e-12);
    force_gaussian(&mut est.store, &theta, &vec![std::f64::consts::LN_2; k]);
    let wider = forward_kl_loss(&est, &batch).unwrap().loss;
    assert!((wider - at_mean - k as f64 * std::f64::consts::LN_2).abs() < 1e-12);

    let gp = GeneratorConfig { source: SourceConfig::GpRbf, n_range: [8, 16], batch_size: 2, ..Default::default() };
    let gp_batch = generate_batch(&gp, &spec, &StreamKey::root(1)).unwrap();
    assert!(matches!(forward_kl_loss(&est, &gp_batch), Err(Error::MissingThetas)));
    let cfg = TrainConfig::new("forward_kl", 1, 0);
    assert!(train(&mut est, &gp, &cfg, None).is_err());
}

#[test]
fn forward_kl_is_permutation_invariant_for_set_encoders() {
    let spec = ModelSpec { n_max: 24, ..ModelSpec::new(Family::Lr, 2) };
    let (theta, ds) = gm_dataset(&spec, 17, 8);
    for enc in ["transformer", "deepsets"] {
        let est = PosteriorEstimator::new(&spec, &tiny(enc, "flow"), 9).unwrap();
        let base = forward_kl_loss(&est, &single(&ds, Some(&theta), &spec)).unwrap().loss;
        for s in 0..10 {
            let perm = StreamRng::from_seed(s).permutation(24);
            let moved = forward_kl_loss(&est, &single(&ds.permute_rows(&perm), Some(&theta), &spec)).unwrap().loss;
            assert!((base - moved).abs() < 1e-10, "{enc}");
        }
    }
}

#[test]
fn elbo_never_exceeds_evidence() {
    let spec = ModelSpec { n_max: 32, ..ModelSpec::new(Family::Gm, 2) };
    for (i, head) in ["gaussian", "flow"].iter().enumerate() {
        let est = PosteriorEstimator::new(&spec, &tiny("transformer", head), i as u64).unwrap();
        for s in 0..10 {
            let (_, ds) = gm_dataset(&spec, 25, 100 + s);
            let e = elbo_estimate(&est, &ds, 2000, &mut StreamRng::from_seed(s)).unwrap();
            assert!(e.mean <= log_evidence_gm(&spec, &ds).unwrap() + 3.0 * e.se);
        }
        let (_, ds) = gm_dataset(&spec, 25, 1);
        let a = elbo_estimate(&est, &ds, 1, &mut StreamRng::from_seed(4)).unwrap();
        let b = elbo_estimate(&est, &ds, 1, &mut StreamRng::from_seed(4)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn every_combination_passes_gradcheck() {
    let gm = ModelSpec { n_max: 6, ..ModelSpec::new(Family::Gm, 2) };
    let lr = ModelSpec { n_max: 6, ..ModelSpec::new(Family::Lr, 1) };
    for spec in [gm, lr] {
        let (theta, ds) = gm_dataset(&spec, 5, 10);
        let eps = Tensor::from_vec(3, 2, StreamRng::from_seed(11).normal_vec(6));
        for enc in ["transformer", "deepsets", "gru"] {
            for head in ["gaussian", "flow"] {
                let mut est = PosteriorEstimator::new(&spec, &tiny(enc, head), 12).unwrap();
                // move the flow away from its identity start so every path carries gradient
                let mut rng = StreamRng::from_seed(13);
                let ids: Vec<_> = est.store.ids().collect();
                for id in ids {
                    for v in est.store.value_mut(id).data_mut() {
                        *v += 0.1 * rng.normal();
                    }
                }
                let rev = check_gradients(&est.store, 1e-4, |g: &mut Graph| reverse_kl_graph(&est, g, &ds, &eps, 0.7)).unwrap();
                let fwd = check_gradients(&est.store, 1e-4, |g: &mut Graph| forward_kl_graph(&est, g, &ds, &theta)).unwrap();
                for (obj, r) in [("reverse_kl", rev), ("forward_kl", fwd)] {
                    assert!(r.max_error() < 1e-4, "{:?} {enc}/{head}/{obj}: {:?}", spec.family, r.worst());
                }
            }
        }
    }
}

#[test]
fn training_loop_contract() {
    let spec = ModelSpec { n_max: 16, ..ModelSpec::new(Family::Gm, 1) };
    let generator = GeneratorConfig { n_range: [4, 16], batch_size: 8, ..Default::default() };
    let est0 = PosteriorEstimator::new(&spec, &tiny("deepsets", "gaussian"), 1).unwrap();
    let mut est = PosteriorEstimator::new(&spec, &tiny("deepsets", "gaussian"), 1).unwrap();
    let none = train(&mut est, &generator, &TrainConfig::new("reverse_kl", 0, 0), None).unwrap();
    assert!(none.is_empty());
    assert_eq!(est.checkpoint("").to_bytes(), est0.checkpoint("").to_bytes());

    let cfg = TrainConfig { lr: 1e-3, seed: 3, ..TrainConfig::new("reverse_kl", 30, 10) };
    let mut sink = Vec::new();
    let a = train(&mut est, &generator, &cfg, Some(&mut sink)).unwrap();
    assert_eq!(a.len(), 30);
    assert_eq!(a[0].beta, 0.0);
    assert_eq!(a[5].beta, 0.5);
    assert_eq!(a[29].beta, 1.0);
    assert_eq!(String::from_utf8(sink).unwrap().lines().count(), 30);

    let mut other = PosteriorEstimator::new(&spec, &tiny("deepsets", "gaussian"), 1).unwrap();
    let mut b = train_range(&mut other, &generator, &cfg, 0..12, None).unwrap();
    b.extend(train_range(&mut other, &generator, &cfg, 12..30, None).unwrap());
    assert_eq!(a, b);
    assert_eq!(est.checkpoint("").to_bytes(), other.checkpoint("").to_bytes());
}

#[test]
fn divergence_is_reported_with_its_iteration() {
    let spec = ModelSpec { n_max: 16, ..ModelSpec::new(Family::Lr, 1) };
    let generator = GeneratorConfig { n_range: [8, 16], batch_size: 4, ..Default::default() };
    let mut est = PosteriorEstimator::new(&spec, &tiny("deepsets", "gaussian"), 1).unwrap();
    let cfg = TrainConfig { lr: 1e300, ..TrainConfig::new("reverse_kl", 50, 0) };
    let err = train(&mut est, &generator, &cfg, None).unwrap_err();
    assert!(err.is_divergence(), "{err}");
}
