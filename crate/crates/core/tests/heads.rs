use amortize::diffcore::{Graph, ParamStore, Tensor};
use amortize::heads::{build_head, log_q_values, FlowHead, FlowHeadConfig, HeadConfig, PosteriorHead};
use amortize::rng::StreamRng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn std_normal_logpdf(z: &[f64]) -> f64 {
    z.iter().map(|v| -HALF_LN_2PI - 0.5 * v * v).sum()
}

fn head(kind: &str, k: usize, summary: usize, seed: u64) -> (ParamStore, Box<dyn PosteriorHead>) {
    let mut cfg = HeadConfig::with_kind(kind);
    cfg.gaussian.hidden = 16;
    cfg.flow.hidden = 16;
    let mut store = ParamStore::new();
    let h = build_head(&cfg, k, summary, &mut store, &mut StreamRng::from_seed(seed)).unwrap();
    (store, h)
}

fn set(store: &mut ParamStore, name: &str, values: &[f64]) {
    let id = store.id(name).unwrap_or_else(|| panic!("missing {name}"));
    store.value_mut(id).data_mut().copy_from_slice(values);
}

fn scramble(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = StreamRng::from_seed(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = scale * rng.normal();
        }
    }
}

/// `(θ, log q)` rows for base noise `z`.
fn push(h: &dyn PosteriorHead, store: &ParamStore, summary: &[f64], z: &Tensor) -> (Tensor, Vec<f64>) {
    let mut g = Graph::with_params(store);
    let s = g.input(Tensor::row_vector(summary.to_vec()));
    let e = g.input(z.clone());
    let (t, lq) = h.sample(&mut g, s, e);
    (g.value(t).clone(), g.value(lq).data().to_vec())
}

fn flow_maps(flow: &FlowHead, store: &ParamStore, summary: &[f64], z: &Tensor) -> (Tensor, Vec<f64>, Tensor, Vec<f64>) {
    let mut g = Graph::with_params(store);
    let s = g.input(Tensor::row_vector(summary.to_vec()));
    let zv = g.input(z.clone());
    let (theta, ld) = flow.forward_map(&mut g, s, zv);
    let (back, ldi) = flow.inverse_map(&mut g, s, theta);
    (g.value(theta).clone(), g.value(ld).data().to_vec(), g.value(back).clone(), g.value(ldi).data().to_vec())
}

fn zeroed_gaussian(k: usize) -> (ParamStore, Box<dyn PosteriorHead>) {
    let (mut store, h) = head("gaussian", k, 3, 0);
    scramble(&mut store, 0.0, 0);
    (store, h)
}

#[test]
fn gaussian_density_examples() {
    let (store, h) = zeroed_gaussian(3);
    let (theta, lq) = push(h.as_ref(), &store, &[0.1, 0.2, 0.3], &Tensor::zeros(1, 3));
    assert_eq!(theta.data(), &[0.0; 3]);
    assert!((lq[0] + 3.0 * HALF_LN_2PI).abs() < 1e-12);

    let (store, h) = zeroed_gaussian(1);
    let (theta, lq) = push(h.as_ref(), &store, &[0.0; 3], &Tensor::scalar(1.0));
    assert_eq!(theta.item(), 1.0);
    assert!((lq[0] - (-HALF_LN_2PI - 0.5)).abs() < 1e-12);
    assert!((lq[0] + 1.41894).abs() < 1e-5);
}

#[test]
fn gaussian_sampled_density_matches_evaluated_density() {
    let (mut store, h) = head("gaussian", 4, 5, 1);
    scramble(&mut store, 0.3, 2);
    let summary = [0.5, -1.0, 0.2, 0.0, 1.5];
    let z = Tensor::from_vec(50, 4, StreamRng::from_seed(3).normal_vec(200));
    let (theta, lq) = push(h.as_ref(), &store, &summary, &z);
    let again = log_q_values(h.as_ref(), &store, &summary, &theta);
    for (a, b) in lq.iter().zip(&again) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn doubling_sigma_lowers_density_at_mean_by_k_ln2() {
    let k = 3;
    let (mut store, h) = zeroed_gaussian(k);
    let at_mean = |store: &ParamStore| log_q_values(h.as_ref(), store, &[0.0; 3], &Tensor::zeros(1, k))[0];
    let before = at_mean(&store);
    let mut bias = vec![0.0; 2 * k];
    bias[k..].fill(std::f64::consts::LN_2);
    set(&mut store, "head.gaussian.1.bias", &bias);
    let after = at_mean(&store);
    assert!((before - after - k as f64 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn gaussian_entropy_matches_monte_carlo() {
    let k = 3;
    let (mut store, h) = head("gaussian", k, 4, 5);
    scramble(&mut store, 0.4, 6);
    let summary = [0.3, -0.2, 0.9, -1.1];
    let mut g = Graph::with_params(&store);
    let s = g.input(Tensor::row_vector(summary.to_vec()));
    let (_, ls) = h.diagonal_moments(&mut g, s).unwrap();
    let entropy: f64 = g.value(ls).data().iter().sum::<f64>() + k as f64 * (0.5 + HALF_LN_2PI);
    let m = 10_000;
    let z = Tensor::from_vec(m, k, StreamRng::from_seed(7).normal_vec(m * k));
    let (_, lq) = push(h.as_ref(), &store, &summary, &z);
    let neg: Vec<f64> = lq.iter().map(|v| -v).collect();
    let mean = neg.iter().sum::<f64>() / m as f64;
    let se = (neg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64 / m as f64).sqrt();
    assert!((mean - entropy).abs() < 3.0 * se, "{mean} vs {entropy} (se {se})");
}

#[test]
fn identity_flow_permutes_and_preserves_density() {
    let k = 5;
    let mut store = ParamStore::new();
    let flow = FlowHead::new(&FlowHeadConfig { blocks: 6, hidden: 8 }, k, 3, &mut store, &mut StreamRng::from_seed(8));
    let z = Tensor::from_vec(7, k, StreamRng::from_seed(9).normal_vec(7 * k));
    let summary = [0.4, 0.1, -0.3];
    let (theta, ld, back, ldi) = flow_maps(&flow, &store, &summary, &z);
    let mut idx: Vec<usize> = (0..k).collect();
    for b in 0..flow.blocks() {
        let p = flow.permutation(b);
        idx = (0..k).map(|j| idx[p[j]]).collect();
    }
    for r in 0..7 {
        for j in 0..k {
            assert_eq!(theta.get(r, j), z.get(r, idx[j]));
        }
        assert_eq!(ld[r], 0.0);
        assert_eq!(ldi[r], 0.0);
    }
    assert_eq!(back, z);
    let (_, lq) = push(&flow, &store, &summary, &z);
    for r in 0..7 {
        assert!((lq[r] - std_normal_logpdf(z.row(r))).abs() < 1e-12);
    }
}

#[test]
fn single_block_log_det_by_hand() {
    let mut store = ParamStore::new();
    let flow = FlowHead::new(&FlowHeadConfig { blocks: 1, hidden: 4 }, 2, 2, &mut store, &mut StreamRng::from_seed(10));
    let (raw, shift, log_a) = (1.3, -0.4, 0.25);
    set(&mut store, "head.flow0.coupling.out.bias", &[raw, shift]);
    set(&mut store, "head.flow0.actnorm.log_scale", &[log_a, 0.0]);
    let s = 2.0 * (2.0 / std::f64::consts::PI) * (raw / 2.0).atan();
    let z = Tensor::row_vector(vec![0.7, -1.2]);
    let (theta, ld, _, _) = flow_maps(&flow, &store, &[0.0, 0.0], &z);
    assert!((ld[0] - (log_a + s)).abs() < 1e-12);
    let scaled = [0.7 * log_a.exp(), -1.2];
    let p = flow.permutation(0);
    let permuted = [scaled[p[0]], scaled[p[1]]];
    assert!((theta.get(0, 0) - permuted[0]).abs() < 1e-12);
    assert!((theta.get(0, 1) - (permuted[1] * s.exp() + shift)).abs() < 1e-12);
}

#[test]
fn one_dimensional_affine_flow() {
    let mut store = ParamStore::new();
    let flow = FlowHead::new(&FlowHeadConfig { blocks: 1, hidden: 4 }, 1, 2, &mut store, &mut StreamRng::from_seed(11));
    set(&mut store, "head.flow0.actnorm.log_scale", &[std::f64::consts::LN_2]);
    for theta in [-3.0, -0.5, 0.0, 1.7] {
        let lq = log_q_values(&flow, &store, &[0.2, 0.3], &Tensor::scalar(theta))[0];
        let want = std_normal_logpdf(&[theta / 2.0]) - std::f64::consts::LN_2;
        assert!((lq - want).abs() < 1e-12);
    }
}

#[test]
fn flow_round_trips_on_random_points() {
    for k in [1, 2, 3, 6] {
        let mut store = ParamStore::new();
        let flow = FlowHead::new(&FlowHeadConfig::default(), k, 4, &mut store, &mut StreamRng::from_seed(12));
        scramble(&mut store, 0.2, 13 + k as u64);
        let mut rng = StreamRng::from_seed(14);
        for _ in 0..10 {
            let summary = rng.normal_vec(4);
            let z = Tensor::from_vec(100, k, rng.normal_vec(100 * k));
            let (theta, ld, back, ldi) = flow_maps(&flow, &store, &summary, &z);
            assert!(theta.is_finite());
            let err = back.zip_map(&z, |a, b| (a - b).abs()).max_abs();
            assert!(err < 1e-10, "k={k}: {err}");
            assert!(ld.iter().zip(&ldi).all(|(a, b)| (a + b).abs() < 1e-10));
            let (_, lq) = push(&flow, &store, &summary, &z);
            let again = log_q_values(&flow, &store, &summary, &theta);
            assert!(lq.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / n as f64;
    ((0..n).map(|i| lo + (i as f64 + 0.5) * h).collect(), h)
}

fn flow_quadrature(k: usize, seed: u64) -> f64 {
    let mut store = ParamStore::new();
    let flow = FlowHead::new(&FlowHeadConfig::default(), k, 3, &mut store, &mut StreamRng::from_seed(seed));
    scramble(&mut store, 0.15, seed + 1);
    let summary = [0.5, -0.5, 1.0];
    let z = Tensor::from_vec(4000, k, StreamRng::from_seed(seed + 2).normal_vec(4000 * k));
    let (samples, _) = push(&flow, &store, &summary, &z);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in samples.data() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let pad = 0.5 * (hi - lo);
    let (pts, h) = grid(lo - pad, hi + pad, if k == 1 { 20_000 } else { 500 });
    let thetas = if k == 1 {
        Tensor::from_vec(pts.len(), 1, pts.clone())
    } else {
        Tensor::from_vec(pts.len() * pts.len(), 2, pts.iter().flat_map(|a| pts.iter().flat_map(move |b| [*a, *b])).collect())
    };
    let lq = log_q_values(&flow, &store, &summary, &thetas);
    lq.iter().map(|v| v.exp()).sum::<f64>() * h.powi(k as i32)
}

#[test]
fn flow_density_integrates_to_one() {
    for (k, seed) in [(1, 20), (1, 21), (2, 22), (2, 23)] {
        let mass = flow_quadrature(k, seed);
        assert!((0.98..=1.02).contains(&mass), "k={k} seed={seed}: {mass}");
    }
}
