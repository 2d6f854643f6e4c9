use amortize::diffcore::{check_gradients, Graph, ParamStore, Tensor};
use amortize::encoders::{build_encoder, encode, summarize, token_dim, tokenize, EncoderConfig, SummaryNetwork, Tokens};
use amortize::models::{Dataset, Family, ModelSpec, XDist};
use amortize::rng::StreamRng;
use proptest::prelude::*;

fn small(kind: &str) -> EncoderConfig {
    let mut cfg = EncoderConfig::with_kind(kind);
    cfg.summary_dim = 6;
    cfg.transformer.layers = 2;
    cfg.transformer.model_dim = 8;
    cfg.transformer.ff_dim = 12;
    cfg.transformer.heads = 2;
    cfg.deepsets.hidden = 10;
    cfg.deepsets.embed_layers = 2;
    cfg.deepsets.regress_layers = 2;
    cfg.gru.layers = 2;
    cfg.gru.hidden = 7;
    cfg
}

fn net(cfg: &EncoderConfig, spec: &ModelSpec, seed: u64) -> (ParamStore, Box<dyn SummaryNetwork>) {
    let mut store = ParamStore::new();
    let n = build_encoder(cfg, token_dim(spec), &mut store, &mut StreamRng::from_seed(seed)).unwrap();
    (store, n)
}

fn dataset(spec: &ModelSpec, n: usize, seed: u64) -> Dataset {
    let mut rng = StreamRng::from_seed(seed);
    let theta = spec.sample_theta(&mut rng).values;
    spec.sample_dataset(&theta, n, None, XDist::StdNormal, &mut rng).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn param(store: &ParamStore, name: &str) -> Tensor {
    store.value(store.id(name).unwrap_or_else(|| panic!("missing {name}"))).clone()
}

fn affine(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let w = param(store, &format!("{name}.weight"));
    let b = param(store, &format!("{name}.bias"));
    (0..w.cols()).map(|o| b.data()[o] + (0..w.rows()).map(|i| x[i] * w.get(i, o)).sum::<f64>()).collect()
}

fn layer_norm(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let gain = param(store, &format!("{name}.gain"));
    let bias = param(store, &format!("{name}.bias"));
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gain.data()[j] + bias.data()[j])
        .collect()
}

/// Loop-level transformer over the padded token matrix, with padded keys
/// masked by a -1e9 logit.
fn naive_transformer(store: &ParamStore, cfg: &EncoderConfig, tokens: &Tokens) -> Vec<f64> {
    let t = &cfg.transformer;
    let dh = t.model_dim / t.heads;
    let mut seq = vec![param(store, "encoder.cls").data().to_vec()];
    let mut mask = vec![true];
    for i in 0..tokens.matrix.rows() {
        seq.push(affine(store, "encoder.embed", tokens.matrix.row(i)));
        mask.push(tokens.mask[i]);
    }
    for l in 0..t.layers {
        let p = format!("encoder.block{l}");
        let h: Vec<Vec<f64>> = seq.iter().map(|x| layer_norm(store, &format!("{p}.norm_attn"), x)).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|x| affine(store, &format!("{p}.query"), x)).collect();
        let kw = param(store, &format!("{p}.key.weight"));
        let k: Vec<Vec<f64>> =
            h.iter().map(|x| (0..t.model_dim).map(|o| (0..t.model_dim).map(|i| x[i] * kw.get(i, o)).sum()).collect()).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|x| affine(store, &format!("{p}.value"), x)).collect();
        let mut next = Vec::with_capacity(seq.len());
        for a in 0..seq.len() {
            let mut cat = vec![0.0; t.model_dim];
            for head in 0..t.heads {
                let r = head * dh..(head + 1) * dh;
                let logits: Vec<f64> = (0..seq.len())
                    .map(|b| {
                        let dot: f64 = q[a][r.clone()].iter().zip(&k[b][r.clone()]).map(|(x, y)| x * y).sum();
                        dot / (dh as f64).sqrt() + if mask[b] { 0.0 } else { -1e9 }
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
                let s: f64 = w.iter().sum();
                for (b, wb) in w.iter().enumerate() {
                    for (c, j) in r.clone().enumerate() {
                        cat[head * dh + c] += wb / s * v[b][j];
                    }
                }
            }
            let attn = affine(store, &format!("{p}.out"), &cat);
            let x1: Vec<f64> = seq[a].iter().zip(&attn).map(|(x, y)| x + y).collect();
            let h2 = layer_norm(store, &format!("{p}.norm_ff"), &x1);
            let f: Vec<f64> = affine(store, &format!("{p}.ff_in"), &h2).into_iter().map(|z| z.max(0.0)).collect();
            let f = affine(store, &format!("{p}.ff_out"), &f);
            next.push(x1.iter().zip(&f).map(|(x, y)| x + y).collect());
        }
        seq = next;
    }
    let c = layer_norm(store, "encoder.final_norm", &seq[0]);
    if cfg.summary_dim == t.model_dim {
        c
    } else {
        affine(store, "encoder.project", &c)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn transformer_matches_naive_oracle() {
    let spec = ModelSpec { n_max: 9, ..ModelSpec::new(Family::Lr, 2) };
    let cfg = small("transformer");
    for (seed, n) in [(1, 1), (2, 5), (3, 9)] {
        let (store, enc) = net(&cfg, &spec, seed);
        let tokens = tokenize(&dataset(&spec, n, seed + 10), &spec);
        let got = summarize(enc.as_ref(), &store, &tokens).unwrap();
        let want = naive_transformer(&store, &cfg, &tokens);
        assert!(max_diff(&got, &want) < 1e-10, "n={n}: {got:?} vs {want:?}");
    }
}

#[test]
fn gru_single_token_is_one_cell() {
    let spec = ModelSpec { n_max: 3, ..ModelSpec::new(Family::Gm, 2) };
    let mut cfg = small("gru");
    cfg.gru.layers = 1;
    cfg.summary_dim = cfg.gru.hidden;
    let (store, enc) = net(&cfg, &spec, 4);
    let tokens = tokenize(&dataset(&spec, 1, 5), &spec);
    let got = summarize(enc.as_ref(), &store, &tokens).unwrap();
    let h = cfg.gru.hidden;
    let gx = affine(&store, "encoder.gru0.input", tokens.matrix.row(0));
    let gh = affine(&store, "encoder.gru0.hidden", &vec![0.0; h]);
    let want: Vec<f64> = (0..h)
        .map(|j| {
            let z = sigmoid(gx[j] + gh[j]);
            let r = sigmoid(gx[h + j] + gh[h + j]);
            let n = (gx[2 * h + j] + r * gh[2 * h + j]).tanh();
            (1.0 - z) * n
        })
        .collect();
    assert!(max_diff(&got, &want) < 1e-12);
}

#[test]
fn deepsets_single_token_is_regress_of_embed() {
    let spec = ModelSpec { n_max: 4, ..ModelSpec::new(Family::Lc, 2) };
    let mut cfg = small("deepsets");
    cfg.deepsets.embed_layers = 1;
    cfg.deepsets.regress_layers = 1;
    let (store, enc) = net(&cfg, &spec, 6);
    let tokens = tokenize(&dataset(&spec, 1, 7), &spec);
    let got = summarize(enc.as_ref(), &store, &tokens).unwrap();
    let relu = |v: Vec<f64>| v.into_iter().map(|z| z.max(0.0)).collect::<Vec<_>>();
    let e = affine(&store, "encoder.embed.1", &relu(affine(&store, "encoder.embed.0", tokens.matrix.row(0))));
    let want = affine(&store, "encoder.regress.1", &relu(affine(&store, "encoder.regress.0", &e)));
    assert!(max_diff(&got, &want) < 1e-12);
}

#[test]
fn deepsets_duplicates_leave_summary_unchanged() {
    let spec = ModelSpec { n_max: 20, ..ModelSpec::new(Family::Lr, 3) };
    let (store, enc) = net(&small("deepsets"), &spec, 8);
    let ds = dataset(&spec, 10, 9);
    let doubled = ds.concat(&ds).unwrap();
    let wide = ModelSpec { n_max: 40, ..spec.clone() };
    let a = summarize(enc.as_ref(), &store, &tokenize(&ds, &spec)).unwrap();
    let b = summarize(enc.as_ref(), &store, &tokenize(&doubled, &wide)).unwrap();
    assert!(max_diff(&a, &b) < 1e-12);
}

#[test]
fn gru_depends_on_order_and_ignores_masked_tail() {
    let spec = ModelSpec { n_max: 12, ..ModelSpec::new(Family::Lr, 2) };
    let (store, enc) = net(&small("gru"), &spec, 10);
    let ds = dataset(&spec, 8, 11);
    let base = summarize(enc.as_ref(), &store, &tokenize(&ds, &spec)).unwrap();
    assert_eq!(base, summarize(enc.as_ref(), &store, &tokenize(&ds, &spec)).unwrap());
    let mut perm: Vec<usize> = (0..12).collect();
    perm.swap(0, 7);
    let swapped = summarize(enc.as_ref(), &store, &tokenize(&ds.permute_rows(&perm), &spec)).unwrap();
    assert!(max_diff(&base, &swapped) > 1e-6);
    assert!(!enc.permutation_invariant());
}

#[test]
fn every_encoder_passes_gradcheck() {
    let spec = ModelSpec { n_max: 6, ..ModelSpec::new(Family::Lr, 2) };
    let ds = dataset(&spec, 4, 12);
    let tokens = tokenize(&ds, &spec);
    for kind in ["transformer", "deepsets", "gru"] {
        let (store, enc) = net(&small(kind), &spec, 13);
        let report = check_gradients(&store, 1e-5, |g: &mut Graph| {
            let s = encode(enc.as_ref(), g, &tokens)?;
            let sq = g.tanh(s);
            let w = g.input(Tensor::row_vector((0..6).map(|i| 0.3 * i as f64 - 0.7).collect()));
            let p = g.mul(sq, w);
            Ok(g.sum_all(p))
        })
        .unwrap();
        assert!(report.max_error() < 1e-4, "{kind}: {:?}", report.worst());
    }
}

#[test]
fn default_widths_have_comparable_parameter_counts() {
    let spec = ModelSpec::new(Family::Lr, 1);
    let (_, t) = net(&EncoderConfig::with_kind("transformer"), &spec, 0);
    let (_, d) = net(&EncoderConfig::with_kind("deepsets"), &spec, 0);
    let ratio = d.param_count() as f64 / t.param_count() as f64;
    assert!((ratio - 1.0).abs() < 0.15, "deepsets {} vs transformer {}", d.param_count(), t.param_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn set_encoders_are_permutation_invariant(kind_idx in 0usize..2, n in 1usize..16, seed in 0u64..500, perm_seed: u64) {
        let kind = ["transformer", "deepsets"][kind_idx];
        let spec = ModelSpec { n_max: 16, ..ModelSpec::new(Family::Lc, 3) };
        let (store, enc) = net(&small(kind), &spec, seed);
        let ds = dataset(&spec, n, seed + 1);
        let base = summarize(enc.as_ref(), &store, &tokenize(&ds, &spec)).unwrap();
        let perm = StreamRng::from_seed(perm_seed).permutation(16);
        let moved = summarize(enc.as_ref(), &store, &tokenize(&ds.permute_rows(&perm), &spec)).unwrap();
        prop_assert!(max_diff(&base, &moved) < 1e-10);
    }

    #[test]
    fn padded_token_contents_are_ignored(kind_idx in 0usize..3, n in 1usize..10, seed in 0u64..500, junk_seed: u64) {
        let kind = ["transformer", "deepsets", "gru"][kind_idx];
        let spec = ModelSpec { n_max: 12, ..ModelSpec::new(Family::Lr, 2) };
        let (store, enc) = net(&small(kind), &spec, seed);
        let ds = dataset(&spec, n, seed + 2);
        let clean = tokenize(&ds, &spec);
        let mut dirty = clean.clone();
        let mut rng = StreamRng::from_seed(junk_seed);
        for i in n..12 {
            for v in dirty.matrix.row_mut(i) {
                *v = rng.normal() * 100.0;
            }
        }
        let a = summarize(enc.as_ref(), &store, &clean).unwrap();
        let b = summarize(enc.as_ref(), &store, &dirty).unwrap();
        prop_assert!(max_diff(&a, &b) < 1e-12);
    }
}
