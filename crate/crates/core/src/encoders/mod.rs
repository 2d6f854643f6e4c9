//! Summary networks mapping a masked dataset to a fixed-width vector.
//!
//! Each network sees only the active tokens of a dataset, in storage order.
//! Dropping padded tokens before attention or pooling is equivalent to
//! masking them with a large negative logit and keeps the arithmetic free of
//! padding entirely.

mod deepsets;
mod gru;
mod transformer;

use serde::{Deserialize, Serialize};

pub use deepsets::DeepSets;
pub use gru::Gru;
pub use transformer::Transformer;

use crate::diffcore::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{Activation, Dataset, ModelSpec, TargetKind, Targets};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    #[serde(default = "d4")]
    pub layers: usize,
    #[serde(default = "d256")]
    pub model_dim: usize,
    #[serde(default = "d1024")]
    pub ff_dim: usize,
    #[serde(default = "d4")]
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepSetsConfig {
    #[serde(default = "d4")]
    pub embed_layers: usize,
    #[serde(default = "d4")]
    pub regress_layers: usize,
    #[serde(default = "d627")]
    pub hidden: usize,
    #[serde(default = "relu")]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruConfig {
    #[serde(default = "d4")]
    pub layers: usize,
    #[serde(default = "d256")]
    pub hidden: usize,
}

fn d4() -> usize {
    4
}
fn d256() -> usize {
    256
}
fn d627() -> usize {
    627
}
fn d1024() -> usize {
    1024
}
fn relu() -> Activation {
    Activation::Relu
}
fn transformer_name() -> String {
    "transformer".into()
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { layers: 4, model_dim: 256, ff_dim: 1024, heads: 4 }
    }
}

impl Default for DeepSetsConfig {
    fn default() -> Self {
        Self { embed_layers: 4, regress_layers: 4, hidden: 627, activation: Activation::Relu }
    }
}

impl Default for GruConfig {
    fn default() -> Self {
        Self { layers: 4, hidden: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Registered encoder name, see [`encoder_names`].
    #[serde(default = "transformer_name")]
    pub kind: String,
    #[serde(default = "d256")]
    pub summary_dim: usize,
    #[serde(default)]
    pub transformer: TransformerConfig,
    #[serde(default)]
    pub deepsets: DeepSetsConfig,
    #[serde(default)]
    pub gru: GruConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: transformer_name(),
            summary_dim: 256,
            transformer: TransformerConfig::default(),
            deepsets: DeepSetsConfig::default(),
            gru: GruConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn with_kind(kind: &str) -> Self {
        Self { kind: kind.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        lookup(&self.kind)?;
        let t = &self.transformer;
        let widths = [
            self.summary_dim,
            t.model_dim,
            t.ff_dim,
            t.heads,
            self.deepsets.hidden,
            self.gru.hidden,
            self.gru.layers,
        ];
        if widths.contains(&0) {
            return Err(Error::InvalidSpec("encoder widths must be at least 1".into()));
        }
        if t.model_dim % t.heads != 0 {
            return Err(Error::InvalidSpec(format!(
                "model_dim {} is not divisible by {} heads",
                t.model_dim, t.heads
            )));
        }
        Ok(())
    }
}

pub trait SummaryNetwork: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary_dim(&self) -> usize;

    fn param_count(&self) -> usize;

    fn permutation_invariant(&self) -> bool;

    /// Maps `n x token_dim` active tokens (n ≥ 1) to a `1 x summary_dim` row.
    fn forward(&self, g: &mut Graph, tokens: Var) -> Var;
}

type EncoderCtor = fn(&EncoderConfig, usize, &mut ParamStore, &mut StreamRng) -> Box<dyn SummaryNetwork>;

const ENCODERS: &[(&str, EncoderCtor)] = &[
    ("transformer", |c, t, s, r| Box::new(Transformer::new(c, t, s, r))),
    ("deepsets", |c, t, s, r| Box::new(DeepSets::new(c, t, s, r))),
    ("gru", |c, t, s, r| Box::new(Gru::new(c, t, s, r))),
];

fn lookup(name: &str) -> Result<EncoderCtor> {
    ENCODERS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::Unknown { kind: "encoder", name: name.into() })
}

pub fn encoder_names() -> Vec<&'static str> {
    ENCODERS.iter().map(|(n, _)| *n).collect()
}

/// Registers the encoder's parameters under `encoder.` in `store`.
pub fn build_encoder(
    cfg: &EncoderConfig,
    token_dim: usize,
    store: &mut ParamStore,
    rng: &mut StreamRng,
) -> Result<Box<dyn SummaryNetwork>> {
    cfg.validate()?;
    Ok(lookup(&cfg.kind)?(cfg, token_dim, store, rng))
}

/// Padded token matrix and the mask of observed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    pub matrix: Tensor,
    pub mask: Vec<bool>,
}

impl Tokens {
    pub fn n_active(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Observed tokens in storage order.
    pub fn active(&self) -> Tensor {
        let t = self.matrix.cols();
        let mut data = Vec::with_capacity(self.n_active() * t);
        for (i, m) in self.mask.iter().enumerate() {
            if *m {
                data.extend_from_slice(self.matrix.row(i));
            }
        }
        Tensor::from_vec(data.len() / t.max(1), t, data)
    }
}

pub fn token_dim(spec: &ModelSpec) -> usize {
    let y = match spec.target_kind() {
        TargetKind::None => 0,
        TargetKind::Real => 1,
        TargetKind::Class(c) => c,
    };
    2 * spec.d_max + y
}

/// One token per row: `(x ⊙ feat_mask, y-encoding, feat_mask)`.
pub fn tokenize(data: &Dataset, spec: &ModelSpec) -> Tokens {
    let t = token_dim(spec);
    let d = data.d_max;
    let mut matrix = Tensor::zeros(data.n_max, t);
    let fm: Vec<f64> = data.feat_mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
    for i in 0..data.n_max {
        let row = matrix.row_mut(i);
        for j in 0..d {
            row[j] = data.x[i * d + j] * fm[j];
        }
        match &data.y {
            Targets::None => {}
            Targets::Real(y) => row[d] = y[i],
            Targets::Class(y) => row[d + y[i]] = 1.0,
        }
        row[t - d..].copy_from_slice(&fm);
    }
    Tokens { matrix, mask: data.obs_mask.clone() }
}

/// Summary of one dataset as a graph node.
pub fn encode(net: &dyn SummaryNetwork, g: &mut Graph, tokens: &Tokens) -> Result<Var> {
    if tokens.n_active() == 0 {
        return Err(Error::ZeroActiveTokens);
    }
    let x = g.input(tokens.active());
    Ok(net.forward(g, x))
}

/// Summary values without recording gradients for later use.
pub fn summarize(net: &dyn SummaryNetwork, store: &ParamStore, tokens: &Tokens) -> Result<Vec<f64>> {
    let mut g = Graph::with_params(store);
    let s = encode(net, &mut g, tokens)?;
    Ok(g.value(s).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    #[test]
    fn gm_token_layout() {
        let spec = ModelSpec::new(Family::Gm, 2);
        let ds = Dataset::new(1, 2, vec![1.0, 0.0], Targets::None, vec![true], vec![true, true]).unwrap();
        let tok = tokenize(&ds, &spec);
        assert_eq!(tok.matrix.row(0), &[1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn classification_one_hot() {
        let spec = ModelSpec::new(Family::Lc, 1);
        let ds = Dataset::new(1, 1, vec![0.5], Targets::Class(vec![1]), vec![true], vec![true]).unwrap();
        let tok = tokenize(&ds, &spec);
        assert_eq!(tok.matrix.row(0), &[0.5, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn masked_rows_dropped() {
        let spec = ModelSpec::new(Family::Lr, 1);
        let ds = Dataset::new(3, 1, vec![1.0, 2.0, 0.0], Targets::Real(vec![1.0, 2.0, 0.0]), vec![true, true, false], vec![true])
            .unwrap();
        let tok = tokenize(&ds, &spec);
        assert_eq!(tok.active().shape(), (2, 3));
    }

    #[test]
    fn zero_tokens_rejected() {
        let spec = ModelSpec::new(Family::Gm, 1);
        let ds = Dataset::empty(2, 1, 1, Targets::None);
        let mut store = ParamStore::new();
        let net = build_encoder(&EncoderConfig::with_kind("deepsets"), token_dim(&spec), &mut store, &mut StreamRng::from_seed(0))
            .unwrap();
        let err = summarize(net.as_ref(), &store, &tokenize(&ds, &spec)).unwrap_err();
        assert!(matches!(err, Error::ZeroActiveTokens));
    }

    #[test]
    fn registry_rejects_unknown() {
        let mut store = ParamStore::new();
        let r = build_encoder(&EncoderConfig::with_kind("lstm"), 3, &mut store, &mut StreamRng::from_seed(0));
        assert!(matches!(r, Err(Error::Unknown { .. })));
        assert_eq!(encoder_names(), vec!["transformer", "deepsets", "gru"]);
    }

    #[test]
    fn bad_head_split_rejected() {
        let mut cfg = EncoderConfig::default();
        cfg.transformer.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
