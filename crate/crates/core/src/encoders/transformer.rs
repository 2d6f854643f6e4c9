use super::{EncoderConfig, SummaryNetwork};
use crate::diffcore::{xavier_init, Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

struct Block {
    norm_attn: LayerNorm,
    query: Linear,
    /// Key projection has no bias: it would shift every logit of a query
    /// equally and cancel in the softmax.
    key: ParamId,
    value: Linear,
    out: Linear,
    norm_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

/// Pre-norm self-attention encoder without positional encodings; the
/// summary is the final embedding of a learned CLS token.
pub struct Transformer {
    embed: Linear,
    cls: ParamId,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    project: Option<Linear>,
    heads: usize,
    model_dim: usize,
    summary_dim: usize,
}

impl Transformer {
    pub fn new(cfg: &EncoderConfig, token_dim: usize, store: &mut ParamStore, rng: &mut StreamRng) -> Self {
        let t = &cfg.transformer;
        let dm = t.model_dim;
        let embed = Linear::new(store, "encoder.embed", token_dim, dm, rng);
        let cls = store.add("encoder.cls", Tensor::from_vec(1, dm, (0..dm).map(|_| 0.02 * rng.normal()).collect()));
        let blocks = (0..t.layers)
            .map(|l| {
                let p = format!("encoder.block{l}");
                Block {
                    norm_attn: LayerNorm::new(store, &format!("{p}.norm_attn"), dm),
                    query: Linear::new(store, &format!("{p}.query"), dm, dm, rng),
                    key: store.add(format!("{p}.key.weight"), xavier_init(dm, dm, rng)),
                    value: Linear::new(store, &format!("{p}.value"), dm, dm, rng),
                    out: Linear::new(store, &format!("{p}.out"), dm, dm, rng),
                    norm_ff: LayerNorm::new(store, &format!("{p}.norm_ff"), dm),
                    ff_in: Linear::new(store, &format!("{p}.ff_in"), dm, t.ff_dim, rng),
                    ff_out: Linear::new(store, &format!("{p}.ff_out"), t.ff_dim, dm, rng),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(store, "encoder.final_norm", dm);
        let project = (cfg.summary_dim != dm).then(|| Linear::new(store, "encoder.project", dm, cfg.summary_dim, rng));
        Self { embed, cls, blocks, final_norm, project, heads: t.heads, model_dim: dm, summary_dim: cfg.summary_dim }
    }

    /// Multi-head attention of `queries` over every row of `seq`.
    fn attend(&self, g: &mut Graph, b: &Block, queries: Var, seq: Var) -> Var {
        let q = b.query.forward(g, queries);
        let kw = g.param(b.key);
        let k = g.matmul(seq, kw);
        let v = b.value.forward(g, seq);
        let dh = self.model_dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let logits = g.matmul_nt(qh, kh);
            let logits = g.scale(logits, scale);
            let att = g.softmax_rows(logits);
            outs.push(g.matmul(att, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        b.out.forward(g, cat)
    }
}

impl SummaryNetwork for Transformer {
    fn name(&self) -> &'static str {
        "transformer"
    }

    fn summary_dim(&self) -> usize {
        self.summary_dim
    }

    fn param_count(&self) -> usize {
        let blocks: usize = self
            .blocks
            .iter()
            .map(|b| {
                b.norm_attn.param_count()
                    + b.query.param_count()
                    + self.model_dim * self.model_dim
                    + b.value.param_count()
                    + b.out.param_count()
                    + b.norm_ff.param_count()
                    + b.ff_in.param_count()
                    + b.ff_out.param_count()
            })
            .sum();
        self.embed.param_count()
            + self.model_dim
            + blocks
            + self.final_norm.param_count()
            + self.project.as_ref().map_or(0, Linear::param_count)
    }

    fn permutation_invariant(&self) -> bool {
        true
    }

    fn forward(&self, g: &mut Graph, tokens: Var) -> Var {
        let emb = self.embed.forward(g, tokens);
        let cls = g.param(self.cls);
        let mut x = g.concat_rows(&[cls, emb]);
        let last = self.blocks.len().saturating_sub(1);
        for (l, b) in self.blocks.iter().enumerate() {
            let h = b.norm_attn.forward(g, x);
            // only the CLS row feeds the summary after the last block
            let (q, resid) = if l == last {
                (g.slice_rows(h, 0, 1), g.slice_rows(x, 0, 1))
            } else {
                (h, x)
            };
            let a = self.attend(g, b, q, h);
            let x1 = g.add(resid, a);
            let h2 = b.norm_ff.forward(g, x1);
            let f = b.ff_in.forward(g, h2);
            let f = g.relu(f);
            let f = b.ff_out.forward(g, f);
            x = g.add(x1, f);
        }
        let c = g.slice_rows(x, 0, 1);
        let c = self.final_norm.forward(g, c);
        match &self.project {
            Some(p) => p.forward(g, c),
            None => c,
        }
    }
}
