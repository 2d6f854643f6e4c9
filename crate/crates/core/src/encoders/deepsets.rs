use super::{EncoderConfig, SummaryNetwork};
use crate::diffcore::{Graph, Mlp, ParamStore, Var};
use crate::rng::StreamRng;

/// Per-token embedding, mean over active tokens, then a regression network.
pub struct DeepSets {
    embed: Mlp,
    regress: Mlp,
}

impl DeepSets {
    pub fn new(cfg: &EncoderConfig, token_dim: usize, store: &mut ParamStore, rng: &mut StreamRng) -> Self {
        let c = &cfg.deepsets;
        let embed = Mlp::new(store, "encoder.embed", token_dim, c.hidden, c.embed_layers, c.hidden, c.activation, rng);
        let regress =
            Mlp::new(store, "encoder.regress", c.hidden, c.hidden, c.regress_layers, cfg.summary_dim, c.activation, rng);
        Self { embed, regress }
    }
}

impl SummaryNetwork for DeepSets {
    fn name(&self) -> &'static str {
        "deepsets"
    }

    fn summary_dim(&self) -> usize {
        self.regress.output()
    }

    fn param_count(&self) -> usize {
        self.embed.param_count() + self.regress.param_count()
    }

    fn permutation_invariant(&self) -> bool {
        true
    }

    fn forward(&self, g: &mut Graph, tokens: Var) -> Var {
        let e = self.embed.forward(g, tokens);
        let pooled = g.mean_rows(e);
        self.regress.forward(g, pooled)
    }
}
