use super::{EncoderConfig, SummaryNetwork};
use crate::diffcore::{Graph, Linear, ParamStore, Var};
use crate::rng::StreamRng;

/// Gates are packed as `[update | reset | candidate]` along the columns.
struct Layer {
    input: Linear,
    hidden: Linear,
}

/// Stacked GRU over tokens in storage order; the summary is the top layer's
/// final hidden state.
pub struct Gru {
    layers: Vec<Layer>,
    project: Option<Linear>,
    hidden: usize,
    summary_dim: usize,
}

impl Gru {
    pub fn new(cfg: &EncoderConfig, token_dim: usize, store: &mut ParamStore, rng: &mut StreamRng) -> Self {
        let h = cfg.gru.hidden;
        let layers = (0..cfg.gru.layers)
            .map(|l| Layer {
                input: Linear::new(store, &format!("encoder.gru{l}.input"), if l == 0 { token_dim } else { h }, 3 * h, rng),
                hidden: Linear::new(store, &format!("encoder.gru{l}.hidden"), h, 3 * h, rng),
            })
            .collect();
        let project = (cfg.summary_dim != h).then(|| Linear::new(store, "encoder.project", h, cfg.summary_dim, rng));
        Self { layers, project, hidden: h, summary_dim: cfg.summary_dim }
    }

    /// One cell update: `z = σ(.)`, `r = σ(.)`, `n = tanh(xn + r ⊙ hn)`,
    /// `h' = (1 - z) ⊙ n + z ⊙ h`.
    fn cell(&self, g: &mut Graph, layer: &Layer, gx: Var, h: Option<Var>) -> Var {
        let hd = self.hidden;
        let xz = g.slice_cols(gx, 0, hd);
        let xr = g.slice_cols(gx, hd, hd);
        let xn = g.slice_cols(gx, 2 * hd, hd);
        let (z_in, r_in, hn) = match h {
            Some(h) => {
                let gh = layer.hidden.forward(g, h);
                let hz = g.slice_cols(gh, 0, hd);
                let hr = g.slice_cols(gh, hd, hd);
                let hn = g.slice_cols(gh, 2 * hd, hd);
                (g.add(xz, hz), g.add(xr, hr), hn)
            }
            None => {
                // zero initial state: the hidden path reduces to its bias
                let b = g.param(layer.hidden.bias);
                let hz = g.slice_cols(b, 0, hd);
                let hr = g.slice_cols(b, hd, hd);
                let hn = g.slice_cols(b, 2 * hd, hd);
                (g.add(xz, hz), g.add(xr, hr), hn)
            }
        };
        let z = g.sigmoid(z_in);
        let r = g.sigmoid(r_in);
        let rh = g.mul(r, hn);
        let n_in = g.add(xn, rh);
        let n = g.tanh(n_in);
        let neg_z = g.scale(z, -1.0);
        let keep_n = g.add_scalar(neg_z, 1.0);
        let new = g.mul(keep_n, n);
        match h {
            Some(h) => {
                let zh = g.mul(z, h);
                g.add(new, zh)
            }
            None => new,
        }
    }
}

impl SummaryNetwork for Gru {
    fn name(&self) -> &'static str {
        "gru"
    }

    fn summary_dim(&self) -> usize {
        self.summary_dim
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.input.param_count() + l.hidden.param_count()).sum::<usize>()
            + self.project.as_ref().map_or(0, Linear::param_count)
    }

    fn permutation_invariant(&self) -> bool {
        false
    }

    fn forward(&self, g: &mut Graph, tokens: Var) -> Var {
        let n = g.shape(tokens).0;
        let mut seq = tokens;
        let mut last = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let gx_all = layer.input.forward(g, seq);
            let mut h = None;
            let mut states = Vec::with_capacity(n);
            for t in 0..n {
                let gx = g.slice_rows(gx_all, t, 1);
                let next = self.cell(g, layer, gx, h);
                h = Some(next);
                if l + 1 < self.layers.len() {
                    states.push(next);
                }
            }
            last = h;
            if l + 1 < self.layers.len() {
                seq = g.concat_rows(&states);
            }
        }
        let top = last.expect("at least one token and one layer");
        match &self.project {
            Some(p) => p.forward(g, top),
            None => top,
        }
    }
}
