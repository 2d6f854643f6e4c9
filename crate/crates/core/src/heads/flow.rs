//! Conditional normalizing flow: blocks of actnorm, a fixed permutation and
//! an affine coupling whose subnet sees the conditioning half and the
//! summary.
//!
//! Actnorm scales are stored as `log s` (zero at initialization, so `s = 1`).
//! With a single θ dimension there is nothing to condition on, and the
//! coupling becomes an affine map of the whole coordinate driven by the
//! summary alone.

use super::{std_normal_logpdf, FlowHeadConfig, PosteriorHead};
use crate::diffcore::{Graph, Linear, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Coupling log-scales are squashed into `(-SCALE_CLAMP, SCALE_CLAMP)`.
pub const SCALE_CLAMP: f64 = 2.0;

struct Block {
    log_scale: ParamId,
    shift: ParamId,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    hidden: Linear,
    out: Linear,
}

pub struct FlowHead {
    blocks: Vec<Block>,
    k: usize,
    /// Size of the conditioning half.
    cond: usize,
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn perm_buffer(b: usize) -> String {
    format!("head.flow{b}.perm")
}

impl FlowHead {
    pub fn new(cfg: &FlowHeadConfig, k: usize, summary_dim: usize, store: &mut ParamStore, rng: &mut StreamRng) -> Self {
        let cond = if k == 1 { 0 } else { k.div_ceil(2) };
        let passive = k - cond;
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let p = format!("head.flow{b}");
                let log_scale = store.add(format!("{p}.actnorm.log_scale"), Tensor::zeros(1, k));
                let shift = store.add(format!("{p}.actnorm.shift"), Tensor::zeros(1, k));
                let perm = rng.permutation(k);
                store.set_buffer(perm_buffer(b), perm.iter().map(|&i| i as i64).collect());
                let hidden = Linear::new(store, &format!("{p}.coupling.hidden"), cond + summary_dim, cfg.hidden, rng);
                let out = Linear::zeroed(store, &format!("{p}.coupling.out"), cfg.hidden, 2 * passive);
                Block { log_scale, shift, inv_perm: invert(&perm), perm, hidden, out }
            })
            .collect();
        Self { blocks, k, cond }
    }

    pub fn blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn permutation(&self, block: usize) -> &[usize] {
        &self.blocks[block].perm
    }

    /// Clamped log-scale and shift for the passive half.
    fn coupling_params(&self, g: &mut Graph, b: &Block, cond: Var, summary: Var) -> (Var, Var) {
        let m = g.shape(cond).0;
        let s = g.repeat_rows(summary, m);
        let input = if self.cond == 0 { s } else { g.concat_cols(&[cond, s]) };
        let h = b.hidden.forward(g, input);
        let h = g.relu(h);
        let out = b.out.forward(g, h);
        let p = self.k - self.cond;
        let raw = g.slice_cols(out, 0, p);
        let shift = g.slice_cols(out, p, p);
        (g.soft_clamp(raw, SCALE_CLAMP), shift)
    }

    fn split(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let m = g.shape(x).0;
        let passive = g.slice_cols(x, self.cond, self.k - self.cond);
        let cond = if self.cond == 0 { g.input(Tensor::zeros(m, 0)) } else { g.slice_cols(x, 0, self.cond) };
        (cond, passive)
    }

    fn join(&self, g: &mut Graph, cond: Var, passive: Var) -> Var {
        if self.cond == 0 {
            passive
        } else {
            g.concat_cols(&[cond, passive])
        }
    }

    /// `z -> θ`; returns `(θ, log|det ∂θ/∂z|)` with the log-determinant `M x 1`.
    pub fn forward_map(&self, g: &mut Graph, summary: Var, z: Var) -> (Var, Var) {
        let m = g.shape(z).0;
        let mut x = z;
        let mut log_det = g.input(Tensor::zeros(m, 1));
        for b in &self.blocks {
            let ls = g.param(b.log_scale);
            let sh = g.param(b.shift);
            let s = g.exp(ls);
            let scaled = g.mul_row(x, s);
            x = g.add_row(scaled, sh);
            let sum_ls = g.sum_all(ls);
            log_det = g.add_row(log_det, sum_ls);

            x = g.gather_cols(x, &b.perm);

            let (cond, passive) = self.split(g, x);
            let (s, t) = self.coupling_params(g, b, cond, summary);
            let e = g.exp(s);
            let y = g.mul(passive, e);
            let y = g.add(y, t);
            x = self.join(g, cond, y);
            let sum_s = g.sum_cols(s);
            log_det = g.add(log_det, sum_s);
        }
        (x, log_det)
    }

    /// `θ -> z`; returns `(z, log|det ∂z/∂θ|)`.
    pub fn inverse_map(&self, g: &mut Graph, summary: Var, theta: Var) -> (Var, Var) {
        let m = g.shape(theta).0;
        let mut x = theta;
        let mut log_det = g.input(Tensor::zeros(m, 1));
        for b in self.blocks.iter().rev() {
            let (cond, y) = self.split(g, x);
            let (s, t) = self.coupling_params(g, b, cond, summary);
            let neg_t = g.scale(t, -1.0);
            let centered = g.add(y, neg_t);
            let neg_s = g.scale(s, -1.0);
            let e = g.exp(neg_s);
            let passive = g.mul(centered, e);
            x = self.join(g, cond, passive);
            let sum_s = g.sum_cols(s);
            let sum_s = g.scale(sum_s, -1.0);
            log_det = g.add(log_det, sum_s);

            x = g.gather_cols(x, &b.inv_perm);

            let ls = g.param(b.log_scale);
            let sh = g.param(b.shift);
            let neg_sh = g.scale(sh, -1.0);
            let centered = g.add_row(x, neg_sh);
            let neg_ls = g.scale(ls, -1.0);
            let inv = g.exp(neg_ls);
            x = g.mul_row(centered, inv);
            let sum_ls = g.sum_all(neg_ls);
            log_det = g.add_row(log_det, sum_ls);
        }
        (x, log_det)
    }
}

impl PosteriorHead for FlowHead {
    fn name(&self) -> &'static str {
        "flow"
    }

    fn theta_dim(&self) -> usize {
        self.k
    }

    fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| 2 * self.k + b.hidden.param_count() + b.out.param_count()).sum()
    }

    fn sample(&self, g: &mut Graph, summary: Var, eps: Var) -> (Var, Var) {
        let (theta, log_det) = self.forward_map(g, summary, eps);
        let base = std_normal_logpdf(g, eps);
        (theta, g.sub(base, log_det))
    }

    fn log_q(&self, g: &mut Graph, summary: Var, theta: Var) -> Var {
        let (z, log_det) = self.inverse_map(g, summary, theta);
        let base = std_normal_logpdf(g, z);
        g.add(base, log_det)
    }

    fn load_buffers(&mut self, store: &ParamStore) -> Result<()> {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            let name = perm_buffer(b);
            let raw = store.buffer(&name).ok_or_else(|| Error::Checkpoint(format!("missing buffer `{name}`")))?;
            let perm: Vec<usize> = raw.iter().map(|&i| i as usize).collect();
            let mut seen = vec![false; self.k];
            let valid = perm.len() == self.k
                && perm.iter().all(|&i| i < self.k && !std::mem::replace(&mut seen[i], true));
            if !valid {
                return Err(Error::Checkpoint(format!("buffer `{name}` is not a permutation of {} indices", self.k)));
            }
            block.inv_perm = invert(&perm);
            block.perm = perm;
        }
        Ok(())
    }
}
