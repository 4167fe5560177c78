//! Tape building blocks: linear maps, MLPs and pre-norm attention blocks.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};

/// Registers parameters with an init stream derived from `(seed, name)` so
/// one parameter's values never depend on which others exist.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub seed: u64,
    pub bias: bool,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Builder<'_> {
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let dist = Normal::new(0.0, std).expect("finite std");
        let m = Mat::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng));
        self.store.add(name, m)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, Mat::zeros((rows, cols)))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        let w = self.normal(&format!("{name}.w"), fan_in, fan_out, gain / (fan_in as f64).sqrt());
        let b = self.bias.then(|| self.zeros(&format!("{name}.b"), 1, fan_out));
        Linear { w, b }
    }

    pub fn mlp(&mut self, name: &str, fan_in: usize, hidden: usize, fan_out: usize, out_gain: f64) -> Mlp {
        Mlp {
            l1: self.linear(&format!("{name}.fc1"), fan_in, hidden, 1.0),
            l2: self.linear(&format!("{name}.fc2"), hidden, fan_out, out_gain),
        }
    }

    pub fn attention(&mut self, name: &str, dim: usize, heads: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), dim, dim, 1.0),
            k: self.linear(&format!("{name}.k"), dim, dim, 1.0),
            v: self.linear(&format!("{name}.v"), dim, dim, 1.0),
            o: self.linear(&format!("{name}.o"), dim, dim, 0.5),
            heads,
        }
    }

    pub fn block(&mut self, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Block {
        Block {
            attn: self.attention(&format!("{name}.attn"), dim, heads),
            mlp: self.mlp(&format!("{name}.mlp"), dim, dim * mlp_ratio, dim, 0.5),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.l1.apply(g, store, x);
        let h = g.gelu(h);
        self.l2.apply(g, store, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    /// Multi-head attention of `queries` over `memory`. `mask[[i, j]]` false
    /// hides memory row `j` from query row `i`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, queries: Var, memory: Var, mask: Option<&Array2<bool>>) -> Var {
        let q = self.q.apply(g, store, queries);
        let k = self.k.apply(g, store, memory);
        let v = self.v.apply(g, store, memory);
        let dim = g.shape(q).1;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, a, b), g.slice_cols(k, a, b), g.slice_cols(v, a, b))
            };
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores, mask.map(|m| m.view()));
            outs.push(g.matmul(attn, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.o.apply(g, store, merged)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub attn: Attention,
    pub mlp: Mlp,
}

impl Block {
    /// Self-attention block.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: Option<&Array2<bool>>) -> Var {
        let n = g.layer_norm_rows(x);
        let a = self.attn.apply(g, store, n, n, mask);
        let x = g.add(x, a);
        self.feed_forward(g, store, x)
    }

    /// Cross-attention block: `queries` attend to a normalized `memory`.
    pub fn apply_cross(&self, g: &mut Graph, store: &ParamStore, queries: Var, memory: Var, mask: Option<&Array2<bool>>) -> Var {
        let nq = g.layer_norm_rows(queries);
        let nm = g.layer_norm_rows(memory);
        let a = self.attn.apply(g, store, nq, nm, mask);
        let x = g.add(queries, a);
        self.feed_forward(g, store, x)
    }

    fn feed_forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let m = self.mlp.apply(g, store, n);
        g.add(x, m)
    }
}
