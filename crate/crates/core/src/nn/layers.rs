use ndarray::Array2;
use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{Group, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (1.0 / d_in as f64).sqrt();
        Self {
            weight: store.normal(format!("{name}.weight"), group, (d_in, d_out), std, rng),
            bias: store.zeros(format!("{name}.bias"), group, (1, d_out)),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, dim: usize) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), group, (1, dim)),
            beta: store.zeros(format!("{name}.beta"), group, (1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Two-layer GELU perceptron.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), group, dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), group, hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Multi-head scaled dot-product attention with separate query, key, value
/// and output projections.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "head count {heads} must divide {dim}");
        Self {
            q: Linear::new(store, &format!("{name}.q"), group, dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), group, dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), group, dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), group, dim, dim, rng),
            heads,
            dim,
        }
    }

    /// Key and value projections of `x`, each `rows×dim`.
    pub fn project_kv(&self, g: &mut Graph, x: NodeId) -> (NodeId, NodeId) {
        (self.k.forward(g, x), self.v.forward(g, x))
    }

    /// Attends from `x_q` over precomputed keys and values. `mask[r][c]`
    /// false hides key `c` from query row `r`. When `trace` is given, the
    /// post-softmax weights of every head are pushed onto it.
    pub fn attend(
        &self,
        g: &mut Graph,
        x_q: NodeId,
        keys: NodeId,
        values: NodeId,
        mask: Option<&Array2<bool>>,
        mut trace: Option<&mut Vec<NodeId>>,
    ) -> NodeId {
        let q = self.q.forward(g, x_q);
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, keys, values)
            } else {
                (
                    g.slice_cols(q, lo, hi),
                    g.slice_cols(keys, lo, hi),
                    g.slice_cols(values, lo, hi),
                )
            };
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores, mask);
            if let Some(t) = trace.as_deref_mut() {
                t.push(weights);
            }
            outs.push(g.matmul(weights, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.o.forward(g, merged)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x_q: NodeId,
        x_kv: NodeId,
        mask: Option<&Array2<bool>>,
        trace: Option<&mut Vec<NodeId>>,
    ) -> NodeId {
        let (k, v) = self.project_kv(g, x_kv);
        self.attend(g, x_q, k, v, mask, trace)
    }
}
