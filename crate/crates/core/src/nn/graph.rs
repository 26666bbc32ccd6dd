//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! topological order, so the backward sweep is a single reverse scan.
//! Parameters enter the graph through [`Graph::param`]; parameters belonging
//! to a frozen group enter as constants and never receive gradient.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{Group, ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    Gather(NodeId, Rc<Vec<usize>>),
    Rearrange(NodeId, Rc<Vec<usize>>),
    BceWithLogits(NodeId, Vec<f64>),
    CrossEntropy(NodeId, Vec<Option<usize>>),
}

struct Node {
    value: Mat,
    op: Op,
    grad: bool,
}

/// Gradients for every parameter in a store, indexed by [`ParamId`].
/// Parameters that took no part in the graph (or were frozen) are `None`.
#[derive(Debug, Clone)]
pub struct Grads {
    pub slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots[id.0].as_ref()
    }

    /// Adds `other` scaled by `weight` into `self`.
    pub fn accumulate(&mut self, other: &Grads, weight: f64) {
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(src) = src {
                match dst {
                    Some(d) => d.scaled_add(weight, src),
                    None => *dst = Some(src * weight),
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    frozen: Vec<Group>,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

const LN_EPS: f64 = 1e-5;

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self::with_frozen(store, &[])
    }

    pub fn with_frozen(store: &'a ParamStore, frozen: &[Group]) -> Self {
        Self {
            store,
            frozen: frozen.to_vec(),
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, grad: bool) -> NodeId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value in {op:?}");
        self.nodes.push(Node { value, op, grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].grad)
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let p = self.store.get(id);
        let trainable = !self.frozen.contains(&p.group);
        let node = self.push(p.value.clone(), Op::Param(id), trainable);
        self.param_nodes[id.0] = Some(node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        let grad = self.needs(&[a, b]);
        self.push(v, Op::MatMul(a, b), grad)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        let grad = self.needs(&[a, b]);
        self.push(v, Op::MatMulT(a, b), grad)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        let grad = self.needs(&[a, b]);
        self.push(v, Op::Add(a, b), grad)
    }

    /// Adds a `1×C` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.shape(row).0, 1);
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row: width mismatch");
        let v = self.value(a) + self.value(row);
        let grad = self.needs(&[a, row]);
        self.push(v, Op::AddRow(a, row), grad)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        let grad = self.needs(&[a, b]);
        self.push(v, Op::Mul(a, b), grad)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a) * factor;
        let grad = self.needs(&[a]);
        self.push(v, Op::Scale(a, factor), grad)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        let grad = self.needs(&[a]);
        self.push(v, Op::Gelu(a), grad)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let grad = self.needs(&[a]);
        self.push(v, Op::Relu(a), grad)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid);
        let grad = self.needs(&[a]);
        self.push(v, Op::Sigmoid(a), grad)
    }

    /// Row-wise layer normalization with learned `1×C` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * inv;
            }
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        let grad = self.needs(&[x, gamma, beta]);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            grad,
        )
    }

    /// Row-wise softmax. Where `mask` is `false` the logit is treated as −∞,
    /// so the output weight there is exactly zero. Every row must keep at
    /// least one position.
    pub fn softmax(&mut self, a: NodeId, mask: Option<&Array2<bool>>) -> NodeId {
        let av = self.value(a);
        let mut out = Mat::zeros(av.dim());
        for (r, row) in av.outer_iter().enumerate() {
            let keep = |c: usize| mask.map_or(true, |m| m[[r, c]]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(c, _)| keep(*c))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max.is_finite(), "softmax: row {r} has no unmasked position");
            let mut total = 0.0;
            for (c, v) in row.iter().enumerate() {
                if keep(c) {
                    let e = (v - max).exp();
                    out[[r, c]] = e;
                    total += e;
                }
            }
            out.row_mut(r).mapv_inplace(|v| v / total);
        }
        let grad = self.needs(&[a]);
        self.push(out, Op::Softmax(a), grad)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        let grad = self.needs(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), grad)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: height mismatch");
        let grad = self.needs(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), grad)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        let grad = self.needs(&[a]);
        self.push(v, Op::SliceRows(a, start), grad)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let grad = self.needs(&[a]);
        self.push(v, Op::SliceCols(a, start), grad)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let tv = self.value(table);
        let mut v = Mat::zeros((indices.len(), tv.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).assign(&tv.row(i));
        }
        let grad = self.needs(&[table]);
        self.push(v, Op::Gather(table, Rc::new(indices.to_vec())), grad)
    }

    /// Builds a `rows×cols` matrix whose flat element `k` is the flat element
    /// `src[k]` of `a` (both row-major).
    pub fn rearrange(&mut self, a: NodeId, rows: usize, cols: usize, src: Rc<Vec<usize>>) -> NodeId {
        assert_eq!(src.len(), rows * cols);
        let av = self.value(a);
        let flat = av.as_slice().expect("standard layout");
        let data: Vec<f64> = src.iter().map(|&i| flat[i]).collect();
        let v = Mat::from_shape_vec((rows, cols), data).expect("shape");
        let grad = self.needs(&[a]);
        self.push(v, Op::Rearrange(a, src), grad)
    }

    /// Mean binary cross-entropy of an `n×1` logit column against labels.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.dim(), (labels.len(), 1), "bce: label count mismatch");
        let n = labels.len().max(1) as f64;
        let total: f64 = lv
            .iter()
            .zip(labels)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let grad = self.needs(&[logits]);
        self.push(
            Mat::from_elem((1, 1), total / n),
            Op::BceWithLogits(logits, labels.to_vec()),
            grad,
        )
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy: row count mismatch");
        let mut total = 0.0;
        let mut count = 0usize;
        for (row, t) in lv.outer_iter().zip(targets) {
            if let Some(t) = t {
                total += log_sum_exp(row.iter().copied()) - row[*t];
                count += 1;
            }
        }
        let mean = if count == 0 { 0.0 } else { total / count as f64 };
        let grad = self.needs(&[logits]);
        self.push(
            Mat::from_elem((1, 1), mean),
            Op::CrossEntropy(logits, targets.to_vec()),
            grad,
        )
    }

    /// Back-propagates from a `1×1` root and returns per-parameter gradients.
    pub fn backward(&self, root: NodeId) -> Grads {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_elem((1, 1), 1.0));
        let mut out = Grads {
            slots: vec![None; self.store.len()],
        };

        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.grad {
                continue;
            }
            let mut send = |id: NodeId, g: Mat| {
                if !self.nodes[id.0].grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => out.slots[pid.0] = Some(gy),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].grad {
                        send(*a, gy.dot(&self.value(*b).t()));
                    }
                    if self.nodes[b.0].grad {
                        send(*b, self.value(*a).t().dot(&gy));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.nodes[a.0].grad {
                        send(*a, gy.dot(self.value(*b)));
                    }
                    if self.nodes[b.0].grad {
                        send(*b, gy.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if a == b {
                        send(*a, &gy * 2.0);
                    } else {
                        send(*b, gy.clone());
                        send(*a, gy);
                    }
                }
                Op::AddRow(a, row) => {
                    send(*row, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*a, gy);
                }
                Op::Mul(a, b) => {
                    send(*a, &gy * self.value(*b));
                    send(*b, &gy * self.value(*a));
                }
                Op::Scale(a, f) => send(*a, gy * *f),
                Op::Gelu(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g *= gelu_grad(x));
                    send(*a, g);
                }
                Op::Relu(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g = if x > 0.0 { *g } else { 0.0 });
                    send(*a, g);
                }
                Op::Sigmoid(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    send(*a, g);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    send(*beta, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*gamma, (&gy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    if self.nodes[x.0].grad {
                        let gxhat = &gy * self.value(*gamma);
                        let cols = gxhat.ncols() as f64;
                        let mut gx = Mat::zeros(gxhat.dim());
                        for r in 0..gxhat.nrows() {
                            let gr = gxhat.row(r);
                            let xr = xhat.row(r);
                            let mean_g = gr.sum() / cols;
                            let mean_gx = gr.dot(&xr) / cols;
                            for c in 0..gr.len() {
                                gx[[r, c]] = inv_std[r] * (gr[c] - mean_g - xr[c] * mean_gx);
                            }
                        }
                        send(*x, gx);
                    }
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut g = &gy * p;
                    for r in 0..g.nrows() {
                        let dot: f64 = g.row(r).sum();
                        let pr = p.row(r);
                        g.row_mut(r).zip_mut_with(&pr, |gv, &pv| *gv -= pv * dot);
                    }
                    send(*a, g);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.shape(*p).0;
                        send(*p, gy.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.shape(*p).1;
                        send(*p, gy.slice(s![.., start..start + n]).to_owned());
                        start += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut g = Mat::zeros(self.shape(*a));
                    g.slice_mut(s![*start..*start + gy.nrows(), ..]).assign(&gy);
                    send(*a, g);
                }
                Op::SliceCols(a, start) => {
                    let mut g = Mat::zeros(self.shape(*a));
                    g.slice_mut(s![.., *start..*start + gy.ncols()]).assign(&gy);
                    send(*a, g);
                }
                Op::Gather(table, indices) => {
                    let mut g = Mat::zeros(self.shape(*table));
                    for (r, &i) in indices.iter().enumerate() {
                        let mut dst = g.row_mut(i);
                        dst += &gy.row(r);
                    }
                    send(*table, g);
                }
                Op::Rearrange(a, src) => {
                    let mut g = Mat::zeros(self.shape(*a));
                    {
                        let flat = g.as_slice_mut().expect("standard layout");
                        for (k, &i) in src.iter().enumerate() {
                            flat[i] += gy.as_slice().expect("standard layout")[k];
                        }
                    }
                    send(*a, g);
                }
                Op::BceWithLogits(logits, labels) => {
                    let n = labels.len().max(1) as f64;
                    let scale = gy[[0, 0]] / n;
                    let lv = self.value(*logits);
                    let mut g = Mat::zeros(lv.dim());
                    for (r, &y) in labels.iter().enumerate() {
                        g[[r, 0]] = (sigmoid(lv[[r, 0]]) - y) * scale;
                    }
                    send(*logits, g);
                }
                Op::CrossEntropy(logits, targets) => {
                    let count = targets.iter().filter(|t| t.is_some()).count();
                    let lv = self.value(*logits);
                    let mut g = Mat::zeros(lv.dim());
                    if count > 0 {
                        let scale = gy[[0, 0]] / count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = t else { continue };
                            let row = lv.row(r);
                            let lse = log_sum_exp(row.iter().copied());
                            for c in 0..row.len() {
                                g[[r, c]] = (row[c] - lse).exp() * scale;
                            }
                            g[[r, *t]] -= scale;
                        }
                    }
                    send(*logits, g);
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use ndarray::array;

    fn fd_check(build: impl Fn(&mut Graph) -> NodeId, store: &mut ParamStore) {
        let analytic = {
            let mut g = Graph::new(store);
            let root = build(&mut g);
            g.backward(root)
        };
        let h = 1e-6;
        for pid in store.ids() {
            let shape = store.get(pid).value.dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let orig = store.get(pid).value[[r, c]];
                    store.get_mut(pid).value[[r, c]] = orig + h;
                    let up = {
                        let mut g = Graph::new(store);
                        let root = build(&mut g);
                        g.scalar(root)
                    };
                    store.get_mut(pid).value[[r, c]] = orig - h;
                    let down = {
                        let mut g = Graph::new(store);
                        let root = build(&mut g);
                        g.scalar(root)
                    };
                    store.get_mut(pid).value[[r, c]] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic.get(pid).map_or(0.0, |m| m[[r, c]]);
                    let denom = a.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (a - numeric).abs() / denom < 1e-5 || (a - numeric).abs() < 1e-9,
                        "param {} [{r},{c}]: analytic {a} numeric {numeric}",
                        store.get(pid).name
                    );
                }
            }
        }
    }

    #[test]
    fn elementary_ops_match_finite_differences() {
        let mut store = ParamStore::new();
        let a = store.insert("relq.a", Group::RelQ, array![[0.3, -1.2, 0.5], [0.9, 0.1, -0.4]]);
        let b = store.insert("relq.b", Group::RelQ, array![[0.2, 0.7], [-0.5, 0.3], [1.1, -0.8]]);
        let gamma = store.insert("relq.g", Group::RelQ, array![[1.2, 0.8]]);
        let beta = store.insert("relq.bt", Group::RelQ, array![[0.1, -0.2]]);
        let mask = array![[true, false, true], [true, true, false]];
        fd_check(
            |g| {
                let a = g.param(a);
                let b = g.param(b);
                let ab = g.matmul(a, b);
                let ln = {
                    let gm = g.param(gamma);
                    let bt = g.param(beta);
                    g.layer_norm(ab, gm, bt)
                };
                let act = g.gelu(ln);
                let scores = g.matmul_t(act, b);
                let sm = g.softmax(scores, Some(&mask));
                let mixed = g.matmul(sm, b);
                let both = g.concat_cols(&[mixed, act]);
                let top = g.slice_rows(both, 0, 1);
                let sig = g.sigmoid(top);
                let prod = g.mul(sig, top);
                let col = g.slice_cols(prod, 1, 2);
                let bce = g.bce_with_logits(col, &[1.0]);
                let rows = g.gather(a, &[1, 0, 1]);
                let ce = g.cross_entropy(rows, &[Some(2), None, Some(0)]);
                let sum = g.add(bce, ce);
                g.scale(sum, 0.7)
            },
            &mut store,
        );
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(array![[5.0, 1.0, -2.0]]);
        let m = array![[false, true, true]];
        let p = g.softmax(x, Some(&m));
        assert_eq!(g.value(p)[[0, 0]], 0.0);
        assert!((g.value(p).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frozen_group_gets_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.insert("decoder.w", Group::Decoder, array![[1.0, 2.0]]);
        let b = store.insert("relq.w", Group::RelQ, array![[3.0], [4.0]]);
        let mut g = Graph::with_frozen(&store, &[Group::Decoder]);
        let an = g.param(a);
        let bn = g.param(b);
        let y = g.matmul(an, bn);
        let grads = g.backward(y);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &array![[1.0], [2.0]]);
    }
}
