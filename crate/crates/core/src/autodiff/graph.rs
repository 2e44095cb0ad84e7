use rand::Rng;

use super::store::{GradBuffer, ParamId, ParamStore};
use super::tensor::{real, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<F> {
    Input,
    Param(ParamId),
    /// w: [r, c] matrix node, x: [c] vector node -> [r].
    MatVec { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    /// 1-D concatenation of flattened inputs.
    Concat { parts: Vec<NodeId> },
    /// Equal-length vectors stacked as the columns of a [d, n] matrix.
    StackCols { parts: Vec<NodeId> },
    /// seq: [d, s], filters: [k, d, m], bias: [k] -> [k, s + m - 1].
    WideConv { seq: NodeId, filters: NodeId, bias: NodeId },
    /// x: [k, t] -> [k]; argmax saved per row (first index on ties).
    MaxPoolTime { x: NodeId, argmax: Vec<usize> },
    /// Embedding gather straight from the store; gradients scatter back
    /// as sparse rows. Output is [d, n], one column per index.
    Lookup { param: ParamId, indices: Vec<usize> },
    /// mask entries are 0 or 1/(1-p) (inverted dropout).
    Dropout { x: NodeId, mask: Vec<F> },
    Softmax { x: NodeId },
    /// Fused stable cross-entropy from logits; probs saved for backward.
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<F>,
    },
    Sum { x: NodeId },
}

struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    grad: Vec<F>,
    op: Op<F>,
}

/// Reverse-mode tape: nodes are recorded in construction order, which is
/// a topological order, and `backward` walks them in exact reverse.
///
/// One graph is single-threaded; independent graphs may run on separate
/// threads against a shared read-only [`ParamStore`].
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_leaves: Vec<(ParamId, NodeId)>,
    /// Sparse embedding gradients collected during backward.
    sparse_grads: Vec<(ParamId, usize, Vec<F>)>,
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_leaves: Vec::new(),
            sparse_grads: Vec::new(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>) -> NodeId {
        let grad = vec![F::zero(); value.len()];
        self.nodes.push(Node {
            shape,
            value,
            grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> F {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    // ---- leaves ----

    pub fn input(&mut self, t: &Tensor<F>) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Input)
    }

    pub fn input_vec(&mut self, shape: Vec<usize>, data: Vec<F>) -> Result<NodeId> {
        let t = Tensor::new(shape, data)?;
        Ok(self.input(&t))
    }

    /// Leaf bound to a parameter; one leaf per parameter per graph, so a
    /// parameter used along several paths accumulates the sum of all
    /// path gradients in one buffer.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.param_leaves.iter().find(|(pid, _)| *pid == id) {
            return node;
        }
        let t = store.get(id);
        let node = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id));
        self.param_leaves.push((id, node));
        node
    }

    // ---- elementwise and linear ops ----

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (ws, xs) = (self.shape(w), self.shape(x));
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::shape("matvec", format!("w {ws:?} vs x {xs:?}")));
        }
        let (r, c) = (ws[0], ws[1]);
        let wd = &self.nodes[w.0].value;
        let xd = &self.nodes[x.0].value;
        let mut out = vec![F::zero(); r];
        for i in 0..r {
            let row = &wd[i * c..(i + 1) * c];
            let mut acc = F::zero();
            for (wv, xv) in row.iter().zip(xd) {
                acc = acc + *wv * *xv;
            }
            out[i] = acc;
        }
        Ok(self.push(vec![r], out, Op::MatVec { w, x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<F> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x + *y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<F> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x * *y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Op::Mul { a, b }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let one = F::one();
        let out: Vec<F> = self.nodes[x.0]
            .value
            .iter()
            .map(|v| one / (one + (-*v).exp()))
            .collect();
        self.push(self.nodes[x.0].shape.clone(), out, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<F> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(self.nodes[x.0].shape.clone(), out, Op::Tanh { x })
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let len = out.len();
        Ok(self.push(
            vec![len],
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Stacks `n` vectors of length `d` as columns of a [d, n] matrix,
    /// ready for pooling over the stacking axis.
    pub fn stack_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("stack_cols of zero parts".into()));
        }
        let d = self.nodes[parts[0].0].value.len();
        if parts.iter().any(|p| self.nodes[p.0].value.len() != d) {
            return Err(Error::shape("stack_cols", "unequal column lengths"));
        }
        let n = parts.len();
        let mut out = vec![F::zero(); d * n];
        for (j, p) in parts.iter().enumerate() {
            for (i, v) in self.nodes[p.0].value.iter().enumerate() {
                out[i * n + j] = *v;
            }
        }
        Ok(self.push(
            vec![d, n],
            out,
            Op::StackCols {
                parts: parts.to_vec(),
            },
        ))
    }

    // ---- convolution and pooling ----

    /// Wide 1-D convolution: every filter position that overlaps the
    /// sequence contributes, with out-of-range inputs taken to be zero,
    /// giving output width s + m - 1.
    pub fn wide_conv1d(&mut self, seq: NodeId, filters: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ss, fs, bs) = (self.shape(seq), self.shape(filters), self.shape(bias));
        if ss.len() != 2 || fs.len() != 3 || bs.len() != 1 {
            return Err(Error::shape(
                "wide_conv1d",
                format!("seq {ss:?}, filters {fs:?}, bias {bs:?}"),
            ));
        }
        let (d, s) = (ss[0], ss[1]);
        let (k, fd, m) = (fs[0], fs[1], fs[2]);
        if fd != d || bs[0] != k {
            return Err(Error::shape(
                "wide_conv1d",
                format!("seq depth {d} vs filter depth {fd}, bias {}", bs[0]),
            ));
        }
        let width = s + m - 1;
        let seq_v = &self.nodes[seq.0].value;
        let fil_v = &self.nodes[filters.0].value;
        let bias_v = &self.nodes[bias.0].value;
        let mut out = vec![F::zero(); k * width];
        for f in 0..k {
            for j in 0..width {
                let mut acc = bias_v[f];
                for t in 0..m {
                    // input column aligned with filter position t at
                    // output position j; out-of-range columns are zero
                    let q = (j + t).wrapping_sub(m - 1);
                    if q >= s {
                        continue;
                    }
                    for i in 0..d {
                        acc = acc + fil_v[(f * d + i) * m + t] * seq_v[i * s + q];
                    }
                }
                out[f * width + j] = acc;
            }
        }
        Ok(self.push(vec![k, width], out, Op::WideConv { seq, filters, bias }))
    }

    /// Maximum over the time axis of each feature map; gradient routes
    /// to the first maximal position of each row.
    pub fn max_pool_time(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::shape("max_pool_time", format!("{xs:?}")));
        }
        let (k, t) = (xs[0], xs[1]);
        let v = &self.nodes[x.0].value;
        let mut out = vec![F::zero(); k];
        let mut argmax = vec![0usize; k];
        for i in 0..k {
            let row = &v[i * t..(i + 1) * t];
            let mut best = row[0];
            let mut best_j = 0;
            for (j, &cand) in row.iter().enumerate().skip(1) {
                if cand > best {
                    best = cand;
                    best_j = j;
                }
            }
            out[i] = best;
            argmax[i] = best_j;
        }
        Ok(self.push(vec![k], out, Op::MaxPoolTime { x, argmax }))
    }

    // ---- embeddings, dropout, losses ----

    /// Gathers embedding rows for `indices` from a [rows, d] parameter,
    /// transposed to [d, n] so the result feeds the convolution as a
    /// sequence. Index 0 is the padding row: it reads as stored (zeros)
    /// and never receives gradient.
    pub fn lookup(
        &mut self,
        store: &ParamStore<F>,
        param: ParamId,
        indices: &[usize],
    ) -> Result<NodeId> {
        let t = store.get(param);
        let ts = t.shape();
        if ts.len() != 2 {
            return Err(Error::shape("lookup", format!("table {ts:?}")));
        }
        let (rows, d) = (ts[0], ts[1]);
        if indices.is_empty() {
            return Err(Error::Contract("lookup of zero indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "lookup",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let n = indices.len();
        let mut out = vec![F::zero(); d * n];
        for (j, &idx) in indices.iter().enumerate() {
            if idx == 0 {
                continue; // padding contributes a hard zero column
            }
            let row = t.row(idx);
            for i in 0..d {
                out[i * n + j] = row[i];
            }
        }
        Ok(self.push(
            vec![d, n],
            out,
            Op::Lookup {
                param,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` and
    /// scales survivors by 1/(1-p). `p == 0` is the identity.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let keep_scale = real::<F>(1.0 / (1.0 - p));
        let mask: Vec<F> = self.nodes[x.0]
            .value
            .iter()
            .map(|_| {
                if rng.gen::<f64>() < p {
                    F::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let out: Vec<F> = self.nodes[x.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| *v * *m)
            .collect();
        self.push(self.nodes[x.0].shape.clone(), out, Op::Dropout { x, mask })
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let out = stable_softmax(&self.nodes[x.0].value);
        self.push(self.nodes[x.0].shape.clone(), out, Op::Softmax { x })
    }

    /// Numerically stable `-log softmax(logits)[target]`.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let v = &self.nodes[logits.0].value;
        let c = v.len();
        if c < 2 {
            return Err(Error::shape("cross_entropy", format!("{c} classes")));
        }
        if target >= c {
            return Err(Error::Contract(format!(
                "target {target} out of range for {c} classes"
            )));
        }
        let max = v.iter().cloned().fold(v[0], F::max);
        let sum_exp = v.iter().fold(F::zero(), |acc, x| acc + (*x - max).exp());
        let loss = sum_exp.ln() + max - v[target];
        let probs = stable_softmax(v);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Softmax probabilities plus cross-entropy loss in one call.
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<(NodeId, NodeId)> {
        let loss = self.cross_entropy_logits(logits, target)?;
        let probs = self.softmax(logits);
        Ok((probs, loss))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.nodes[x.0]
            .value
            .iter()
            .fold(F::zero(), |acc, v| acc + *v);
        self.push(vec![1], vec![total], Op::Sum { x })
    }

    // ---- backward ----

    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.backward_scaled(loss, F::one())
    }

    /// Backpropagates `seed` from a scalar node through the tape in
    /// reverse construction order.
    pub fn backward_scaled(&mut self, loss: NodeId, seed: F) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(
                "backward requires a scalar-valued node".into(),
            ));
        }
        self.nodes[loss.0].grad[0] = self.nodes[loss.0].grad[0] + seed;
        for idx in (0..self.nodes.len()).rev() {
            self.step_backward(idx);
        }
        Ok(())
    }

    fn step_backward(&mut self, idx: usize) {
        // Split off the current node so parents can be borrowed mutably.
        let (before, rest) = self.nodes.split_at_mut(idx);
        let node = &mut rest[0];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatVec { w, x } => {
                let (wi, xi) = (w.0, x.0);
                let c = before[wi].shape[1];
                let r = node.grad.len();
                // parents always precede the node; borrow both disjointly
                let (wv, xv, wg, xg) = two_parents(before, wi, xi);
                for i in 0..r {
                    let go = node.grad[i];
                    if go == F::zero() {
                        continue;
                    }
                    let row = &wv[i * c..(i + 1) * c];
                    let grow = &mut wg[i * c..(i + 1) * c];
                    for j in 0..c {
                        grow[j] = grow[j] + go * xv[j];
                        xg[j] = xg[j] + row[j] * go;
                    }
                }
            }
            Op::Add { a, b } => {
                let (ai, bi) = (a.0, b.0);
                if ai == bi {
                    let two = real::<F>(2.0);
                    for (g, go) in before[ai].grad.iter_mut().zip(&node.grad) {
                        *g = *g + two * *go;
                    }
                } else {
                    let (_, _, ag, bg) = two_parents(before, ai, bi);
                    for ((ga, gb), go) in ag.iter_mut().zip(bg.iter_mut()).zip(&node.grad) {
                        *ga = *ga + *go;
                        *gb = *gb + *go;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ai, bi) = (a.0, b.0);
                if ai == bi {
                    let two = real::<F>(2.0);
                    let vals: Vec<F> = before[ai].value.clone();
                    for ((g, v), go) in before[ai].grad.iter_mut().zip(&vals).zip(&node.grad) {
                        *g = *g + two * *v * *go;
                    }
                } else {
                    let (av, bv, ag, bg) = two_parents(before, ai, bi);
                    for i in 0..node.grad.len() {
                        let go = node.grad[i];
                        ag[i] = ag[i] + bv[i] * go;
                        bg[i] = bg[i] + av[i] * go;
                    }
                }
            }
            Op::Sigmoid { x } => {
                let parent = &mut before[x.0];
                for ((g, y), go) in parent.grad.iter_mut().zip(&node.value).zip(&node.grad) {
                    *g = *g + *go * *y * (F::one() - *y);
                }
            }
            Op::Tanh { x } => {
                let parent = &mut before[x.0];
                for ((g, y), go) in parent.grad.iter_mut().zip(&node.value).zip(&node.grad) {
                    *g = *g + *go * (F::one() - *y * *y);
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts.clone() {
                    let parent = &mut before[p.0];
                    let len = parent.grad.len();
                    for (g, go) in parent.grad.iter_mut().zip(&node.grad[offset..offset + len]) {
                        *g = *g + *go;
                    }
                    offset += len;
                }
            }
            Op::StackCols { parts } => {
                let n = parts.len();
                for (j, p) in parts.clone().into_iter().enumerate() {
                    let parent = &mut before[p.0];
                    for (i, g) in parent.grad.iter_mut().enumerate() {
                        *g = *g + node.grad[i * n + j];
                    }
                }
            }
            Op::WideConv { seq, filters, bias } => {
                let (si, fi, bi) = (seq.0, filters.0, bias.0);
                let d = before[si].shape[0];
                let s = before[si].shape[1];
                let k = before[fi].shape[0];
                let m = before[fi].shape[2];
                let width = s + m - 1;
                let seq_v = before[si].value.clone();
                let fil_v = before[fi].value.clone();
                let mut seq_g = vec![F::zero(); seq_v.len()];
                let mut fil_g = vec![F::zero(); fil_v.len()];
                for f in 0..k {
                    let mut bias_acc = F::zero();
                    for j in 0..width {
                        let go = node.grad[f * width + j];
                        if go == F::zero() {
                            continue;
                        }
                        bias_acc = bias_acc + go;
                        for t in 0..m {
                            let q = (j + t).wrapping_sub(m - 1);
                            if q >= s {
                                continue;
                            }
                            for i in 0..d {
                                let fidx = (f * d + i) * m + t;
                                let sidx = i * s + q;
                                fil_g[fidx] = fil_g[fidx] + go * seq_v[sidx];
                                seq_g[sidx] = seq_g[sidx] + go * fil_v[fidx];
                            }
                        }
                    }
                    before[bi].grad[f] = before[bi].grad[f] + bias_acc;
                }
                for (g, add) in before[si].grad.iter_mut().zip(&seq_g) {
                    *g = *g + *add;
                }
                for (g, add) in before[fi].grad.iter_mut().zip(&fil_g) {
                    *g = *g + *add;
                }
            }
            Op::MaxPoolTime { x, argmax } => {
                let t = before[x.0].shape[1];
                for (i, &j) in argmax.iter().enumerate() {
                    before[x.0].grad[i * t + j] = before[x.0].grad[i * t + j] + node.grad[i];
                }
            }
            Op::Lookup { param, indices } => {
                let d = node.shape[0];
                let n = node.shape[1];
                for (j, &idx) in indices.iter().enumerate() {
                    if idx == 0 {
                        continue; // padding row stays frozen
                    }
                    let row: Vec<F> = (0..d).map(|i| node.grad[i * n + j]).collect();
                    self.sparse_grads.push((*param, idx, row));
                }
            }
            Op::Dropout { x, mask } => {
                let parent = &mut before[x.0];
                for ((g, m), go) in parent.grad.iter_mut().zip(mask).zip(&node.grad) {
                    *g = *g + *m * *go;
                }
            }
            Op::Softmax { x } => {
                let dot = node
                    .grad
                    .iter()
                    .zip(&node.value)
                    .fold(F::zero(), |acc, (go, y)| acc + *go * *y);
                let parent = &mut before[x.0];
                for ((g, y), go) in parent.grad.iter_mut().zip(&node.value).zip(&node.grad) {
                    *g = *g + *y * (*go - dot);
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let go = node.grad[0];
                let parent = &mut before[logits.0];
                for (i, (g, p)) in parent.grad.iter_mut().zip(probs).enumerate() {
                    let indicator = if i == *target { F::one() } else { F::zero() };
                    *g = *g + go * (*p - indicator);
                }
            }
            Op::Sum { x } => {
                let go = node.grad[0];
                for g in before[x.0].grad.iter_mut() {
                    *g = *g + go;
                }
            }
        }
    }

    /// Moves this graph's parameter gradients (dense leaves and sparse
    /// embedding rows) into `buf`.
    pub fn accumulate_grads(&self, buf: &mut GradBuffer<F>) {
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                buf.add_dense(id, &node.grad);
            }
        }
        for (id, row, grad) in &self.sparse_grads {
            buf.add_row(*id, *row, grad.clone());
        }
    }

    /// True when every node value and gradient is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.value.iter().all(|v| v.is_finite()) && n.grad.iter().all(|g| g.is_finite()))
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn stable_softmax<F: Scalar>(v: &[F]) -> Vec<F> {
    let max = v.iter().cloned().fold(v[0], F::max);
    let exps: Vec<F> = v.iter().map(|x| (*x - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |acc, x| acc + *x);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Disjoint (value, grad) access to two distinct parent nodes.
fn two_parents<F: Scalar>(
    nodes: &mut [Node<F>],
    a: usize,
    b: usize,
) -> (&[F], &[F], &mut [F], &mut [F]) {
    assert_ne!(a, b);
    let swap = a > b;
    let (lo_idx, hi_idx) = if swap { (b, a) } else { (a, b) };
    let (lo, hi) = nodes.split_at_mut(hi_idx);
    let first = &mut lo[lo_idx];
    let second = &mut hi[0];
    let (v1, g1) = (first.value.as_slice(), first.grad.as_mut_slice());
    let (v2, g2) = (second.value.as_slice(), second.grad.as_mut_slice());
    if swap {
        (v2, v1, g2, g1)
    } else {
        (v1, v2, g1, g2)
    }
}
