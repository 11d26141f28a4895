//! Reverse-mode gradients over the fixed BDH-GPU op set.
//!
//! A `GradTape` records every executed operation in order, keeping each
//! node's forward value. `backward` walks the records once in exact reverse
//! execution order, pushing vector-Jacobian products to the inputs. Only the
//! ops the architecture uses are representable; this is not general autodiff.

use super::ops::{
    log_sum_exp, matmul_nt_raw, matmul_raw, matmul_tn_raw, relu_in_place, rope_angle,
};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable input (parameters, mostly).
    Leaf,
    /// Non-differentiable input (data, carried state, masks baked as values).
    Constant,
    /// a @ b
    Matmul { a: NodeId, b: NodeId },
    /// a @ b^T (b stored untransposed)
    MatmulNt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Relu { a: NodeId },
    LayerNorm { a: NodeId, eps: f32 },
    /// Row t rotated at absolute position start_pos + t.
    RopeRows { a: NodeId, start_pos: u64, freqs: Vec<f32> },
    /// Elementwise product with a constant mask of identical shape.
    MaskMul { a: NodeId, mask: Vec<f32> },
    /// Row t scaled by factors[t].
    RowScale { a: NodeId, factors: Vec<f32> },
    /// Column-concatenation of equal-height matrices.
    ConcatCols { parts: Vec<NodeId> },
    /// Row gather from an embedding table.
    Embed { table: NodeId, ids: Vec<usize> },
    /// Mean over rows of -log softmax(row)[target]; scalar output.
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    /// Sum of all entries; scalar output.
    Sum { a: NodeId },
    /// Identity with gradient flow cut.
    Detach,
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Ordered record of executed operations with captured values.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = super::ops::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul { a, b }, v, ng))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = super::ops::matmul_nt(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatmulNt { a, b }, v, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "add {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let v = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, v, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "mul {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, v, ng))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut data = self.value(a).data().to_vec();
        relu_in_place(&mut data);
        let v = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.needs(a);
        self.push(Op::Relu { a }, v, ng)
    }

    pub fn layer_norm(&mut self, a: NodeId, eps: f32) -> Result<NodeId, TensorError> {
        let v = super::ops::layer_norm(self.value(a), eps)?;
        let ng = self.needs(a);
        Ok(self.push(Op::LayerNorm { a, eps }, v, ng))
    }

    pub fn rope_rows(
        &mut self,
        a: NodeId,
        start_pos: u64,
        freqs: &[f32],
    ) -> Result<NodeId, TensorError> {
        let ft = Tensor::from_raw(vec![freqs.len()], freqs.to_vec());
        let v = super::ops::rope_rotate_rows(self.value(a), start_pos, &ft)?;
        let ng = self.needs(a);
        Ok(self.push(
            Op::RopeRows { a, start_pos, freqs: freqs.to_vec() },
            v,
            ng,
        ))
    }

    pub fn mask_mul(&mut self, a: NodeId, mask: Vec<f32>) -> Result<NodeId, TensorError> {
        if mask.len() != self.value(a).numel() {
            return Err(TensorError::ShapeMismatch(format!(
                "mask of {} entries on tensor {:?}",
                mask.len(),
                self.value(a).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let v = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.needs(a);
        Ok(self.push(Op::MaskMul { a, mask }, v, ng))
    }

    pub fn row_scale(&mut self, a: NodeId, factors: Vec<f32>) -> Result<NodeId, TensorError> {
        let rows = self.value(a).dim(0);
        if factors.len() != rows {
            return Err(TensorError::ShapeMismatch(format!(
                "{} row factors on {rows} rows",
                factors.len()
            )));
        }
        let cols = self.value(a).numel() / rows;
        let mut data = self.value(a).data().to_vec();
        for (row, &f) in data.chunks_mut(cols).zip(&factors) {
            for v in row {
                *v *= f;
            }
        }
        let v = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let ng = self.needs(a);
        Ok(self.push(Op::RowScale { a, factors }, v, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Usage("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).dim(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            if self.value(p).shape().len() != 2 || self.value(p).dim(0) != rows {
                return Err(TensorError::ShapeMismatch("concat_cols row mismatch".into()));
            }
            widths.push(self.value(p).dim(1));
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0f32; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let v = Tensor::from_raw(vec![rows, total], data);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols { parts: parts.to_vec() }, v, ng))
    }

    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let vocab = self.value(table).dim(0);
        let d = self.value(table).dim(1);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::Index(format!(
                "token {bad} out of range for vocab {vocab}"
            )));
        }
        let mut data = vec![0.0f32; ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            data[r * d..(r + 1) * d]
                .copy_from_slice(&self.value(table).data()[id * d..(id + 1) * d]);
        }
        let v = Tensor::from_raw(vec![ids.len(), d], data);
        let ng = self.needs(table);
        Ok(self.push(Op::Embed { table, ids: ids.to_vec() }, v, ng))
    }

    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
    ) -> Result<NodeId, TensorError> {
        let loss = super::ops::cross_entropy_logits(self.value(logits), targets)?;
        let v = Tensor::scalar(loss as f32);
        let ng = self.needs(logits);
        Ok(self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            v,
            ng,
        ))
    }

    /// The f64-accumulated loss for a cross-entropy node (finite-difference
    /// oracles need more precision than the stored f32 scalar).
    pub fn cross_entropy_value(&self, node: NodeId) -> Option<f64> {
        match &self.nodes[node.0].op {
            Op::CrossEntropy { logits, targets } => {
                super::ops::cross_entropy_logits(self.value(*logits), targets)
                    .ok()
                    .map(|v| v as f64)
            }
            _ => None,
        }
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let ng = self.needs(a);
        self.push(Op::Sum { a }, Tensor::scalar(total as f32), ng)
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(Op::Detach, v, false)
    }

    /// Reverse pass from a scalar loss node. Returns one gradient slot per
    /// node; slots for constants and unused nodes stay `None`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward wants a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                // Gradient arrived at a node that cannot propagate further.
                continue;
            }
            self.push_vjp(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g); // keep leaf gradients for the caller
            }
        }
        Ok(Gradients { slots: grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn accumulate(grads: &mut [Option<Vec<f32>>], id: NodeId, contrib: Vec<f32>) {
        match &mut grads[id.0] {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contrib) {
                    *b += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn push_vjp(&self, idx: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.value(*a).dim(0), self.value(*a).dim(1));
                let p = self.value(*b).dim(1);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_raw(m, p, k, g, self.value(*b).data(), &mut da);
                    Self::accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * p];
                    matmul_tn_raw(k, m, p, self.value(*a).data(), g, &mut db);
                    Self::accumulate(grads, *b, db);
                }
            }
            Op::MatmulNt { a, b } => {
                let (m, k) = (self.value(*a).dim(0), self.value(*a).dim(1));
                let p = self.value(*b).dim(0);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_raw(m, p, k, g, self.value(*b).data(), &mut da);
                    Self::accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; p * k];
                    matmul_tn_raw(p, m, k, g, self.value(*a).data(), &mut db);
                    Self::accumulate(grads, *b, db);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da = g
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(gi, bi)| gi * bi)
                        .collect();
                    Self::accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(gi, ai)| gi * ai)
                        .collect();
                    Self::accumulate(grads, *b, db);
                }
            }
            Op::Relu { a } => {
                if self.needs(*a) {
                    // Sub-gradient 0 at exactly 0: strict comparison.
                    let da = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(gi, ai)| if *ai > 0.0 { *gi } else { 0.0 })
                        .collect();
                    Self::accumulate(grads, *a, da);
                }
            }
            Op::LayerNorm { a, eps } => {
                if self.needs(*a) {
                    let input = self.value(*a).data();
                    let out = self.nodes[idx].value.data();
                    let d = *self.value(*a).shape().last().unwrap();
                    let mut da = vec![0.0f32; input.len()];
                    for r in 0..input.len() / d {
                        let xr = &input[r * d..(r + 1) * d];
                        let yr = &out[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dd = d as f64;
                        let mean = xr.iter().map(|&v| v as f64).sum::<f64>() / dd;
                        let var =
                            xr.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / dd;
                        let inv = 1.0 / (var + *eps as f64).sqrt();
                        let gmean = gr.iter().map(|&v| v as f64).sum::<f64>() / dd;
                        let gydot = gr
                            .iter()
                            .zip(yr)
                            .map(|(&gi, &yi)| gi as f64 * yi as f64)
                            .sum::<f64>()
                            / dd;
                        for i in 0..d {
                            da[r * d + i] = ((gr[i] as f64 - gmean - yr[i] as f64 * gydot)
                                * inv) as f32;
                        }
                    }
                    Self::accumulate(grads, *a, da);
                }
            }
            Op::RopeRows { a, start_pos, freqs } => {
                if self.needs(*a) {
                    // Inverse rotation: transpose of an orthogonal map.
                    let w = *self.value(*a).shape().last().unwrap();
                    let mut da = g.to_vec();
                    for (t, row) in da.chunks_mut(w).enumerate() {
                        for (i, &f) in freqs.iter().enumerate() {
                            let (c, s) = rope_angle((*start_pos + t as u64) as f64, f);
                            let (x, y) = (row[2 * i], row[2 * i + 1]);
                            row[2 * i] = x * c + y * s;
                            row[2 * i + 1] = -x * s + y * c;
                        }
                    }
                    Self::accumulate(grads, *a, da);
                }
            }
            Op::MaskMul { a, mask } => {
                if self.needs(*a) {
                    let da = g.iter().zip(mask).map(|(gi, m)| gi * m).collect();
                    Self::accumulate(grads, *a, da);
                }
            }
            Op::RowScale { a, factors } => {
                if self.needs(*a) {
                    let cols = self.value(*a).numel() / factors.len();
                    let mut da = g.to_vec();
                    for (row, &f) in da.chunks_mut(cols).zip(factors) {
                        for v in row {
                            *v *= f;
                        }
                    }
                    Self::accumulate(grads, *a, da);
                }
            }
            Op::ConcatCols { parts } => {
                let rows = self.nodes[idx].value.dim(0);
                let total = self.nodes[idx].value.dim(1);
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).dim(1);
                    if self.needs(p) {
                        let mut dp = vec![0.0f32; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + off..r * total + off + w]);
                        }
                        Self::accumulate(grads, p, dp);
                    }
                    off += w;
                }
            }
            Op::Embed { table, ids } => {
                if self.needs(*table) {
                    let d = self.value(*table).dim(1);
                    let mut dt = vec![0.0f32; self.value(*table).numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += g[r * d + c];
                        }
                    }
                    Self::accumulate(grads, *table, dt);
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if self.needs(*logits) {
                    let lv = self.value(*logits).data();
                    let v = self.value(*logits).dim(1);
                    let scale = g[0] as f64 / targets.len() as f64;
                    let mut dl = vec![0.0f32; lv.len()];
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &lv[r * v..(r + 1) * v];
                        let lse = log_sum_exp(row);
                        for c in 0..v {
                            let p = (row[c] as f64 - lse).exp();
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            dl[r * v + c] = ((p - onehot) * scale) as f32;
                        }
                    }
                    Self::accumulate(grads, *logits, dl);
                }
            }
            Op::Sum { a } => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, vec![g[0]; self.value(*a).numel()]);
                }
            }
            Op::Detach => {}
        }
    }
}

/// Per-node gradient slots produced by one backward pass.
pub struct Gradients {
    slots: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a node (zeros if the node never received one).
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.slots[id.0] {
            Some(buf) => Tensor::from_raw(self.shapes[id.0].clone(), buf.clone()),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.slots[id.0].take() {
            Some(buf) => Tensor::from_raw(self.shapes[id.0].clone(), buf),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn sum_relu_gradient() {
        let mut tape = GradTape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap());
        let r = tape.relu(x);
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.grad(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = GradTape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let q = tape.matmul_nt(x, x).unwrap();
        let grads = tape.backward(q).unwrap();
        for (g, x) in grads.grad(x).data().iter().zip([1.0f32, -2.0, 0.5]) {
            assert!((g - 2.0 * x).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = GradTape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = GradTape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let d = tape.detach(x);
        let y = tape.mul(d, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        // d(x*stop(x))/dx = stop(x), not 2x.
        assert_eq!(grads.grad(x).data(), &[1.0, 2.0]);
    }

    /// Central finite differences on an arbitrary recorded scalar function.
    fn finite_diff_check<F>(build: F, n_inputs: usize, h: f32, tol: f32)
    where
        F: Fn(&mut GradTape, &[f32]) -> (NodeId, NodeId),
    {
        let mut rng = seeded(42);
        let base: Vec<f32> = (0..n_inputs).map(|_| rng.random_range(-2.0..2.0)).collect();

        let mut tape = GradTape::new();
        let (input, loss) = build(&mut tape, &base);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.grad(input);

        for i in 0..n_inputs {
            // Skip points too close to a ReLU kink for a two-sided estimate.
            if base[i].abs() < 1e-4 {
                continue;
            }
            let mut lo = base.clone();
            let mut hi = base.clone();
            lo[i] -= h;
            hi[i] += h;
            let mut tl = GradTape::new();
            let (_, ll) = build(&mut tl, &lo);
            let mut th = GradTape::new();
            let (_, lh) = build(&mut th, &hi);
            let f_lo = tl.value(ll).data()[0] as f64;
            let f_hi = th.value(lh).data()[0] as f64;
            let fd = ((f_hi - f_lo) / (2.0 * h as f64)) as f32;
            let an = analytic.data()[i];
            // f32 loss values put the fd noise floor around 1e-6 / 2h; below
            // that the central difference measures rounding, not gradient.
            if fd.abs().max(an.abs()) < 2e-3 {
                continue;
            }
            let denom = fd.abs().max(an.abs());
            assert!(
                (fd - an).abs() / denom < tol,
                "entry {i}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn finite_difference_matmul_relu_ln_chain() {
        finite_diff_check(
            |tape, vals| {
                let x = tape.leaf(Tensor::new(vec![2, 4], vals.to_vec()).unwrap());
                let w = tape.constant(
                    Tensor::new(
                        vec![4, 3],
                        (0..12).map(|i| ((i * 7 % 5) as f32 - 2.0) * 0.3).collect(),
                    )
                    .unwrap(),
                );
                let y = tape.matmul(x, w).unwrap();
                let r = tape.relu(y);
                let n = tape.layer_norm(r, 1e-5).unwrap();
                let ramp: Vec<f32> = (0..6).map(|i| 0.5 + i as f32).collect();
                let q = tape.mask_mul(n, ramp).unwrap();
                let loss = tape.sum(q);
                (x, loss)
            },
            8,
            1e-3,
            1e-3,
        );
    }

    #[test]
    fn finite_difference_rope_and_masks() {
        finite_diff_check(
            |tape, vals| {
                let x = tape.leaf(Tensor::new(vec![3, 4], vals.to_vec()).unwrap());
                let r = tape.rope_rows(x, 5, &[0.37, 1.1]).unwrap();
                let s = tape.matmul_nt(r, r).unwrap();
                let mask: Vec<f32> = (0..9)
                    .map(|i| if (i / 3) > (i % 3) { 0.7 } else { 0.0 })
                    .collect();
                let m = tape.mask_mul(s, mask).unwrap();
                let sc = tape.row_scale(m, vec![1.0, 0.5, 0.25]).unwrap();
                let loss = tape.sum(sc);
                (x, loss)
            },
            12,
            1e-3,
            1e-3,
        );
    }

    #[test]
    fn finite_difference_cross_entropy_and_embed() {
        finite_diff_check(
            |tape, vals| {
                let table = tape.leaf(Tensor::new(vec![3, 4], vals.to_vec()).unwrap());
                let e = tape.embed(table, &[0, 2, 1, 2]).unwrap();
                let w = tape.constant(
                    Tensor::new(
                        vec![4, 3],
                        (0..12).map(|i| ((i % 3) as f32 - 1.0) * 0.5).collect(),
                    )
                    .unwrap(),
                );
                let logits = tape.matmul(e, w).unwrap();
                let loss = tape.cross_entropy(logits, &[2, 0, 1, 1]).unwrap();
                (table, loss)
            },
            12,
            1e-3,
            1e-3,
        );
    }

    #[test]
    fn finite_difference_concat_and_add() {
        finite_diff_check(
            |tape, vals| {
                let x = tape.leaf(Tensor::new(vec![2, 4], vals.to_vec()).unwrap());
                let w1 = tape.constant(
                    Tensor::new(vec![4, 2], (0..8).map(|i| 0.2 * i as f32 - 0.7).collect())
                        .unwrap(),
                );
                let w2 = tape.constant(
                    Tensor::new(vec![4, 2], (0..8).map(|i| 0.5 - 0.13 * i as f32).collect())
                        .unwrap(),
                );
                let a = tape.matmul(x, w1).unwrap();
                let b = tape.matmul(x, w2).unwrap();
                let cat = tape.concat_cols(&[a, b]).unwrap();
                let r = tape.relu(cat);
                let s = tape.add(r, cat).unwrap();
                let loss = tape.sum(s);
                (x, loss)
            },
            8,
            1e-3,
            1e-3,
        );
    }

    #[test]
    fn tape_records_in_execution_order() {
        let mut tape = GradTape::new();
        let a = tape.leaf(Tensor::scalar(1.0));
        let b = tape.relu(a);
        let c = tape.sum(b);
        assert!(a.0 < b.0 && b.0 < c.0);
        assert_eq!(tape.len(), 3);
    }
}
