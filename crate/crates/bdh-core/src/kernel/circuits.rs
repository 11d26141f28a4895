//! Circuit constructions tying the low-rank tensor form to sparse graphs:
//! the two-layer non-negative circuits realizing a signed product D*E, and
//! the sparse-synapse attention embedding.

use super::{KernelError, SparseGraph};
use crate::tensor::Tensor;

/// Positive/negative split pieces of a signed product D*E:
/// (De - Di) Ep == D*E exactly, all three matrices non-negative.
pub struct CircuitParts {
    pub n: usize,
    pub d: usize,
    /// n x 2d
    pub d_exc: Vec<f64>,
    /// n x 2d
    pub d_inh: Vec<f64>,
    /// 2d x n
    pub e_prime: Vec<f64>,
}

pub(crate) fn split_parts(d_mat: &Tensor, e_mat: &Tensor) -> Result<CircuitParts, KernelError> {
    if d_mat.shape().len() != 2 || e_mat.shape().len() != 2 {
        return Err(KernelError::Graph("decompose wants rank-2 matrices".into()));
    }
    let (n, d) = (d_mat.dim(0), d_mat.dim(1));
    if e_mat.dim(0) != d || e_mat.dim(1) != n {
        return Err(KernelError::Graph(format!(
            "shapes {:?} and {:?} are not an n*d / d*n pair",
            d_mat.shape(),
            e_mat.shape()
        )));
    }
    let mut d_exc = vec![0.0f64; n * 2 * d];
    let mut d_inh = vec![0.0f64; n * 2 * d];
    let mut e_prime = vec![0.0f64; 2 * d * n];
    for a in 0..d {
        for j in 0..n {
            let v = e_mat.data()[a * n + j] as f64;
            e_prime[a * n + j] = v.max(0.0);
            e_prime[(a + d) * n + j] = (-v).max(0.0);
        }
    }
    for i in 0..n {
        for a in 0..d {
            let v = d_mat.data()[i * d + a] as f64;
            d_exc[i * 2 * d + a] = v.max(0.0);
            d_exc[i * 2 * d + a + d] = (-v).max(0.0);
            d_inh[i * 2 * d + a] = (-v).max(0.0);
            d_inh[i * 2 * d + a + d] = v.max(0.0);
        }
    }
    Ok(CircuitParts { n, d, d_exc, d_inh, e_prime })
}

/// Build one two-layer circuit on V (0..n) + synapse layer S (n..n+2d):
/// edges (i -> n+a) with D-part weights and (n+a -> j) with E' weights.
/// Dead synapse nodes (no inflow or no outflow) are pruned; they cannot
/// contribute to H^2[V].
fn circuit_graph(n: usize, d2: usize, d_part: &[f64], e_prime: &[f64]) -> SparseGraph {
    let mut edges = Vec::new();
    for a in 0..d2 {
        let has_in = (0..n).any(|i| d_part[i * d2 + a] > 0.0);
        let has_out = (0..n).any(|j| e_prime[a * n + j] > 0.0);
        if !(has_in && has_out) {
            continue;
        }
        for i in 0..n {
            let w = d_part[i * d2 + a];
            if w > 0.0 {
                edges.push((i, n + a, w));
            }
        }
        for j in 0..n {
            let w = e_prime[a * n + j];
            if w > 0.0 {
                edges.push((n + a, j, w));
            }
        }
    }
    SparseGraph { n: n + d2, edges }
}

/// The construction behind "graph feed-forward is at least as expressive":
/// two non-negative circuits He, Hi on n+2d nodes with
/// He^2[V] - Hi^2[V] == D*E exactly.
pub fn decompose_nonneg_circuit(
    d_mat: &Tensor,
    e_mat: &Tensor,
) -> Result<(SparseGraph, SparseGraph), KernelError> {
    let parts = split_parts(d_mat, e_mat)?;
    let d2 = 2 * parts.d;
    let he = circuit_graph(parts.n, d2, &parts.d_exc, &parts.e_prime);
    let hi = circuit_graph(parts.n, d2, &parts.d_inh, &parts.e_prime);
    Ok((he, hi))
}

/// Two-hop composition restricted to the first `v_count` nodes:
/// G = H^2[V] with V = {0..v_count}.
pub fn square_subgraph(h: &SparseGraph, v_count: usize) -> Result<SparseGraph, KernelError> {
    if v_count > h.n {
        return Err(KernelError::Graph(format!(
            "V of {v_count} nodes inside a graph of {}",
            h.n
        )));
    }
    // Group edges by middle node.
    let mut into: Vec<Vec<(usize, f64)>> = vec![vec![]; h.n];
    let mut out_of: Vec<Vec<(usize, f64)>> = vec![vec![]; h.n];
    for &(i, j, w) in &h.edges {
        if i < v_count {
            into[j].push((i, w));
        }
        if j < v_count {
            out_of[i].push((j, w));
        }
    }
    let mut acc = std::collections::HashMap::new();
    for k in 0..h.n {
        for &(i, wi) in &into[k] {
            for &(j, wj) in &out_of[k] {
                *acc.entry((i, j)).or_insert(0.0) += wi * wj;
            }
        }
    }
    let mut edges: Vec<(usize, usize, f64)> = acc
        .into_iter()
        .filter(|&(_, w)| w != 0.0)
        .map(|((i, j), w)| (i, j, w))
        .collect();
    edges.sort_unstable_by_key(|&(i, j, _)| (i, j));
    Ok(SparseGraph { n: v_count, edges })
}

/// Linear value preparation for sparse attention: immerse n-vectors onto the
/// designated synapse-carrier neurons through the non-negative split of E.
pub struct ValuePrep {
    /// The 2d designated neuron indices.
    pub designated: Vec<usize>,
    /// 2d x n immersion matrix (non-negative).
    pub matrix: Vec<f64>,
    pub n: usize,
}

impl ValuePrep {
    /// Map a non-negative n-vector to an n-vector supported on the
    /// designated set.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let rows = self.designated.len();
        let mut out = vec![0.0; self.n];
        for (r, &dst) in self.designated.iter().enumerate() {
            let row = &self.matrix[r * self.n..(r + 1) * self.n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(y) {
                acc += a * b;
            }
            out[dst] = acc;
        }
        debug_assert_eq!(rows, self.designated.len());
        out
    }
}

/// Sparse-attention construction: synapses only on rows of 2d designated
/// neurons (2dn edges), with values prepared by immersion through E'. The
/// resulting attention output equals the dense low-rank form exactly.
pub fn sparsify_attention_graph(
    dy_mat: &Tensor,
    e_mat: &Tensor,
) -> Result<(SparseGraph, ValuePrep), KernelError> {
    let parts = split_parts(dy_mat, e_mat)?;
    let (n, d) = (parts.n, parts.d);
    if 2 * d > n {
        return Err(KernelError::Size(format!(
            "need 2d = {} designated neurons out of n = {n}",
            2 * d
        )));
    }
    let designated: Vec<usize> = (0..2 * d).collect();
    let mut edges = Vec::with_capacity(2 * d * n);
    for &r in &designated {
        for j in 0..n {
            edges.push((r, j, 1.0));
        }
    }
    Ok((
        SparseGraph { n, edges },
        ValuePrep { designated, matrix: parts.e_prime, n },
    ))
}
