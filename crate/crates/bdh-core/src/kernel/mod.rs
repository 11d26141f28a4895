//! BDH as a local edge-reweighting process: sparse graphs, the four-phase
//! synapse ruleset, the dense state-space oracle, and the circuit
//! constructions relating graph and tensor forms.
//!
//! Kernel state and the oracle compute in f64 so the equivalence suite
//! measures semantics, not accumulation noise.

mod circuits;
mod normfree;
mod rounds;

pub use circuits::{
    decompose_nonneg_circuit, sparsify_attention_graph, square_subgraph, CircuitParts, ValuePrep,
};
pub use normfree::{
    normfree_forward, random_normfree_instance, verify_equivalence, KernelInit, NormfreeModel,
    NormfreeTrace,
};
pub use rounds::{run_round, step_token};

use crate::model::ModelParams;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("graph too large: {0}")]
    Size(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("malformed graph: {0}")]
    Graph(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Weighted directed edge list on `n` nodes. Matrix reading: an edge
/// `(from, to, w)` is entry M(from, to) = w.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl SparseGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, KernelError> {
        let mut seen = HashSet::with_capacity(edges.len());
        for &(i, j, w) in &edges {
            if i >= n || j >= n {
                return Err(KernelError::Graph(format!(
                    "edge ({i},{j}) outside node range {n}"
                )));
            }
            if !w.is_finite() {
                return Err(KernelError::Graph(format!("edge ({i},{j}) weight not finite")));
            }
            if !seen.insert((i, j)) {
                return Err(KernelError::Graph(format!("duplicate edge ({i},{j})")));
            }
        }
        Ok(Self { n, edges })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: vec![] }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// All weights strictly non-negative (kernel-parameter graphs require it).
    pub fn is_nonneg(&self) -> bool {
        self.edges.iter().all(|&(_, _, w)| w >= 0.0)
    }

    /// Dense row-major n*n matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for &(i, j, w) in &self.edges {
            m[i * self.n + j] = w;
        }
        m
    }

    /// Dense matrix to graph, keeping strictly non-zero entries.
    pub fn from_dense(n: usize, m: &[f64]) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = m[i * n + j];
                if w != 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        Self { n, edges }
    }

    /// Plain-text edge list: `bdh-graph v1 <n> <m>` header, then `i j w`
    /// per line with 9 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), KernelError> {
        writeln!(w, "bdh-graph v1 {} {}", self.n, self.edges.len())?;
        for &(i, j, wt) in &self.edges {
            writeln!(w, "{i} {j} {:.8e}", wt)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, KernelError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| KernelError::Parse("empty graph file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "bdh-graph" || parts[1] != "v1" {
            return Err(KernelError::Parse(format!("bad header: {header}")));
        }
        let n: usize = parts[2]
            .parse()
            .map_err(|_| KernelError::Parse("bad node count".into()))?;
        let m: usize = parts[3]
            .parse()
            .map_err(|_| KernelError::Parse("bad edge count".into()))?;
        let mut edges = Vec::with_capacity(m);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(KernelError::Parse(format!("line {}: want `i j w`", lineno + 2)));
            }
            let bad = |_| KernelError::Parse(format!("line {}: bad number", lineno + 2));
            let i = f[0].parse().map_err(bad)?;
            let j = f[1].parse().map_err(bad)?;
            let w = f[2].parse().map_err(|_| KernelError::Parse(format!("line {}: bad weight", lineno + 2)))?;
            edges.push((i, j, w));
        }
        if edges.len() != m {
            return Err(KernelError::Parse(format!(
                "header promises {m} edges, file has {}",
                edges.len()
            )));
        }
        Self::new(n, edges)
    }
}

/// The five parameter graphs plus per-synapse damping of one BDH model.
#[derive(Debug, Clone)]
pub struct KernelModel {
    pub n: usize,
    pub layers: usize,
    pub gx_e: SparseGraph,
    pub gx_i: SparseGraph,
    pub gy_e: SparseGraph,
    pub gy_i: SparseGraph,
    /// Synapse graph; state sigma lives only on these edges.
    pub gs: SparseGraph,
    /// Damping fraction u(i,j) in [0,1] per gs edge (0 = persist, 1 = clear).
    pub u: Vec<f64>,
}

impl KernelModel {
    pub fn validate(&self) -> Result<(), KernelError> {
        for (name, g) in [
            ("gx_e", &self.gx_e),
            ("gx_i", &self.gx_i),
            ("gy_e", &self.gy_e),
            ("gy_i", &self.gy_i),
            ("gs", &self.gs),
        ] {
            if g.n != self.n {
                return Err(KernelError::Graph(format!("{name} node count != {}", self.n)));
            }
            if !g.is_nonneg() {
                return Err(KernelError::Graph(format!("{name} has negative rule weights")));
            }
        }
        if self.u.len() != self.gs.edge_count() {
            return Err(KernelError::Graph("u must align with gs edges".into()));
        }
        if self.u.iter().any(|&u| !(0.0..=1.0).contains(&u)) {
            return Err(KernelError::Domain("damping u must lie in [0,1]".into()));
        }
        if self.layers == 0 {
            return Err(KernelError::Domain("layers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-neuron pulse variables and per-synapse state.
#[derive(Debug, Clone)]
pub struct KernelState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    pub xe: Vec<f64>,
    pub xi: Vec<f64>,
    pub ye: Vec<f64>,
    pub yi: Vec<f64>,
    /// `sigma[l][e]` for gs edge index e.
    pub sigma: Vec<Vec<f64>>,
    pub round: u64,
}

impl KernelState {
    pub fn new(model: &KernelModel) -> Self {
        let z = vec![0.0; model.n];
        Self {
            x: z.clone(),
            y: z.clone(),
            a: z.clone(),
            xe: z.clone(),
            xi: z.clone(),
            ye: z.clone(),
            yi: z,
            sigma: vec![vec![0.0; model.gs.edge_count()]; model.layers],
            round: 0,
        }
    }

    /// Non-negativity of all neuron variables, checked after committed rounds.
    pub fn neuron_vars_nonneg(&self) -> bool {
        [&self.x, &self.y, &self.a, &self.xe, &self.xi, &self.ye, &self.yi]
            .iter()
            .all(|v| v.iter().all(|&e| e >= 0.0))
    }
}

/// Guard for materializing dense n*n oracles.
pub const DENSE_GUARD: usize = 2048;

/// Dense instantiation of the tensor model as a BDH kernel:
/// Gx^e - Gx^i = Dx E, Gy^e - Gy^i = Dy E, Gs all-ones, u = 1 - gamma.
///
/// Defined for single-head models: with several heads the per-head column
/// restriction of attention is not expressible as a Hadamard mask on sigma.
pub fn from_tensor_model(params: &ModelParams) -> Result<KernelModel, KernelError> {
    let cfg = &params.config;
    if cfg.n > DENSE_GUARD {
        return Err(KernelError::Size(format!(
            "n={} exceeds the dense materialization guard {DENSE_GUARD}; use the sparsified path",
            cfg.n
        )));
    }
    if cfg.heads != 1 {
        return Err(KernelError::Unsupported(
            "graph correspondence is defined for single-head models".into(),
        ));
    }
    let n = cfg.n;
    let d = cfg.d;
    let dx = params.decoder_x_head(0); // [d, n] listing orientation
    let dy = params.decoder_y_head(0);
    let enc = params.encoder.data(); // [n, d]

    // G(i,j) = sum_a D[a,i] * E_paper(a,j) with E_paper(a,j) = enc[j*d+a].
    let product = |dec: &[f32]| -> Vec<f64> {
        let mut g = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0f64;
                for a in 0..d {
                    acc += dec[a * n + i] as f64 * enc[j * d + a] as f64;
                }
                g[i * n + j] = acc;
            }
        }
        g
    };
    let split = |g: &[f64]| {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = g[i * n + j];
                if w > 0.0 {
                    pos.push((i, j, w));
                } else if w < 0.0 {
                    neg.push((i, j, -w));
                }
            }
        }
        (SparseGraph { n, edges: pos }, SparseGraph { n, edges: neg })
    };
    let gx = product(dx);
    let gy = product(dy);
    let (gx_e, gx_i) = split(&gx);
    let (gy_e, gy_i) = split(&gy);

    let mut gs_edges = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            gs_edges.push((i, j, 1.0));
        }
    }
    let u = vec![1.0 - cfg.head_gamma(0) as f64; n * n];
    let model = KernelModel {
        n,
        layers: cfg.layers,
        gx_e,
        gx_i,
        gy_e,
        gy_i,
        gs: SparseGraph { n, edges: gs_edges },
        u,
    };
    model.validate()?;
    Ok(model)
}
