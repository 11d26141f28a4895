//! Dense reference implementation of the layer-norm-free state-space
//! equations, and the equivalence check against the ruleset scheduler.
//!
//! Per token (inputs arrive through x; y carries from the previous token's
//! last layer into the first layer's Hebbian write):
//!
//!   for l in 0..L:
//!     a       = sigma_l x                     (read, strictly causal)
//!     sigma_l = (sigma_l + (y (x) x) . Gs) . damp
//!     y       = relu(Gy a) . x
//!     x       = x + relu(Gx y)
//!
//! Note the sigma <-> y loop is closed: from an all-zero state the system
//! stays silent, so randomized equivalence runs seed a non-zero state.

use super::{KernelError, KernelModel, KernelState, SparseGraph};
use crate::rng::SeededRng;
use rand::Rng;

/// Dense signed matrices of one BDH-Normfree instance (f64, row-major n*n).
#[derive(Debug, Clone)]
pub struct NormfreeModel {
    pub n: usize,
    pub layers: usize,
    /// Signed feed-forward matrix driving x updates (Gx^e - Gx^i).
    pub gx: Vec<f64>,
    /// Signed matrix driving y (Gy^e - Gy^i).
    pub gy: Vec<f64>,
    /// Non-negative Hebbian gate.
    pub gs: Vec<f64>,
    /// Per-entry retention 1 - u(i,j).
    pub damp: Vec<f64>,
}

impl NormfreeModel {
    pub fn from_kernel(model: &KernelModel) -> Result<Self, KernelError> {
        model.validate()?;
        if model.n > super::DENSE_GUARD {
            return Err(KernelError::Size(format!(
                "n={} exceeds the dense guard",
                model.n
            )));
        }
        let n = model.n;
        let mut gx = model.gx_e.to_dense();
        for &(i, j, w) in &model.gx_i.edges {
            gx[i * n + j] -= w;
        }
        let mut gy = model.gy_e.to_dense();
        for &(i, j, w) in &model.gy_i.edges {
            gy[i * n + j] -= w;
        }
        let gs = model.gs.to_dense();
        let mut damp = vec![1.0; n * n];
        for (e, &(i, j, _)) in model.gs.edges.iter().enumerate() {
            damp[i * n + j] = 1.0 - model.u[e];
        }
        Ok(Self { n, layers: model.layers, gx, gy, gs, damp })
    }

    fn validate_dims(&self) -> Result<(), KernelError> {
        let nn = self.n * self.n;
        for (name, m) in [("gx", &self.gx), ("gy", &self.gy), ("gs", &self.gs), ("damp", &self.damp)]
        {
            if m.len() != nn {
                return Err(KernelError::Graph(format!("{name} is not {0}x{0}", self.n)));
            }
        }
        Ok(())
    }
}

/// Everything the oracle produced: per-token outputs and state snapshots.
#[derive(Debug, Clone)]
pub struct NormfreeTrace {
    /// x after the full layer stack, per token.
    pub x_out: Vec<Vec<f64>>,
    /// sigma at end of each token, per layer (dense n*n).
    pub sigma_after: Vec<Vec<Vec<f64>>>,
    /// y carried out of each token.
    pub y_after: Vec<Vec<f64>>,
}

fn matvec(n: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        out[i] = acc;
    }
}

/// Run the dense equations; strictly sequential in t and l.
pub fn normfree_forward(
    model: &NormfreeModel,
    x_inputs: &[Vec<f64>],
    init_sigma: Option<&[Vec<f64>]>,
    init_y: Option<&[f64]>,
) -> Result<NormfreeTrace, KernelError> {
    model.validate_dims()?;
    let n = model.n;
    let nn = n * n;
    let mut sigma: Vec<Vec<f64>> = match init_sigma {
        Some(s) => {
            if s.len() != model.layers || s.iter().any(|m| m.len() != nn) {
                return Err(KernelError::Graph("initial sigma has wrong shape".into()));
            }
            s.to_vec()
        }
        None => vec![vec![0.0; nn]; model.layers],
    };
    let mut y = match init_y {
        Some(v) => {
            if v.len() != n {
                return Err(KernelError::Graph("initial y has wrong length".into()));
            }
            v.to_vec()
        }
        None => vec![0.0; n],
    };

    let mut trace = NormfreeTrace {
        x_out: Vec::with_capacity(x_inputs.len()),
        sigma_after: Vec::with_capacity(x_inputs.len()),
        y_after: Vec::with_capacity(x_inputs.len()),
    };
    let mut a = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for x_in in x_inputs {
        if x_in.len() != n {
            return Err(KernelError::Domain("input length mismatch".into()));
        }
        let mut x = x_in.clone();
        for l in 0..model.layers {
            // read
            matvec(n, &sigma[l], &x, &mut a);
            // Hebbian write with the previous layer's y, then damping
            let s = &mut sigma[l];
            for i in 0..n {
                let yi = y[i];
                for j in 0..n {
                    let idx = i * n + j;
                    s[idx] = (s[idx] + yi * x[j] * model.gs[idx]) * model.damp[idx];
                }
            }
            // y = relu(Gy a) . x
            matvec(n, &model.gy, &a, &mut tmp);
            for i in 0..n {
                y[i] = tmp[i].max(0.0) * x[i];
            }
            // x residual update
            matvec(n, &model.gx, &y, &mut tmp);
            for i in 0..n {
                x[i] += tmp[i].max(0.0);
            }
        }
        trace.x_out.push(x);
        trace.sigma_after.push(sigma.clone());
        trace.y_after.push(y.clone());
    }
    Ok(trace)
}

/// Optional non-zero starting state shared by both sides of an equivalence run.
#[derive(Debug, Clone, Default)]
pub struct KernelInit {
    /// Per layer, per gs-edge sigma values.
    pub sigma: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// Run the ruleset scheduler and the dense oracle on identical inputs;
/// return the max absolute divergence over all X outputs and sigma entries.
pub fn verify_equivalence(
    model: &KernelModel,
    x_inputs: &[Vec<f64>],
    init: Option<&KernelInit>,
) -> Result<f64, KernelError> {
    model.validate()?;
    let n = model.n;
    let dense = NormfreeModel::from_kernel(model)?;

    let mut state = KernelState::new(model);
    let mut init_sigma_dense = None;
    let mut init_y = None;
    if let Some(init) = init {
        if init.sigma.len() != model.layers
            || init.sigma.iter().any(|s| s.len() != model.gs.edge_count())
        {
            return Err(KernelError::Graph("init sigma misaligned with gs".into()));
        }
        if init.y.len() != n {
            return Err(KernelError::Graph("init y has wrong length".into()));
        }
        state.sigma = init.sigma.clone();
        state.y = init.y.clone();
        let mut dense_sigma = vec![vec![0.0; n * n]; model.layers];
        for l in 0..model.layers {
            for (e, &(i, j, _)) in model.gs.edges.iter().enumerate() {
                dense_sigma[l][i * n + j] = init.sigma[l][e];
            }
        }
        init_sigma_dense = Some(dense_sigma);
        init_y = Some(init.y.clone());
    }

    let oracle = normfree_forward(
        &dense,
        x_inputs,
        init_sigma_dense.as_deref(),
        init_y.as_deref(),
    )?;

    let mut max_diff = 0.0f64;
    for (t, x_in) in x_inputs.iter().enumerate() {
        let out = super::step_token(model, &mut state, x_in)?;
        for (a, b) in out.iter().zip(&oracle.x_out[t]) {
            max_diff = max_diff.max((a - b).abs());
        }
        for l in 0..model.layers {
            for (e, &(i, j, _)) in model.gs.edges.iter().enumerate() {
                let diff = (state.sigma[l][e] - oracle.sigma_after[t][l][i * n + j]).abs();
                max_diff = max_diff.max(diff);
            }
        }
    }
    Ok(max_diff)
}

/// A random live BDH-Normfree instance: low-rank signed feed-forward graphs,
/// random Hebbian gate and damping, plus a state seed and an input sequence.
pub fn random_normfree_instance(
    n: usize,
    d: usize,
    layers: usize,
    t_len: usize,
    rng: &mut SeededRng,
) -> (KernelModel, KernelInit, Vec<Vec<f64>>) {
    // Low-rank factors scaled so D*E entries come out with std ~ 1/n, which
    // keeps the residual cascade bounded over t_len tokens.
    let scale = (1.0 / (d as f64 * n as f64 * n as f64)).powf(0.25) * 3.0f64.sqrt();
    fn factor(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Vec<f64> {
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect()
    }
    let lowrank_signed = |rng: &mut SeededRng| -> Vec<f64> {
        let dm = factor(n, d, scale, rng);
        let em = factor(d, n, scale, rng);
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for a in 0..d {
                    acc += dm[i * d + a] * em[a * n + j];
                }
                g[i * n + j] = acc;
            }
        }
        g
    };
    let gx_dense = lowrank_signed(rng);
    let gy_dense = lowrank_signed(rng);

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
    let (gx_e, gx_i) = split(&gx_dense);
    let (gy_e, gy_i) = split(&gy_dense);

    let mut gs_edges = Vec::new();
    let mut u = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.random::<f64>() < 0.6 {
                gs_edges.push((i, j, rng.random_range(0.0..2.0 / n as f64)));
                u.push(match rng.random_range(0..3u8) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random::<f64>(),
                });
            }
        }
    }
    let model = KernelModel {
        n,
        layers,
        gx_e,
        gx_i,
        gy_e,
        gy_i,
        gs: SparseGraph { n, edges: gs_edges },
        u,
    };

    let sigma = (0..layers)
        .map(|_| {
            (0..model.gs.edge_count())
                .map(|_| rng.random_range(0.0..2.0 / n as f64))
                .collect()
        })
        .collect();
    let y = (0..n)
        .map(|_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 })
        .collect();
    let init = KernelInit { sigma, y };

    let inputs = (0..t_len)
        .map(|_| {
            (0..n)
                .map(|_| if rng.random::<f64>() < 0.35 { rng.random::<f64>() } else { 0.0 })
                .collect()
        })
        .collect();
    (model, init, inputs)
}
