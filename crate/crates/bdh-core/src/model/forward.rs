//! Token-parallel forward pass, recorded on a gradient tape.
//!
//! Per layer (weights shared across layers):
//!   x_h   = relu(v* @ Dx_h)                         queries/keys, per head
//!   a*_h  = strictly-causal linear attention of rotated x against rotated
//!           past x, values v* (the layer input), decayed per head
//!   y_h   = relu(layer_norm(a*_h) @ Dy_h) * x_h
//!   v*    = layer_norm(v* + layer_norm(y @ E))
//!
//! Self-attention at the current position is excluded (mask is strictly
//! lower-triangular). A carried attention state enters as a constant, so
//! gradient flow is cut at minibatch boundaries.

use super::stream::StreamState;
use super::{ModelConfig, ModelError, ModelParams};
use crate::rng::SeededRng;
use crate::tensor::{GradTape, NodeId, Tensor};
use rand::Rng;

/// Activations recorded per (token, layer) during a forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub config: ModelConfig,
    /// Post-ReLU, pre-attention keys/queries; `[T][L][n]`, head-major.
    pub x: Vec<Vec<Vec<f32>>>,
    /// Gated layer output; `[T][L][n]`, head-major.
    pub y: Vec<Vec<Vec<f32>>>,
    /// Layer input (the attention value vector); `[T][L][d]`.
    pub v_in: Vec<Vec<Vec<f32>>>,
    /// Attention output per head; `[T][L][h*d]`.
    pub a_star: Vec<Vec<Vec<f32>>>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x_head(&self, t: usize, layer: usize, head: usize) -> &[f32] {
        let nh = self.config.nh();
        &self.x[t][layer][head * nh..(head + 1) * nh]
    }

    pub fn y_head(&self, t: usize, layer: usize, head: usize) -> &[f32] {
        let nh = self.config.nh();
        &self.y[t][layer][head * nh..(head + 1) * nh]
    }

    pub fn a_star_head(&self, t: usize, layer: usize, head: usize) -> &[f32] {
        let d = self.config.d;
        &self.a_star[t][layer][head * d..(head + 1) * d]
    }

    fn with_capacity(config: &ModelConfig, t: usize) -> Self {
        Self {
            config: config.clone(),
            x: Vec::with_capacity(t),
            y: Vec::with_capacity(t),
            v_in: Vec::with_capacity(t),
            a_star: Vec::with_capacity(t),
        }
    }

    pub(crate) fn push_token(&mut self) {
        let l = self.config.layers;
        self.x.push(Vec::with_capacity(l));
        self.y.push(Vec::with_capacity(l));
        self.v_in.push(Vec::with_capacity(l));
        self.a_star.push(Vec::with_capacity(l));
    }
}

/// Tape node ids of the parameter leaves, for gradient extraction.
pub struct ParamNodes {
    pub encoder: NodeId,
    pub decoder_x: Vec<NodeId>,
    pub decoder_y: Vec<NodeId>,
    pub token_embedding: NodeId,
    pub readout: NodeId,
}

/// Gradients in the same shapes as `ModelParams` tensors.
pub struct ParamGrads {
    pub encoder: Tensor,
    pub decoder_x: Tensor,
    pub decoder_y: Tensor,
    pub token_embedding: Tensor,
    pub readout: Tensor,
}

impl ParamGrads {
    pub fn tensors(&self) -> [(&'static str, &Tensor); 5] {
        [
            ("encoder", &self.encoder),
            ("decoder_x", &self.decoder_x),
            ("decoder_y", &self.decoder_y),
            ("token_embedding", &self.token_embedding),
            ("readout", &self.readout),
        ]
    }
}

/// One recorded forward pass with its loss, ready for a backward call.
pub struct TrainGraph {
    pub tape: GradTape,
    pub loss_node: NodeId,
    pub logits_node: NodeId,
    pub nodes: ParamNodes,
    /// Concatenated y node per layer (for sparsity bookkeeping).
    pub y_nodes: Vec<NodeId>,
    /// f64-accumulated loss.
    pub loss: f64,
    /// Attention state after the chunk, for TBPTT carry (gradients cut).
    pub new_state: StreamState,
    pub trace: Option<ActivationTrace>,
}

impl TrainGraph {
    /// Backward pass; gradients assembled into parameter-shaped tensors.
    pub fn param_grads(&self) -> Result<ParamGrads, ModelError> {
        let mut grads = self.tape.backward(self.loss_node)?;
        let cfg = &self.trace_config();
        let (h, d, nh) = (cfg.heads, cfg.d, cfg.nh());
        let mut dx = Vec::with_capacity(h * d * nh);
        let mut dy = Vec::with_capacity(h * d * nh);
        for head in 0..h {
            dx.extend_from_slice(grads.grad(self.nodes.decoder_x[head]).data());
            dy.extend_from_slice(grads.grad(self.nodes.decoder_y[head]).data());
        }
        Ok(ParamGrads {
            encoder: grads.take(self.nodes.encoder),
            decoder_x: Tensor::from_raw(vec![h, d, nh], dx),
            decoder_y: Tensor::from_raw(vec![h, d, nh], dy),
            token_embedding: grads.take(self.nodes.token_embedding),
            readout: grads.take(self.nodes.readout),
        })
    }

    fn trace_config(&self) -> ModelConfig {
        self.new_state.config.clone()
    }

    /// Fraction of strictly positive y entries per layer, averaged over tokens.
    pub fn y_nonzero_fraction(&self, layer: usize) -> f64 {
        let y = self.tape.value(self.y_nodes[layer]);
        let nz = y.data().iter().filter(|&&v| v > 0.0).count();
        nz as f64 / y.numel() as f64
    }
}

pub(crate) struct ForwardOptions<'a> {
    pub start_pos: u64,
    pub carry: Option<&'a StreamState>,
    pub dropout_rng: Option<&'a mut SeededRng>,
    pub detach_attention: bool,
    pub record_trace: bool,
}

impl Default for ForwardOptions<'_> {
    fn default() -> Self {
        Self {
            start_pos: 0,
            carry: None,
            dropout_rng: None,
            detach_attention: false,
            record_trace: false,
        }
    }
}

fn check_tokens(tokens: &[usize], vocab: usize) -> Result<(), ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::Usage("empty token sequence".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(ModelError::Token { token: bad, vocab });
    }
    Ok(())
}

/// Strictly-causal decay mask: entry (t, tau) = gamma^(t-tau) for tau < t.
fn causal_mask(t_len: usize, gamma: f32) -> Vec<f32> {
    let mut mask = vec![0.0f32; t_len * t_len];
    let mut powers = Vec::with_capacity(t_len);
    let mut p = 1.0f32;
    for _ in 0..t_len {
        powers.push(p);
        p *= gamma;
    }
    for t in 0..t_len {
        for tau in 0..t {
            mask[t * t_len + tau] = powers[t - tau];
        }
    }
    mask
}

pub(crate) struct ForwardRecord {
    pub tape: GradTape,
    pub logits_node: NodeId,
    pub nodes: ParamNodes,
    pub y_nodes: Vec<NodeId>,
    pub new_state: StreamState,
    pub trace: Option<ActivationTrace>,
}

pub(crate) fn forward_on_tape(
    params: &ModelParams,
    tokens: &[usize],
    mut opts: ForwardOptions,
) -> Result<ForwardRecord, ModelError> {
    let cfg = &params.config;
    cfg.validate()?;
    check_tokens(tokens, cfg.vocab_size)?;
    if let Some(c) = opts.carry {
        if c.config != *cfg {
            return Err(ModelError::Usage("carried state has a different config".into()));
        }
    }
    let (t_len, h, d, nh, layers) = (tokens.len(), cfg.heads, cfg.d, cfg.nh(), cfg.layers);

    let mut tape = GradTape::new();
    let nodes = ParamNodes {
        encoder: tape.leaf(params.encoder.clone()),
        decoder_x: (0..h)
            .map(|k| {
                tape.leaf(Tensor::from_raw(
                    vec![d, nh],
                    params.decoder_x_head(k).to_vec(),
                ))
            })
            .collect(),
        decoder_y: (0..h)
            .map(|k| {
                tape.leaf(Tensor::from_raw(
                    vec![d, nh],
                    params.decoder_y_head(k).to_vec(),
                ))
            })
            .collect(),
        token_embedding: tape.leaf(params.token_embedding.clone()),
        readout: tape.leaf(params.readout.clone()),
    };

    let masks: Vec<Vec<f32>> = (0..h).map(|k| causal_mask(t_len, cfg.head_gamma(k))).collect();
    let carry_nodes: Option<Vec<Vec<NodeId>>> = opts.carry.map(|c| {
        (0..layers)
            .map(|l| {
                (0..h)
                    .map(|k| {
                        tape.constant(Tensor::from_raw(vec![d, nh], c.rho[l][k].clone()))
                    })
                    .collect()
            })
            .collect()
    });
    // gamma^s per row, for reading the carried state at local offset s.
    let carry_row_factors: Vec<Vec<f32>> = (0..h)
        .map(|k| {
            let g = cfg.head_gamma(k);
            let mut f = Vec::with_capacity(t_len);
            let mut p = 1.0f32;
            for _ in 0..t_len {
                f.push(p);
                p *= g;
            }
            f
        })
        .collect();

    let emb = tape.embed(nodes.token_embedding, tokens)?;
    let mut v_ast = tape.layer_norm(emb, cfg.eps)?;

    let mut trace = opts
        .record_trace
        .then(|| ActivationTrace::with_capacity(cfg, t_len));
    if let Some(tr) = &mut trace {
        for _ in 0..t_len {
            tr.push_token();
        }
    }

    let mut y_nodes = Vec::with_capacity(layers);
    // Per layer & head, nodes needed later for the state update.
    let mut q_nodes: Vec<Vec<NodeId>> = Vec::with_capacity(layers);
    let mut v_in_nodes: Vec<NodeId> = Vec::with_capacity(layers);

    for l in 0..layers {
        let v_in = v_ast;
        v_in_nodes.push(v_in);
        let values = if opts.detach_attention { tape.detach(v_in) } else { v_in };

        let mut per_head_y: Vec<NodeId> = Vec::with_capacity(h);
        let mut per_head_q: Vec<NodeId> = Vec::with_capacity(h);
        let mut per_head_x: Vec<NodeId> = Vec::with_capacity(h);
        let mut per_head_a: Vec<NodeId> = Vec::with_capacity(h);
        for k in 0..h {
            let xh_pre = tape.matmul(v_in, nodes.decoder_x[k])?;
            let xh = tape.relu(xh_pre);
            let qh = tape.rope_rows(xh, opts.start_pos, params.rope_freqs_head(k))?;
            let kh = if opts.detach_attention { tape.detach(qh) } else { qh };
            let scores = tape.matmul_nt(qh, kh)?;
            let masked = tape.mask_mul(scores, masks[k].clone())?;
            let mut a = tape.matmul(masked, values)?;
            if let Some(carry) = &carry_nodes {
                let from_state = tape.matmul_nt(qh, carry[l][k])?;
                let scaled = tape.row_scale(from_state, carry_row_factors[k].clone())?;
                a = tape.add(a, scaled)?;
            }
            per_head_x.push(xh);
            per_head_q.push(qh);
            per_head_a.push(a);

            let ln_a = tape.layer_norm(a, cfg.eps)?;
            let gate = tape.matmul(ln_a, nodes.decoder_y[k])?;
            let gate_r = tape.relu(gate);
            let yh = tape.mul(gate_r, xh)?;
            per_head_y.push(yh);
        }
        q_nodes.push(per_head_q.clone());

        let mut y = tape.concat_cols(&per_head_y)?;
        if let Some(tr) = &mut trace {
            for t in 0..t_len {
                let row = |node: NodeId, width: usize| {
                    tape.value(node).data()[t * width..(t + 1) * width].to_vec()
                };
                let mut xrow = Vec::with_capacity(h * nh);
                let mut arow = Vec::with_capacity(h * d);
                for k in 0..h {
                    xrow.extend_from_slice(&row(per_head_x[k], nh));
                    arow.extend_from_slice(&row(per_head_a[k], d));
                }
                tr.x[t].push(xrow);
                tr.y[t].push(row(y, h * nh));
                tr.v_in[t].push(row(v_in, d));
                tr.a_star[t].push(arow);
            }
        }
        y_nodes.push(y);
        if let Some(rng) = opts.dropout_rng.as_deref_mut() {
            if cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                let mask: Vec<f32> = (0..t_len * h * nh)
                    .map(|_| {
                        if rng.random::<f32>() < cfg.dropout {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect();
                y = tape.mask_mul(y, mask)?;
            }
        }

        let enc = tape.matmul(y, nodes.encoder)?;
        let enc_ln = tape.layer_norm(enc, cfg.eps)?;
        let summed = tape.add(v_in, enc_ln)?;
        v_ast = tape.layer_norm(summed, cfg.eps)?;
    }

    let logits_node = tape.matmul(v_ast, nodes.readout)?;

    // Attention state after the chunk, outside the tape (TBPTT cut).
    let mut new_state = match opts.carry {
        Some(c) => c.clone(),
        None => StreamState::new(cfg),
    };
    for l in 0..layers {
        let v_vals = tape.value(v_in_nodes[l]).data();
        for k in 0..h {
            let g = cfg.head_gamma(k);
            let q_vals = tape.value(q_nodes[l][k]).data();
            // K rows scaled by gamma^(T - s): the newest entry carries one
            // decay step, the oldest T of them.
            let mut k_scaled = q_vals.to_vec();
            if g != 1.0 {
                for (s, row) in k_scaled.chunks_mut(nh).enumerate() {
                    let f = g.powi((t_len - s) as i32);
                    for v in row {
                        *v *= f;
                    }
                }
            }
            let mut inc = vec![0.0f32; d * nh];
            crate::tensor::matmul_tn_raw(d, t_len, nh, v_vals, &k_scaled, &mut inc);
            let g_t = if g == 1.0 { 1.0 } else { g.powi(t_len as i32) };
            let rho = &mut new_state.rho[l][k];
            for (r, i) in rho.iter_mut().zip(inc) {
                *r = *r * g_t + i;
            }
        }
    }
    new_state.t += t_len as u64;

    Ok(ForwardRecord {
        tape,
        logits_node,
        nodes,
        y_nodes,
        new_state,
        trace,
    })
}

/// Token-parallel forward from a fresh state: logits for every position plus
/// the full activation trace.
pub fn forward_parallel(
    params: &ModelParams,
    tokens: &[usize],
    mut dropout_rng: Option<&mut SeededRng>,
) -> Result<(Tensor, ActivationTrace), ModelError> {
    let rec = forward_on_tape(
        params,
        tokens,
        ForwardOptions {
            record_trace: true,
            dropout_rng: dropout_rng.as_deref_mut(),
            ..Default::default()
        },
    )?;
    let logits = rec.tape.value(rec.logits_node).clone();
    if !logits.is_finite() {
        return Err(ModelError::Tensor(crate::tensor::TensorError::NonFinite(
            "forward_parallel logits",
        )));
    }
    Ok((logits, rec.trace.expect("trace recorded")))
}

/// Cross-entropy of `tokens[..T]` against `tokens[1..]`, with the recorded
/// graph for a backward pass.
pub fn loss_next_token(
    params: &ModelParams,
    tokens: &[usize],
    mut dropout_rng: Option<&mut SeededRng>,
) -> Result<TrainGraph, ModelError> {
    if tokens.len() < 2 {
        return Err(ModelError::Usage(
            "loss_next_token needs at least two tokens".into(),
        ));
    }
    let inputs = &tokens[..tokens.len() - 1];
    let targets = &tokens[1..];
    check_tokens(targets, params.config.vocab_size)?;
    let mut rec = forward_on_tape(
        params,
        inputs,
        ForwardOptions {
            dropout_rng: dropout_rng.as_deref_mut(),
            ..Default::default()
        },
    )?;
    let loss_node = rec.tape.cross_entropy(rec.logits_node, targets)?;
    let loss = rec
        .tape
        .cross_entropy_value(loss_node)
        .expect("cross-entropy node");
    Ok(TrainGraph {
        tape: rec.tape,
        loss_node,
        logits_node: rec.logits_node,
        nodes: rec.nodes,
        y_nodes: rec.y_nodes,
        loss,
        new_state: rec.new_state,
        trace: rec.trace,
    })
}

/// Training-internal forward: carried state, explicit start position,
/// optional K/V detach.
pub(crate) fn loss_next_token_carried(
    params: &ModelParams,
    inputs: &[usize],
    targets: &[usize],
    carry: &StreamState,
    dropout_rng: Option<&mut SeededRng>,
    detach_attention: bool,
) -> Result<TrainGraph, ModelError> {
    check_tokens(targets, params.config.vocab_size)?;
    let mut rec = forward_on_tape(
        params,
        inputs,
        ForwardOptions {
            start_pos: carry.t,
            carry: Some(carry),
            dropout_rng,
            detach_attention,
            record_trace: false,
        },
    )?;
    let loss_node = rec.tape.cross_entropy(rec.logits_node, targets)?;
    let loss = rec
        .tape
        .cross_entropy_value(loss_node)
        .expect("cross-entropy node");
    Ok(TrainGraph {
        tape: rec.tape,
        loss_node,
        logits_node: rec.logits_node,
        nodes: rec.nodes,
        y_nodes: rec.y_nodes,
        loss,
        new_state: rec.new_state,
        trace: rec.trace,
    })
}
