//! Streaming inference: one token at a time against the per-layer attention
//! state. The state holds, per layer and head, the decayed sum of outer
//! products |v*><rotated x|; queries rotate at their absolute position, so
//! only relative rotation enters the scores.

use super::forward::ActivationTrace;
use super::{ModelConfig, ModelError, ModelParams};
use crate::rng::seeded;
use crate::tensor::{
    layer_norm_row, matmul_raw, relu_in_place, rope_rotate_row, sample_categorical_rng, Tensor,
};
use std::sync::Once;

/// The model's entire inference memory: attention state and token position.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub config: ModelConfig,
    /// `rho[layer][head]` is a `[d, n/h]` row-major buffer.
    pub rho: Vec<Vec<Vec<f32>>>,
    /// Current 0-based token position.
    pub t: u64,
}

impl StreamState {
    pub fn new(config: &ModelConfig) -> Self {
        let per_head = vec![0.0f32; config.d * config.nh()];
        Self {
            config: config.clone(),
            rho: (0..config.layers)
                .map(|_| (0..config.heads).map(|_| per_head.clone()).collect())
                .collect(),
            t: 0,
        }
    }

    pub fn rho_tensor(&self, layer: usize, head: usize) -> Tensor {
        Tensor::from_raw(
            vec![self.config.d, self.config.nh()],
            self.rho[layer][head].clone(),
        )
    }
}

/// RoPE angles lose precision once position * freq outgrows the f64 mantissa.
const POSITION_PRECISION_BUDGET: u64 = 1 << 48;

fn warn_position_overflow(t: u64) {
    static ONCE: Once = Once::new();
    if t >= POSITION_PRECISION_BUDGET {
        ONCE.call_once(|| {
            eprintln!(
                "warning: token position {t} exceeds the rotation precision budget; \
                 RoPE angles may degrade"
            );
        });
    }
}

/// One token of inference. Returns the next-token logits and advances state.
pub fn forward_step(
    params: &ModelParams,
    state: &mut StreamState,
    token: usize,
) -> Result<Vec<f32>, ModelError> {
    forward_step_inner(params, state, token, None)
}

fn forward_step_inner(
    params: &ModelParams,
    state: &mut StreamState,
    token: usize,
    mut trace: Option<&mut ActivationTrace>,
) -> Result<Vec<f32>, ModelError> {
    let cfg = &params.config;
    if state.config != *cfg {
        return Err(ModelError::Usage("state built for a different config".into()));
    }
    if token >= cfg.vocab_size {
        return Err(ModelError::Token { token, vocab: cfg.vocab_size });
    }
    warn_position_overflow(state.t);
    let (d, h, nh) = (cfg.d, cfg.heads, cfg.nh());
    let t = state.t;

    // v* = layer_norm(embedding)
    let mut v: Vec<f32> = params.token_embedding.data()[token * d..(token + 1) * d].to_vec();
    layer_norm_row(&mut v, cfg.eps);

    if let Some(tr) = trace.as_deref_mut() {
        tr.push_token();
    }

    for l in 0..cfg.layers {
        let v_in = v.clone();
        let mut y_full = vec![0.0f32; h * nh];
        let mut x_full = trace.is_some().then(|| vec![0.0f32; h * nh]);
        let mut a_full = trace.is_some().then(|| vec![0.0f32; h * d]);

        for k in 0..h {
            // x = relu(v* @ Dx_h), rotated at the absolute position.
            let mut x = vec![0.0f32; nh];
            matmul_raw(1, d, nh, &v_in, params.decoder_x_head(k), &mut x);
            relu_in_place(&mut x);
            let mut q = x.clone();
            rope_rotate_row(&mut q, t as f64, params.rope_freqs_head(k));

            // a* = rho @ q, read before this token's update.
            let rho = &mut state.rho[l][k];
            let mut a = vec![0.0f32; d];
            for (alpha, aa) in a.iter_mut().enumerate() {
                let row = &rho[alpha * nh..(alpha + 1) * nh];
                let mut acc = 0.0f32;
                for (r, qv) in row.iter().zip(&q) {
                    acc += r * qv;
                }
                *aa = acc;
            }

            // rho <- gamma * (rho + v_in (x) q)
            let g = cfg.head_gamma(k);
            for alpha in 0..d {
                let va = v_in[alpha];
                let row = &mut rho[alpha * nh..(alpha + 1) * nh];
                if g == 1.0 {
                    for (r, qv) in row.iter_mut().zip(&q) {
                        *r += va * qv;
                    }
                } else {
                    for (r, qv) in row.iter_mut().zip(&q) {
                        *r = g * (*r + va * qv);
                    }
                }
            }

            if let Some(af) = &mut a_full {
                af[k * d..(k + 1) * d].copy_from_slice(&a);
            }
            // y = relu(layer_norm(a*) @ Dy_h) * x
            layer_norm_row(&mut a, cfg.eps);
            let mut gate = vec![0.0f32; nh];
            matmul_raw(1, d, nh, &a, params.decoder_y_head(k), &mut gate);
            for ((g_, x_), y_) in gate.iter().zip(&x).zip(&mut y_full[k * nh..(k + 1) * nh]) {
                *y_ = g_.max(0.0) * x_;
            }
            if let Some(xf) = &mut x_full {
                xf[k * nh..(k + 1) * nh].copy_from_slice(&x);
            }
        }

        // v* = layer_norm(v_in + layer_norm(y @ E))
        let mut u = vec![0.0f32; d];
        matmul_raw(1, h * nh, d, &y_full, params.encoder.data(), &mut u);
        layer_norm_row(&mut u, cfg.eps);
        for (vv, (vi, uu)) in v.iter_mut().zip(v_in.iter().zip(&u)) {
            *vv = vi + uu;
        }
        layer_norm_row(&mut v, cfg.eps);

        if let Some(tr) = trace.as_deref_mut() {
            let ti = tr.len() - 1;
            tr.x[ti].push(x_full.take().expect("trace x"));
            tr.y[ti].push(y_full.clone());
            tr.v_in[ti].push(v_in);
            tr.a_star[ti].push(a_full.take().expect("trace a"));
        }
    }

    let mut logits = vec![0.0f32; cfg.vocab_size];
    matmul_raw(1, d, cfg.vocab_size, &v, params.readout.data(), &mut logits);
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(ModelError::Tensor(crate::tensor::TensorError::NonFinite(
            "forward_step logits",
        )));
    }
    state.t += 1;
    Ok(logits)
}

/// Run a whole sequence through the streaming path, recording the trace.
/// Memory-light compared to the parallel path for long sequences.
pub fn forward_streaming_traced(
    params: &ModelParams,
    tokens: &[usize],
) -> Result<(Vec<Vec<f32>>, ActivationTrace), ModelError> {
    let mut state = StreamState::new(&params.config);
    let mut trace = ActivationTrace {
        config: params.config.clone(),
        x: vec![],
        y: vec![],
        v_in: vec![],
        a_star: vec![],
    };
    let mut logits = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        logits.push(forward_step_inner(params, &mut state, tok, Some(&mut trace))?);
    }
    Ok((logits, trace))
}

/// Feed a prompt, then sample autoregressively. Deterministic per seed.
pub fn generate(
    params: &ModelParams,
    prompt: &[usize],
    n_tokens: usize,
    temperature: f32,
    seed: u64,
) -> Result<Vec<usize>, ModelError> {
    if prompt.is_empty() {
        return Err(ModelError::Usage("generate needs a non-empty prompt".into()));
    }
    let mut state = StreamState::new(&params.config);
    let mut logits = vec![0.0f32; params.config.vocab_size];
    for &tok in prompt {
        logits = forward_step(params, &mut state, tok)?;
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let lt = Tensor::from_raw(vec![params.config.vocab_size], logits.clone());
        let next = sample_categorical_rng(&lt, temperature, &mut rng)?;
        out.push(next);
        logits = forward_step(params, &mut state, next)?;
    }
    Ok(out)
}
