//! Synapse-state reconstruction from activation traces.
//!
//! The per-head state matrix is recovered as the decayed, rotated sum of
//! outer products of previous-layer y against current-layer x:
//!
//!   sigma_{t-1}(i,j) = sum_{tau < t} gamma^(t-tau) y_tau(i) (R(-(t-tau) theta) x_tau)(j)
//!
//! matching the recurrence sigma_t = (sigma_{t-1} + y (x) x) U. Entries are
//! signed once rotation is active; `filter_sigma` clips and thresholds for
//! graph-style analysis.

use super::AnalysisError;
use crate::model::{ActivationTrace, ModelParams};
use crate::tensor::rope_angle;

/// Generic accumulation shared by the full-matrix, compressed (value-vector)
/// and single-entry reconstruction paths: adds the new outer product, then
/// applies one decay + rotation step to the whole state.
///
/// `state` is rows x (pairs*2) row-major; the rotation acts on the column
/// pairs with per-pair frequencies, by angle -theta (the key side of U).
pub(crate) fn sigma_step(
    state: &mut [f64],
    rows: usize,
    value: &[f64],
    key: &[f64],
    freqs: &[f32],
    gamma: f64,
) {
    let cols = key.len();
    debug_assert_eq!(state.len(), rows * cols);
    debug_assert_eq!(freqs.len() * 2, cols);
    // sigma <- (sigma + value (x) key) * U
    for r in 0..rows {
        let row = &mut state[r * cols..(r + 1) * cols];
        let v = value[r];
        if v != 0.0 {
            for (s, k) in row.iter_mut().zip(key) {
                *s += v * k;
            }
        }
        for (p, &f) in freqs.iter().enumerate() {
            let (c, s) = rope_angle(1.0, f);
            let (c, s) = (c as f64, -(s as f64)); // R(-theta)
            let (x0, x1) = (row[2 * p], row[2 * p + 1]);
            row[2 * p] = gamma * (x0 * c - x1 * s);
            row[2 * p + 1] = gamma * (x0 * s + x1 * c);
        }
    }
}

/// Reconstruct the per-head state matrix sigma_{t-1} (the state read at
/// position t) for a layer >= 1, as an (n/h)^2 dense row-major matrix.
pub fn reconstruct_sigma(
    trace: &ActivationTrace,
    params: &ModelParams,
    layer: usize,
    head: usize,
    t: usize,
) -> Result<Vec<f64>, AnalysisError> {
    let cfg = &params.config;
    if layer == 0 || layer >= cfg.layers {
        return Err(AnalysisError::Argument(format!(
            "sigma reconstruction needs a layer in 1..{} (layer 0 has no preceding y)",
            cfg.layers
        )));
    }
    if head >= cfg.heads {
        return Err(AnalysisError::Index(format!("head {head} of {}", cfg.heads)));
    }
    if t > trace.len() {
        return Err(AnalysisError::Index(format!(
            "t = {t} beyond trace of {} tokens",
            trace.len()
        )));
    }
    let nh = cfg.nh();
    let freqs = params.rope_freqs_head(head);
    let gamma = cfg.head_gamma(head) as f64;
    let mut sigma = vec![0.0f64; nh * nh];
    for tau in 0..t {
        let y: Vec<f64> = trace
            .y_head(tau, layer - 1, head)
            .iter()
            .map(|&v| v as f64)
            .collect();
        let x: Vec<f64> = trace
            .x_head(tau, layer, head)
            .iter()
            .map(|&v| v as f64)
            .collect();
        sigma_step(&mut sigma, nh, &y, &x, freqs, gamma);
    }
    Ok(sigma)
}

/// Clip negative entries (introduced by rotation) and zero anything below a
/// small positive threshold.
pub fn filter_sigma(sigma: &[f64], threshold: f64) -> Vec<f64> {
    sigma
        .iter()
        .map(|&v| if v >= threshold && v > 0.0 { v } else { 0.0 })
        .collect()
}

/// Per-token value of a single synapse, with token alignment.
#[derive(Debug, Clone)]
pub struct SynapseTrace {
    pub layer: usize,
    pub head: usize,
    pub i: usize,
    pub j: usize,
    /// sigma_t(i,j) after processing each token.
    pub values: Vec<f64>,
    pub tokens: Vec<usize>,
}

/// Track one synapse across a token sequence without materializing the full
/// matrix: only the coordinate pair containing j is carried.
pub fn probe_synapse(
    params: &ModelParams,
    tokens: &[usize],
    synapse: (usize, usize, usize, usize),
) -> Result<SynapseTrace, AnalysisError> {
    let (layer, head, i, j) = synapse;
    let cfg = &params.config;
    let nh = cfg.nh();
    if layer == 0 || layer >= cfg.layers || head >= cfg.heads || i >= nh || j >= nh {
        return Err(AnalysisError::Index(format!(
            "synapse ({layer},{head},{i},{j}) out of range"
        )));
    }
    let (_, trace) = crate::model::forward_streaming_traced(params, tokens)?;
    let pair = j / 2;
    let freq = params.rope_freqs_head(head)[pair];
    let gamma = cfg.head_gamma(head) as f64;

    // State restricted to row i, columns (2*pair, 2*pair+1).
    let mut s0 = 0.0f64;
    let mut s1 = 0.0f64;
    let mut values = Vec::with_capacity(tokens.len());
    for tau in 0..tokens.len() {
        let yv = trace.y_head(tau, layer - 1, head)[i] as f64;
        let x0 = trace.x_head(tau, layer, head)[2 * pair] as f64;
        let x1 = trace.x_head(tau, layer, head)[2 * pair + 1] as f64;
        s0 += yv * x0;
        s1 += yv * x1;
        let (c, s) = rope_angle(1.0, freq);
        let (c, s) = (c as f64, -(s as f64));
        let (n0, n1) = (gamma * (s0 * c - s1 * s), gamma * (s0 * s + s1 * c));
        s0 = n0;
        s1 = n1;
        values.push(if j % 2 == 0 { s0 } else { s1 });
    }
    Ok(SynapseTrace {
        layer,
        head,
        i,
        j,
        values,
        tokens: tokens.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_parallel, init_params, ModelConfig};
    use crate::rng::seeded;
    use rand::Rng;

    fn cfg(gamma: f32, flat_rope: bool) -> ModelConfig {
        ModelConfig {
            n: 32,
            d: 8,
            layers: 3,
            heads: 2,
            vocab_size: 11,
            dropout: 0.0,
            rope_wavelength_range: if flat_rope { (1e30, 1e30) } else { (2.0, 32.0) },
            alibi_gamma: gamma,
            eps: 1e-5,
        }
    }

    fn tokens(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
        let mut rng = seeded(seed);
        (0..len).map(|_| rng.random_range(0..vocab)).collect()
    }

    #[test]
    fn layer_zero_is_rejected() {
        let params = init_params(&cfg(1.0, false), 1).unwrap();
        let (_, trace) = forward_parallel(&params, &[1, 2, 3], None).unwrap();
        assert!(reconstruct_sigma(&trace, &params, 0, 0, 2).is_err());
        assert!(probe_synapse(&params, &[1, 2], (0, 0, 0, 0)).is_err());
    }

    #[test]
    fn single_step_sigma_is_rank_one() {
        let params = init_params(&cfg(1.0, false), 2).unwrap();
        let toks = tokens(6, 11, 3);
        let (_, trace) = forward_parallel(&params, &toks, None).unwrap();
        let sigma = reconstruct_sigma(&trace, &params, 1, 0, 1).unwrap();
        let nh = 16;
        // rank <= 1: every 2x2 minor vanishes.
        for a in 0..nh {
            for b in 0..nh {
                let det = sigma[a * nh] * sigma[b * nh + 1] - sigma[a * nh + 1] * sigma[b * nh];
                assert!(det.abs() < 1e-9, "minor ({a},{b}) = {det}");
            }
        }
        // Zero history -> zero sigma.
        let zero = reconstruct_sigma(&trace, &params, 1, 0, 0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    /// The compressed reading of the same accumulation must reproduce the
    /// model's attention output exactly: using the layer-input values v* in
    /// place of y gives the streaming state rho, and rho . rot(x_t) = a*.
    #[test]
    fn value_vector_accumulation_reproduces_attention_output() {
        for (gamma, flat) in [(1.0f32, true), (0.85, true), (1.0, false), (0.9, false)] {
            let c = cfg(gamma, flat);
            let params = init_params(&c, 7).unwrap();
            let toks = tokens(12, 11, 9);
            let (_, trace) = forward_parallel(&params, &toks, None).unwrap();
            let nh = c.nh();
            for layer in 0..c.layers {
                for head in 0..c.heads {
                    let freqs = params.rope_freqs_head(head);
                    let g = c.head_gamma(head) as f64;
                    let mut rho = vec![0.0f64; c.d * nh];
                    for t in 0..toks.len() {
                        // read: a* = rho . x_t; rho stores keys in the
                        // relative-rotation frame anchored at the present.
                        let q: Vec<f32> = trace.x_head(t, layer, head).to_vec();
                        let astar = trace.a_star_head(t, layer, head);
                        for alpha in 0..c.d {
                            let row = &rho[alpha * nh..(alpha + 1) * nh];
                            let got: f64 =
                                row.iter().zip(&q).map(|(r, &k)| r * k as f64).sum();
                            let want = astar[alpha] as f64;
                            assert!(
                                (got - want).abs() < 1e-4,
                                "gamma {gamma} flat {flat} t {t} l {layer} h {head} a {alpha}: {got} vs {want}"
                            );
                        }
                        let v: Vec<f64> =
                            trace.v_in[t][layer].iter().map(|&x| x as f64).collect();
                        let key: Vec<f64> = q.iter().map(|&x| x as f64).collect();
                        sigma_step(&mut rho, c.d, &v, &key, freqs, g);
                    }
                }
            }
        }
    }

    #[test]
    fn probe_matches_full_reconstruction_entrywise() {
        let c = cfg(0.9, false);
        let params = init_params(&c, 5).unwrap();
        let toks = tokens(10, 11, 13);
        let probes = [(1usize, 0usize, 3usize, 7usize), (2, 1, 0, 1), (1, 1, 15, 14)];
        let (_, trace) = forward_parallel(&params, &toks, None).unwrap();
        for &(l, h, i, j) in &probes {
            let pt = probe_synapse(&params, &toks, (l, h, i, j)).unwrap();
            assert_eq!(pt.values.len(), toks.len());
            for t in 0..toks.len() {
                let full = reconstruct_sigma(&trace, &params, l, h, t + 1).unwrap();
                let nh = c.nh();
                let want = full[i * nh + j];
                assert!(
                    (pt.values[t] - want).abs() < 1e-6,
                    "({l},{h},{i},{j}) at t {t}: {} vs {want}",
                    pt.values[t]
                );
            }
        }
    }

    #[test]
    fn quiet_y_means_flat_trace() {
        // Over a single token y is zero everywhere, so the probe reads 0.
        let params = init_params(&cfg(0.8, true), 6).unwrap();
        let pt = probe_synapse(&params, &[4], (1, 0, 2, 3)).unwrap();
        assert_eq!(pt.values, vec![0.0]);
    }

    #[test]
    fn filter_clips_negatives_and_small_values() {
        let sigma = vec![-0.5, 0.001, 0.2, 0.0];
        let f = filter_sigma(&sigma, 0.01);
        assert_eq!(f, vec![0.0, 0.0, 0.2, 0.0]);
    }
}
