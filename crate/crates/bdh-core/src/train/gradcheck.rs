//! Directional finite-difference verification of the end-to-end gradient.
//!
//! Per-entry central differences on an f32-valued loss sit below the
//! rounding noise floor for most entries, so the check compares analytic
//! directional derivatives <g, u> with central differences along random unit
//! directions (plus the gradient direction itself), one parameter tensor at
//! a time.

use crate::model::{loss_next_token, ModelError, ModelParams};
use crate::rng::seeded;
use rand::Rng;

const TENSOR_NAMES: [&str; 5] = [
    "encoder",
    "decoder_x",
    "decoder_y",
    "token_embedding",
    "readout",
];

fn tensor_mut<'a>(p: &'a mut ModelParams, name: &str) -> &'a mut crate::tensor::Tensor {
    match name {
        "encoder" => &mut p.encoder,
        "decoder_x" => &mut p.decoder_x,
        "decoder_y" => &mut p.decoder_y,
        "token_embedding" => &mut p.token_embedding,
        "readout" => &mut p.readout,
        _ => unreachable!(),
    }
}

/// Returns the worst relative error between analytic and finite-difference
/// directional derivatives, over `n_dirs` random directions plus the
/// gradient direction for each parameter tensor.
pub fn gradient_check(
    params: &ModelParams,
    tokens: &[usize],
    n_dirs: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    let graph = loss_next_token(params, tokens, None)?;
    let grads = graph.param_grads()?;
    let mut rng = seeded(seed);
    let h = 1e-3f32;
    let mut worst = 0.0f64;

    for name in TENSOR_NAMES {
        let g = grads
            .tensors()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| (*t).clone())
            .expect("named tensor");
        let count = g.numel();
        let gnorm = (g.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sqrt();

        let mut directions: Vec<Vec<f32>> = Vec::with_capacity(n_dirs + 1);
        if gnorm > 0.0 {
            directions.push(g.data().iter().map(|&v| (v as f64 / gnorm) as f32).collect());
        }
        for _ in 0..n_dirs {
            let raw: Vec<f32> = (0..count).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let norm = (raw.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sqrt() as f32;
            directions.push(raw.iter().map(|v| v / norm).collect());
        }

        for u in directions {
            let analytic: f64 = g
                .data()
                .iter()
                .zip(&u)
                .map(|(&gi, &ui)| gi as f64 * ui as f64)
                .sum();
            let mut lo = params.clone();
            let mut hi = params.clone();
            for (v, &ui) in tensor_mut(&mut lo, name).data_mut().iter_mut().zip(&u) {
                *v -= h * ui;
            }
            for (v, &ui) in tensor_mut(&mut hi, name).data_mut().iter_mut().zip(&u) {
                *v += h * ui;
            }
            let f_lo = loss_next_token(&lo, tokens, None)?.loss;
            let f_hi = loss_next_token(&hi, tokens, None)?.loss;
            let fd = (f_hi - f_lo) / (2.0 * h as f64);
            let denom = fd.abs().max(analytic.abs()).max(1e-4);
            worst = worst.max((fd - analytic).abs() / denom);
        }
    }
    Ok(worst)
}
