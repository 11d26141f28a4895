//! AdamW with decoupled weight decay, plus global-norm gradient clipping.

use crate::model::{ModelParams, ParamGrads};
use crate::tensor::Tensor;

/// Global L2 norm over all gradient tensors.
pub fn global_grad_norm(grads: &ParamGrads) -> f64 {
    let mut sq = 0.0f64;
    for (_, t) in grads.tensors() {
        for &v in t.data() {
            sq += (v as f64) * (v as f64);
        }
    }
    sq.sqrt()
}

/// Scale all gradients so the global norm is at most `clip_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ParamGrads, clip_norm: f32) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > clip_norm as f64 {
        let scale = (clip_norm as f64 / norm) as f32;
        for t in [
            &mut grads.encoder,
            &mut grads.decoder_x,
            &mut grads.decoder_y,
            &mut grads.token_embedding,
            &mut grads.readout,
        ] {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Adaptive-moment optimizer with decoupled weight decay.
pub struct AdamW {
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
    /// First/second moments in the order of `ParamGrads::tensors()`.
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &ModelParams, weight_decay: f32) -> Self {
        let sizes = [
            params.encoder.numel(),
            params.decoder_x.numel(),
            params.decoder_y.numel(),
            params.token_embedding.numel(),
            params.readout.numel(),
        ];
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let lr = lr as f32;
        let tensors: [(&mut Tensor, &Tensor); 5] = [
            (&mut params.encoder, &grads.encoder),
            (&mut params.decoder_x, &grads.decoder_x),
            (&mut params.decoder_y, &grads.decoder_y),
            (&mut params.token_embedding, &grads.token_embedding),
            (&mut params.readout, &grads.readout),
        ];
        for (slot, (p, g)) in tensors.into_iter().enumerate() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for ((pi, &gi), (mi, vi)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pi);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, loss_next_token, ModelConfig};

    fn tiny() -> ModelParams {
        let c = ModelConfig {
            n: 16,
            d: 4,
            layers: 1,
            heads: 2,
            vocab_size: 5,
            dropout: 0.0,
            rope_wavelength_range: (2.0, 16.0),
            alibi_gamma: 1.0,
            eps: 1e-5,
        };
        init_params(&c, 1).unwrap()
    }

    #[test]
    fn clipping_caps_global_norm() {
        let params = tiny();
        let g = loss_next_token(&params, &[0, 1, 2, 3, 4], None).unwrap();
        let mut grads = g.param_grads().unwrap();
        let clip = 1e-3f32;
        let pre = clip_global_norm(&mut grads, clip);
        let post = global_grad_norm(&grads);
        assert!(pre > clip as f64, "test wants a clip to actually happen");
        assert!(post <= clip as f64 + 1e-6, "post-clip norm {post}");
    }

    #[test]
    fn vanishing_lr_and_zero_decay_leave_params_bitwise_unchanged() {
        let mut params = tiny();
        let before = params.clone();
        let g = loss_next_token(&params, &[0, 1, 2, 3, 4], None).unwrap();
        let grads = g.param_grads().unwrap();
        let mut opt = AdamW::new(&params, 0.0);
        opt.step(&mut params, &grads, 1e-30);
        assert_eq!(params.encoder.data(), before.encoder.data());
        assert_eq!(params.readout.data(), before.readout.data());
        assert_eq!(params.decoder_x.data(), before.decoder_x.data());
    }

    #[test]
    fn a_real_step_moves_params_downhill() {
        let mut params = tiny();
        let tokens = vec![0usize, 1, 2, 3, 4, 1, 2];
        let before = loss_next_token(&params, &tokens, None).unwrap().loss;
        let mut opt = AdamW::new(&params, 0.0);
        for _ in 0..20 {
            let g = loss_next_token(&params, &tokens, None).unwrap();
            let mut grads = g.param_grads().unwrap();
            clip_global_norm(&mut grads, 1.0);
            opt.step(&mut params, &grads, 3e-3);
        }
        let after = loss_next_token(&params, &tokens, None).unwrap().loss;
        assert!(after < before, "loss {before} -> {after}");
    }
}
