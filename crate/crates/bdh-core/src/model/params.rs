//! Parameter tensors, initialization, counting, concatenation.

use super::{ModelConfig, ModelError};
use crate::rng::seeded;
use crate::tensor::Tensor;
use rand_distr::{Distribution, Normal};

/// The trainable parameter set. One copy serves every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `[n, d]`; paper-orientation encoder is its transpose.
    pub encoder: Tensor,
    /// `[heads, d, n/h]`.
    pub decoder_x: Tensor,
    /// `[heads, d, n/h]`.
    pub decoder_y: Tensor,
    /// `[vocab, d]`.
    pub token_embedding: Tensor,
    /// `[d, vocab]`.
    pub readout: Tensor,
    /// `[heads, n/(2h)]` angular frequencies; non-trainable.
    pub rope_freqs: Tensor,
}

/// Total trainable parameter count: 3nd scalable + 2*vocab*d token I/O.
pub fn param_count(config: &ModelConfig) -> u64 {
    3 * (config.n as u64) * (config.d as u64)
        + 2 * (config.vocab_size as u64) * (config.d as u64)
}

fn geometric_freqs(config: &ModelConfig) -> Tensor {
    let pairs = config.pairs_per_head();
    let (lo, hi) = config.rope_wavelength_range;
    let mut data = Vec::with_capacity(config.heads * pairs);
    for _head in 0..config.heads {
        for i in 0..pairs {
            let frac = if pairs > 1 { i as f32 / (pairs - 1) as f32 } else { 0.0 };
            let wavelength = lo * (hi / lo).powf(frac);
            data.push(std::f32::consts::TAU / wavelength);
        }
    }
    Tensor::from_raw(vec![config.heads, pairs], data)
}

/// Sample all weight matrices i.i.d. normal(0, 0.02^2); deterministic per seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0f32, 0.02).expect("valid std");
    let mut draw = |shape: Vec<usize>| {
        let numel = shape.iter().product();
        let data: Vec<f32> = (0..numel).map(|_| normal.sample(&mut rng)).collect();
        Tensor::from_raw(shape, data)
    };
    let (n, d, h, v) = (config.n, config.d, config.heads, config.vocab_size);
    Ok(ModelParams {
        encoder: draw(vec![n, d]),
        decoder_x: draw(vec![h, d, n / h]),
        decoder_y: draw(vec![h, d, n / h]),
        token_embedding: draw(vec![v, d]),
        readout: draw(vec![d, v]),
        rope_freqs: geometric_freqs(config),
        config: config.clone(),
    })
}

/// Concatenate two models along the neuron dimension; token I/O is averaged.
pub fn concat_models(a: &ModelParams, b: &ModelParams) -> Result<ModelParams, ModelError> {
    let (ca, cb) = (&a.config, &b.config);
    let mismatch = |what: &str| Err(ModelError::Merge(format!("{what} differs between models")));
    if ca.d != cb.d {
        return mismatch("d");
    }
    if ca.heads != cb.heads {
        return mismatch("head count");
    }
    if ca.layers != cb.layers {
        return mismatch("layer count");
    }
    if ca.vocab_size != cb.vocab_size {
        return mismatch("vocab size");
    }
    if ca.eps != cb.eps {
        return mismatch("eps");
    }
    if ca.alibi_gamma != cb.alibi_gamma {
        return mismatch("alibi gamma");
    }
    let (h, d) = (ca.heads, ca.d);
    let (nha, nhb) = (ca.nh(), cb.nh());

    let config = ModelConfig {
        n: ca.n + cb.n,
        rope_wavelength_range: (
            ca.rope_wavelength_range.0.min(cb.rope_wavelength_range.0),
            ca.rope_wavelength_range.1.max(cb.rope_wavelength_range.1),
        ),
        ..ca.clone()
    };
    config.validate()?;

    // encoder: stack rows, interleaved per head so head blocks stay aligned.
    let mut enc = Vec::with_capacity((ca.n + cb.n) * d);
    for head in 0..h {
        enc.extend_from_slice(&a.encoder.data()[head * nha * d..(head + 1) * nha * d]);
        enc.extend_from_slice(&b.encoder.data()[head * nhb * d..(head + 1) * nhb * d]);
    }

    // decoders: per head, concatenate the n/h axis (innermost).
    let cat_decoder = |da: &Tensor, db: &Tensor| {
        let mut out = Vec::with_capacity(h * d * (nha + nhb));
        for head in 0..h {
            let sa = da.outer_slice(head);
            let sb = db.outer_slice(head);
            for row in 0..d {
                out.extend_from_slice(&sa[row * nha..(row + 1) * nha]);
                out.extend_from_slice(&sb[row * nhb..(row + 1) * nhb]);
            }
        }
        Tensor::from_raw(vec![h, d, nha + nhb], out)
    };

    // rope: per head, concatenate the pair axis.
    let (pa, pb) = (ca.pairs_per_head(), cb.pairs_per_head());
    let mut rope = Vec::with_capacity(h * (pa + pb));
    for head in 0..h {
        rope.extend_from_slice(&a.rope_freqs.data()[head * pa..(head + 1) * pa]);
        rope.extend_from_slice(&b.rope_freqs.data()[head * pb..(head + 1) * pb]);
    }

    let avg = |ta: &Tensor, tb: &Tensor| {
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        Tensor::from_raw(ta.shape().to_vec(), data)
    };

    Ok(ModelParams {
        encoder: Tensor::from_raw(vec![ca.n + cb.n, d], enc),
        decoder_x: cat_decoder(&a.decoder_x, &b.decoder_x),
        decoder_y: cat_decoder(&a.decoder_y, &b.decoder_y),
        token_embedding: avg(&a.token_embedding, &b.token_embedding),
        readout: avg(&a.readout, &b.readout),
        rope_freqs: Tensor::from_raw(vec![h, pa + pb], rope),
        config,
    })
}

impl ModelParams {
    /// Per-head decoder slice `[d, n/h]` as raw data.
    pub fn decoder_x_head(&self, head: usize) -> &[f32] {
        self.decoder_x.outer_slice(head)
    }

    pub fn decoder_y_head(&self, head: usize) -> &[f32] {
        self.decoder_y.outer_slice(head)
    }

    pub fn rope_freqs_head(&self, head: usize) -> &[f32] {
        self.rope_freqs.outer_slice(head)
    }
}
