//! The fixed operation set of the architecture, as plain functions on tensors.
//!
//! Hot paths (`matmul*`) run on raw slices via `matrixmultiply`, with large
//! products row-split across the rayon pool. Row partitioning keeps results
//! bit-identical for any thread count.

use super::{Tensor, TensorError};
use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;

/// Below this m*k*p volume a product is not worth parallelizing.
const PAR_MATMUL_THRESHOLD: usize = 1 << 21;

/// C[m x p] = A[m x k] @ B[k x p], all row-major slices.
pub(crate) fn matmul_raw(m: usize, k: usize, p: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    let run = |rows: usize, a: &[f32], c: &mut [f32]| unsafe {
        matrixmultiply::sgemm(
            rows,
            k,
            p,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            p as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            p as isize,
            1,
        );
    };
    if m * k * p < PAR_MATMUL_THRESHOLD || m < 2 {
        run(m, a, c);
    } else {
        let nchunks = rayon::current_num_threads().max(1);
        let rows_per = m.div_ceil(nchunks);
        c.par_chunks_mut(rows_per * p)
            .zip(a.par_chunks(rows_per * k))
            .for_each(|(cc, ac)| run(cc.len() / p, ac, cc));
    }
}

/// C[m x p] = A[m x k] @ B^T where B is [p x k] row-major.
pub(crate) fn matmul_nt_raw(m: usize, k: usize, p: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), p * k);
    debug_assert_eq!(c.len(), m * p);
    let run = |rows: usize, a: &[f32], c: &mut [f32]| unsafe {
        matrixmultiply::sgemm(
            rows,
            k,
            p,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            p as isize,
            1,
        );
    };
    if m * k * p < PAR_MATMUL_THRESHOLD || m < 2 {
        run(m, a, c);
    } else {
        let nchunks = rayon::current_num_threads().max(1);
        let rows_per = m.div_ceil(nchunks);
        c.par_chunks_mut(rows_per * p)
            .zip(a.par_chunks(rows_per * k))
            .for_each(|(cc, ac)| run(cc.len() / p, ac, cc));
    }
}

/// C[m x p] = A^T @ B where A is [k x m], B is [k x p], both row-major.
pub(crate) fn matmul_tn_raw(m: usize, k: usize, p: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            p,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            p as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            p as isize,
            1,
        );
    }
}

/// Standard matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch(format!(
            "matmul wants rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.dim(0), a.dim(1));
    let (k2, p) = (b.dim(0), b.dim(1));
    if k != k2 {
        return Err(TensorError::ShapeMismatch(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut c = vec![0.0; m * p];
    matmul_raw(m, k, p, a.data(), b.data(), &mut c);
    Ok(Tensor::from_raw(vec![m, p], c))
}

/// `a @ b^T` for rank-2 tensors (b given untransposed, shape `[p, k]`).
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.dim(1) != b.dim(1) {
        return Err(TensorError::ShapeMismatch(format!(
            "matmul_nt shapes {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, p) = (a.dim(0), a.dim(1), b.dim(0));
    let mut c = vec![0.0; m * p];
    matmul_nt_raw(m, k, p, a.data(), b.data(), &mut c);
    Ok(Tensor::from_raw(vec![m, p], c))
}

pub(crate) fn relu_in_place(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Elementwise max(0, x).
pub fn relu(a: &Tensor) -> Tensor {
    let mut data = a.data().to_vec();
    relu_in_place(&mut data);
    Tensor::from_raw(a.shape().to_vec(), data)
}

/// Parameter-free LayerNorm of one row: (v - mean) / sqrt(var + eps),
/// population variance. Moments accumulate in f64.
pub(crate) fn layer_norm_row(row: &mut [f32], eps: f32) {
    let d = row.len() as f64;
    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d;
    let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps as f64).sqrt();
    for v in row.iter_mut() {
        *v = ((*v as f64 - mean) * inv) as f32;
    }
}

/// Parameter-free LayerNorm along the last axis.
pub fn layer_norm(v: &Tensor, eps: f32) -> Result<Tensor, TensorError> {
    let d = *v.shape().last().unwrap();
    if d < 2 {
        return Err(TensorError::Parameter(format!(
            "layer_norm needs last extent >= 2, got {d}"
        )));
    }
    if eps < 0.0 {
        return Err(TensorError::Parameter("layer_norm eps must be >= 0".into()));
    }
    let mut data = v.data().to_vec();
    for row in data.chunks_mut(d) {
        layer_norm_row(row, eps);
    }
    Ok(Tensor::from_raw(v.shape().to_vec(), data))
}

/// Rotate one coordinate pair in place by `angle`.
#[inline]
fn rotate_pair(a: &mut f32, b: &mut f32, cos: f32, sin: f32) {
    let (x, y) = (*a, *b);
    *a = x * cos - y * sin;
    *b = x * sin + y * cos;
}

/// Angle for one pair at an absolute token position; computed in f64 and
/// reduced mod 2*pi so large positions keep full precision.
#[inline]
pub(crate) fn rope_angle(position: f64, freq: f32) -> (f32, f32) {
    let two_pi = std::f64::consts::TAU;
    let angle = (position * freq as f64) % two_pi;
    ((angle.cos()) as f32, (angle.sin()) as f32)
}

pub(crate) fn rope_rotate_row(row: &mut [f32], position: f64, freqs: &[f32]) {
    for (i, &f) in freqs.iter().enumerate() {
        let (c, s) = rope_angle(position, f);
        let (lo, hi) = (2 * i, 2 * i + 1);
        let (x, y) = (row[lo], row[hi]);
        let mut a = x;
        let mut b = y;
        rotate_pair(&mut a, &mut b, c, s);
        row[lo] = a;
        row[hi] = b;
    }
}

/// Rotate each adjacent coordinate pair `(x[2i], x[2i+1])` of the last axis
/// by angle `position * freqs[i]`.
pub fn rope_rotate(x: &Tensor, position: u64, freqs: &Tensor) -> Result<Tensor, TensorError> {
    let w = *x.shape().last().unwrap();
    if w % 2 != 0 {
        return Err(TensorError::ShapeMismatch(format!(
            "rope_rotate needs an even last extent, got {w}"
        )));
    }
    if freqs.numel() != w / 2 {
        return Err(TensorError::ShapeMismatch(format!(
            "rope_rotate wants {} frequencies, got {}",
            w / 2,
            freqs.numel()
        )));
    }
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(w) {
        rope_rotate_row(row, position as f64, freqs.data());
    }
    Ok(Tensor::from_raw(x.shape().to_vec(), data))
}

/// Rotate row `t` of `x` at absolute position `start_pos + t`.
pub fn rope_rotate_rows(x: &Tensor, start_pos: u64, freqs: &Tensor) -> Result<Tensor, TensorError> {
    let w = *x.shape().last().unwrap();
    if w % 2 != 0 || freqs.numel() != w / 2 {
        return Err(TensorError::ShapeMismatch(format!(
            "rope_rotate_rows on last extent {w} with {} freqs",
            freqs.numel()
        )));
    }
    let mut data = x.data().to_vec();
    for (t, row) in data.chunks_mut(w).enumerate() {
        rope_rotate_row(row, (start_pos + t as u64) as f64, freqs.data());
    }
    Ok(Tensor::from_raw(x.shape().to_vec(), data))
}

/// Per-row multiplicative decay of an attention state; gamma = 1 disables it.
pub fn alibi_decay(state: &Tensor, gamma_per_slot: &Tensor) -> Result<Tensor, TensorError> {
    let rows = state.dim(0);
    if gamma_per_slot.numel() != rows {
        return Err(TensorError::ShapeMismatch(format!(
            "alibi_decay wants {rows} gammas, got {}",
            gamma_per_slot.numel()
        )));
    }
    if gamma_per_slot.data().iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
        return Err(TensorError::Parameter(
            "alibi_decay gammas must lie in (0, 1]".into(),
        ));
    }
    let cols = state.numel() / rows;
    let mut data = state.data().to_vec();
    for (row, &g) in data.chunks_mut(cols).zip(gamma_per_slot.data()) {
        if g != 1.0 {
            for v in row {
                *v *= g;
            }
        }
    }
    Ok(Tensor::from_raw(state.shape().to_vec(), data))
}

/// Log-sum-exp of one row in f64.
pub(crate) fn log_sum_exp(row: &[f32]) -> f64 {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    max + sum.ln()
}

/// Mean over positions of -log softmax(logits)[target]. Accumulates in f64.
pub fn cross_entropy_logits(logits: &Tensor, targets: &[usize]) -> Result<f64, TensorError> {
    if logits.shape().len() != 2 || logits.dim(0) != targets.len() {
        return Err(TensorError::ShapeMismatch(format!(
            "cross_entropy: logits {:?} vs {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    let v = logits.dim(1);
    let mut total = 0.0f64;
    for (row, &t) in logits.data().chunks(v).zip(targets) {
        if t >= v {
            return Err(TensorError::Index(format!(
                "target {t} out of range for vocab {v}"
            )));
        }
        total += log_sum_exp(row) - row[t] as f64;
    }
    Ok(total / targets.len() as f64)
}

/// In-place softmax over a probability row (numerically shifted).
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Temperatures at or below this collapse to exact argmax (lowest index wins ties).
const ARGMAX_TEMPERATURE: f32 = 1e-8;

/// Sample from softmax(logits / temperature) with an explicit rng.
pub fn sample_categorical_rng<R: Rng>(
    logits: &Tensor,
    temperature: f32,
    rng: &mut R,
) -> Result<usize, TensorError> {
    if !(temperature > 0.0) {
        return Err(TensorError::Parameter(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let n = logits.numel();
    if temperature <= ARGMAX_TEMPERATURE {
        let mut best = 0;
        for i in 1..n {
            if logits.data()[i] > logits.data()[best] {
                best = i;
            }
        }
        // Keep the rng stream advancing uniformly across temperatures.
        let _ = rng.random::<f64>();
        return Ok(best);
    }
    let max = logits.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let weights: Vec<f64> = logits
        .data()
        .iter()
        .map(|&l| (((l - max) / temperature) as f64).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(n - 1)
}

/// Sample from softmax(logits / temperature); deterministic for a fixed seed.
pub fn sample_categorical(
    logits: &Tensor,
    temperature: f32,
    rng_seed: u64,
) -> Result<usize, TensorError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    sample_categorical_rng(logits, temperature, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f32]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i2 = t2(2, 2, &[1., 0., 0., 1.]);
        let a = t2(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(matmul(&i2, &a).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_projector() {
        let p = t2(2, 2, &[1., 0., 0., 0.]);
        let v = t2(2, 1, &[5., 7.]);
        assert_eq!(matmul(&p, &v).unwrap().data(), &[5., 0.]);
    }

    #[test]
    fn matmul_row_sums() {
        let a = t2(2, 2, &[1., 2., 3., 4.]);
        let ones = t2(2, 1, &[1., 1.]);
        assert_eq!(matmul(&a, &ones).unwrap().data(), &[3., 7.]);
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let a = t2(2, 3, &[0.; 6]);
        let b = t2(2, 2, &[0.; 4]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_nt_matches_manual_transpose() {
        let a = t2(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = t2(2, 3, &[1., 0., 1., 2., 1., 0.]);
        let c = matmul_nt(&a, &b).unwrap();
        assert_eq!(c.data(), &[4., 4., 10., 13.]);
    }

    #[test]
    fn relu_sign_split() {
        let a = t2(1, 3, &[-1., 0., 2.]);
        assert_eq!(relu(&a).data(), &[0., 0., 2.]);
        let neg = t2(1, 3, &[-1., -0.5, -2.]);
        assert_eq!(relu(&neg).data(), &[0., 0., 0.]);
        let pos = t2(1, 1, &[0.5]);
        assert_eq!(relu(&pos).data(), &[0.5]);
    }

    #[test]
    fn layer_norm_hand_case() {
        let v = t2(1, 3, &[1., 2., 3.]);
        let out = layer_norm(&v, 0.0).unwrap();
        let expect = [-1.2247449, 0.0, 1.2247449];
        for (o, e) in out.data().iter().zip(expect) {
            assert!((o - e).abs() < 1e-3, "{o} vs {e}");
        }
    }

    #[test]
    fn layer_norm_constant_vector_is_zero() {
        let v = t2(1, 3, &[4.2, 4.2, 4.2]);
        let out = layer_norm(&v, 1e-5).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = crate::rng::seeded(7);
        let data: Vec<f32> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = t2(1, 64, &data);
        let out = layer_norm(&v, 1e-5).unwrap();
        let mean: f64 = out.data().iter().map(|&x| x as f64).sum::<f64>() / 64.0;
        let var: f64 = out.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }

    #[test]
    fn layer_norm_needs_two_entries() {
        let v = t2(1, 1, &[3.0]);
        assert!(layer_norm(&v, 1e-5).is_err());
    }

    #[test]
    fn rope_zero_position_is_identity() {
        let x = t2(1, 4, &[1., 2., 3., 4.]);
        let f = Tensor::new(vec![2], vec![0.3, 0.7]).unwrap();
        assert_eq!(rope_rotate(&x, 0, &f).unwrap().data(), x.data());
    }

    #[test]
    fn rope_quarter_turn() {
        let x = t2(1, 2, &[1., 0.]);
        let f = Tensor::new(vec![1], vec![std::f32::consts::FRAC_PI_2]).unwrap();
        let out = rope_rotate(&x, 1, &f).unwrap();
        assert!((out.data()[0] - 0.0).abs() < 1e-6);
        assert!((out.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rope_odd_width_is_error() {
        let x = t2(1, 3, &[1., 0., 2.]);
        let f = Tensor::new(vec![1], vec![0.5]).unwrap();
        assert!(rope_rotate(&x, 1, &f).is_err());
    }

    #[test]
    fn alibi_gamma_one_is_identity() {
        let s = t2(2, 2, &[1., 2., 3., 4.]);
        let g = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert_eq!(alibi_decay(&s, &g).unwrap().data(), s.data());
    }

    #[test]
    fn alibi_composes() {
        let s = t2(1, 2, &[2., 4.]);
        let g = Tensor::new(vec![1], vec![0.5]).unwrap();
        let once = alibi_decay(&s, &g).unwrap();
        let twice = alibi_decay(&once, &g).unwrap();
        for (v, e) in twice.data().iter().zip([0.5f32, 1.0]) {
            assert!((v - e).abs() < 1e-6);
        }
        let z = Tensor::zeros(vec![1, 2]);
        assert_eq!(alibi_decay(&z, &g).unwrap().data(), &[0., 0.]);
    }

    #[test]
    fn alibi_rejects_bad_gamma() {
        let s = t2(1, 2, &[1., 1.]);
        for bad in [0.0f32, -0.5, 1.5] {
            let g = Tensor::new(vec![1], vec![bad]).unwrap();
            assert!(alibi_decay(&s, &g).is_err());
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let logits = t2(1, 4, &[0.7, 0.7, 0.7, 0.7]);
        let loss = cross_entropy_logits(&logits, &[2]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_saturated_is_near_zero() {
        let logits = t2(1, 3, &[100., 0., 0.]);
        let loss = cross_entropy_logits(&logits, &[0]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn cross_entropy_two_class_hand_value() {
        let logits = t2(1, 2, &[0.0, 3.0f32.ln()]);
        let loss = cross_entropy_logits(&logits, &[1]).unwrap();
        assert!((loss - (-(0.75f64).ln())).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let logits = t2(1, 2, &[0.0, 1.0]);
        assert!(cross_entropy_logits(&logits, &[2]).is_err());
    }

    #[test]
    fn sampling_picks_dominant_logit() {
        let mut logits = vec![0.0f32; 8];
        logits[5] = 20.0;
        let t = Tensor::new(vec![8], logits).unwrap();
        let mut hits = 0;
        for seed in 0..2000 {
            if sample_categorical(&t, 1.0, seed).unwrap() == 5 {
                hits += 1;
            }
        }
        // P(other) < 7 * e^-20 so any miss at all would be astonishing.
        assert_eq!(hits, 2000);
    }

    #[test]
    fn sampling_small_temperature_is_argmax_lowest_index() {
        let t = Tensor::new(vec![4], vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        for seed in 0..32 {
            assert_eq!(sample_categorical(&t, 1e-9, seed).unwrap(), 1);
        }
    }

    #[test]
    fn sampling_fixed_seed_is_deterministic() {
        let t = Tensor::new(vec![6], vec![0.1, 0.4, 0.2, 0.9, 0.3, 0.5]).unwrap();
        let a: Vec<usize> = (0..64)
            .map(|i| sample_categorical(&t, 0.8, 1000 + i).unwrap())
            .collect();
        let b: Vec<usize> = (0..64)
            .map(|i| sample_categorical(&t, 0.8, 1000 + i).unwrap())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_rejects_non_positive_temperature() {
        let t = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        assert!(sample_categorical(&t, 0.0, 1).is_err());
        assert!(sample_categorical(&t, -1.0, 1).is_err());
    }
}
