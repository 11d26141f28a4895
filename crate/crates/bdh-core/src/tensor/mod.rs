//! Dense row-major f32 tensors and the fixed operation set used by BDH-GPU.

mod ops;
mod tape;

pub use ops::{
    alibi_decay, cross_entropy_logits, layer_norm, matmul, matmul_nt, relu, rope_rotate,
    rope_rotate_rows, sample_categorical, sample_categorical_rng, softmax_in_place,
};
pub(crate) use ops::{
    layer_norm_row, matmul_raw, matmul_tn_raw, relu_in_place, rope_angle, rope_rotate_row,
};
pub use tape::{GradTape, Gradients, NodeId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

/// Dense row-major tensor of f32 scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor, checking that `data` matches the shape product and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ShapeMismatch(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} wants {numel} elements, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by already-checked arithmetic.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: f32) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Extent of axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// Number of rows / row length when viewed as a 2-D matrix
    /// (all leading axes folded into rows).
    pub fn as_matrix_dims(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("non-empty shape");
        (self.data.len() / cols, cols)
    }

    /// Contiguous outer slice `i` of a tensor with rank >= 2 (e.g. one head of
    /// a `[h, d, n/h]` parameter block), viewed as raw data.
    pub fn outer_slice(&self, i: usize) -> &[f32] {
        let block = self.data.len() / self.shape[0];
        &self.data[i * block..(i + 1) * block]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
