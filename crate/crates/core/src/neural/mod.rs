//! Minimal dense-tensor layer library with hand-written reverse-mode
//! gradients.
//!
//! Everything runs in `f64`. Layers work on batched tensors whose first axis
//! is the batch; a [`Sequential`] chains them and owns shape inference.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

mod gradcheck;
mod layers;
pub mod linalg;
mod loss;
mod lstm;
mod optim;
mod sequential;

pub use gradcheck::{gradient_check, jitter, GradCheck, GradCheckReport};
pub use layers::{BatchNorm, Conv2d, Dense, Dropout, Relu, ToSequence};
pub use loss::{softmax, softmax_cross_entropy};
pub use lstm::{Lstm, LstmCell, LstmState};
pub use optim::{Adam, AdamConfig};
pub use sequential::{Layer, Sequential};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("layer {layer} ({kind}): kernel {kernel:?} larger than input {input:?}")]
    KernelTooLarge {
        layer: usize,
        kind: &'static str,
        kernel: (usize, usize),
        input: Vec<usize>,
    },
    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward called before forward")]
    NoForwardCache,
}

pub type Result<T> = core::result::Result<T, NnError>;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() || shape.contains(&0) {
            return Err(NnError::ShapeMismatch {
                context: "Tensor::from_vec".into(),
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(NnError::ShapeMismatch {
                context: "Tensor::reshape".into(),
                expected: shape.to_vec(),
                got: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Forward-pass mode. Batch norm and dropout behave differently per mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture vocabulary. `Softmax` is only valid as the final entry and is
/// fused into the loss during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    /// `[C, H, W]` to `[H, C*W]`: the first spatial axis becomes time.
    ToSequence,
    Lstm {
        hidden: usize,
        return_sequences: bool,
    },
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn conv2d(filters: usize, kernel_h: usize, kernel_w: usize) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel_h,
            kernel_w,
            stride: 1,
            padding: 0,
        }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::ToSequence => "to_sequence",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
