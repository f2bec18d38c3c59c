//! Dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] records operations as they execute; [`Graph::backward`]
//! walks the tape once in reverse. Trainable state lives in a
//! [`ParameterSet`] outside the graph so a fresh graph can be built per
//! minibatch.

mod graph;
mod params;
mod tensor;

pub use graph::{softmax_rows, DropoutMode, Graph, Var, LOG_CLAMP};
pub use params::{Parameter, ParameterSet};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("gradient reversal weight must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("backward root must have one element, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient flowing through {op}")]
    NonFiniteGradient { op: &'static str },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteParameterGradient { name: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}
