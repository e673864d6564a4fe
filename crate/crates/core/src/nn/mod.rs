//! Layers with hand-written forward and backward passes, the loss, and Adam.

mod adam;
mod batchnorm;
mod dense;
mod dropout;
pub mod gradcheck;
mod gru;
mod loss;

pub use adam::{adam_update, Adam, AdamConfig, Moments};
pub use batchnorm::{
    BatchNormCache, BatchNormGrads, BatchNormLayer, BatchStats, DEFAULT_EPS as BATCHNORM_EPS,
    DEFAULT_MOMENTUM as BATCHNORM_MOMENTUM,
};
pub use dense::{DenseCache, DenseGrads, DenseLayer};
pub use dropout::{dropout_forward, DropoutMask, DropoutSpec};
pub use gradcheck::{gradient_check, Differentiable, GradCheckOptions, GradCheckReport};
pub use gru::{GruCache, GruGrads, GruLayer, GRU_PARAM_NAMES};
pub use loss::softmax_xent;

use crate::numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("empty sequence: GRU needs at least one timestep")]
    EmptySequence,
    #[error("batch of {0} rows is too small for batch normalization in training mode (need >= 2)")]
    BatchTooSmall(usize),
    #[error("label {label} at row {row} is outside 0..{classes}")]
    Label {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("backward called with a cache that does not belong to this layer: {0}")]
    StaleCache(String),
    #[error("invalid dropout rate {0}: must be in [0, 1)")]
    DropoutRate(f64),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Cheap fingerprint of a set of parameter tensors, used to tie caches to
/// the exact parameter values that produced them.
pub(crate) fn fingerprint<'a>(tensors: impl IntoIterator<Item = &'a crate::numcore::Tensor>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        for &d in t.shape() {
            h = (h ^ d as u64).wrapping_mul(0x0100_0000_01b3);
        }
        for x in t.data() {
            h = (h ^ x.to_bits()).wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
