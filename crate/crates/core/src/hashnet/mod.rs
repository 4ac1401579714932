//! The hashing head and its training machinery.
//!
//! Gradients are derived by hand for the two losses used downstream, so there
//! is no autograd graph here: [`HashHead::forward_trace`] keeps the per-layer
//! activations and [`HashHead::backward_batch`] walks them in reverse.

mod head;
mod optim;

pub use head::{Dense, ForwardTrace, GradientSet, HashHead};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};

/// Hidden width used when none is given.
pub const DEFAULT_HIDDEN: usize = 1536;

/// `[input, hidden, hidden, bits]`.
pub fn default_dims(input_dim: usize, hidden: usize, bits: usize) -> [usize; 4] {
    [input_dim, hidden, hidden, bits]
}
