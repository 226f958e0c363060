//! Per-element operation costs used by FLOP accounting.
//!
//! Convolutions and linear layers cost `2 * MACs` plus one add per output
//! element when a bias is present. The constants below cover the rest.

/// Batch norm at inference: one multiply and one add per element.
pub const BATCH_NORM_PER_ELEMENT: u64 = 2;
/// ReLU and leaky ReLU.
pub const ACTIVATION_PER_ELEMENT: u64 = 1;
/// exp, add, divide, negate.
pub const SIGMOID_PER_ELEMENT: u64 = 4;
/// Residual additions.
pub const ADD_PER_ELEMENT: u64 = 1;
/// Channel gating multiply.
pub const SCALE_PER_ELEMENT: u64 = 1;
/// Bilinear resampling: three lerps of two operations each.
pub const BILINEAR_PER_OUTPUT: u64 = 6;

/// Conv or linear cost.
pub fn affine(macs: u64, outputs: u64, has_bias: bool) -> u64 {
    2 * macs + if has_bias { outputs } else { 0 }
}

/// Max pooling: `kernel^2 - 1` comparisons per output.
pub fn max_pool(outputs: u64, kernel: usize) -> u64 {
    outputs * (kernel as u64 * kernel as u64 - 1)
}
