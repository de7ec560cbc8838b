//! Dense tensors and a reverse-mode tape covering the primitives the model
//! needs. 64-bit floats are the default; `f32` is available for benchmarks.

pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use scalar::Scalar;
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::{Segments, Tensor};

use rand::Rng;

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, p: f64) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect()
}

/// Relative error used by gradient checks: `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}
