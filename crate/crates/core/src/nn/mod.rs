//! Minimal neural-network foundation: a dense 2-D `f64` tensor, a
//! reverse-mode autodiff tape, weight initialization, and AdamW.
//!
//! The models in this crate are small enough that a straightforward
//! row-major matrix type with explicit tape ops is both fast enough and
//! easy to verify against finite differences.

mod adamw;
mod tape;
mod tensor;

pub use adamw::AdamW;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Xavier-uniform initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::from_vec(rows, cols, data)
}
