//! Dense tensors, a reverse-mode tape, and the Adam optimizer.

mod graph;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, Bound, ParamId, ParamStore};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Glorot-uniform initialised `fan_in x fan_out` matrix.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, limit)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Tensor {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}
