//! Dense tensors, reverse-mode differentiation and the SGD/EMA optimizer.

mod graph;
mod optim;
mod tensor;

pub use graph::{silu_scalar, AttentionShape, Gradients, Graph, Var, LAYER_NORM_EPS, PROB_FLOOR};
pub use optim::{ema_update, ramped_decay, sgd_step, OptimState};
pub use tensor::Tensor2;

use rand::Rng;

/// Uniform(−1/√fan_in, 1/√fan_in) initialization.
pub fn init_uniform<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor2 {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor2::new(rows, cols, data).expect("length matches shape")
}
