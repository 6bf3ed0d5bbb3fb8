//! Shared fixtures for the criterion benches.

use cvit::nn::{self, Layer, Mode};
use cvit::{RngState, Tensor, Var};

/// Standard-normal input of `shape`, seeded for repeatable timings.
pub fn input(shape: &[usize], seed: u64) -> Var<f32> {
    Var::constant(RngState::new(seed).generator().normal_tensor::<f32>(shape, 1.0))
}

/// Put `layer` in eval mode and run it once without recording gradients.
pub fn infer<L: Layer<f32> + ?Sized>(layer: &L, x: &Var<f32>) -> Tensor<f32> {
    cvit::no_grad(|| layer.forward(x)).expect("forward").to_tensor()
}

pub fn eval<L: Layer<f32> + ?Sized>(layer: &L) {
    nn::set_mode(layer, Mode::Eval);
}
