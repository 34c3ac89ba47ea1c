//! A small reverse-mode autodiff engine over dense `f64` tensors, with the
//! layers the denoising networks need: (transposed) 2-D convolution with
//! per-axis dilation and stride, batch normalization, a fused bidirectional
//! LSTM, and the signal-specific ops that connect detection to STFT.

mod graph;
mod kernels;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use graph::{Conv2dGeom, Gradients, Graph, Var, BCE_EPS};
pub use lstm::LstmParams;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
