//! A small feedforward network engine with hand-derived backpropagation.
//!
//! Layers cache their inputs on the forward pass, so a model instance is
//! single-threaded while training. [`Sequential::infer`] is cache-free and
//! can run on a shared reference.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, sidecar_path};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use layers::{Dense, Dropout, GradientReversal, L2Normalize, Layer, Mode, Param, Parameterized, Relu, Sequential};
pub use loss::{softmax, softmax_xent, XentOutput};
pub use optim::{Optimizer, OptimizerConfig, PlateauConfig, PlateauEvent, PlateauSchedule};
pub use tensor::Tensor2;
