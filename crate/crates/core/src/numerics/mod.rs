//! Dense tensors, the handful of layers the hash-exit network needs, their
//! gradients, a finite-difference checker and the optimizers.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use checkpoint::{manifest_path, Checkpoint};
pub use gradcheck::check_gradients;
pub use layers::{linear, relu_act, sign_act, softsign_act, tanh_act, Activation, BatchNorm, Linear, Mode, Module};
pub use optim::{sgd_step, LrSchedule, Optimizer, OptimizerKind};
pub use tensor::Tensor;
