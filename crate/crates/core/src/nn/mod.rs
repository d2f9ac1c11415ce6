//! Small CPU neural-network core: batched layers, reverse-mode gradients,
//! optimizers and a checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
mod layers;
pub mod loss;
mod network;
pub mod optim;
pub mod regress;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use loss::weighted_mse;
pub use network::{bias_key, weight_key, Gradients, LayerKind, LayerSpec, NetworkBuilder, NetworkParams, Tape};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Real, Tensor};
