//! Patch autoencoder: tensors, convolution kernels, the network, its
//! optimiser, training loop and weight files.

mod adadelta;
mod conv;
mod direct;
mod gradcheck;
mod io;
mod model;
mod tensor;
mod train;

pub use adadelta::{adadelta_step, adadelta_update, AdadeltaState};
#[doc(hidden)]
pub use direct::DirectKernels;
pub use conv::{conv3d_backward, conv3d_forward, output_dims, upsample2, upsample2_backward, ConvParams};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use io::{load_model, load_model_checked, model_from_bytes, model_to_bytes, save_model};
pub use model::{Dense, LayerKind, LayerSpec, ModelWeights, NetConfig, Tape};
pub use tensor::{mse_grad, mse_loss, Tensor4};
pub use train::{train, train_from, PairSource, PatchPair, TrainConfig, TrainOutcome};
