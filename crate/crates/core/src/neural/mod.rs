//! Compact vision transformer with its own reverse-mode differentiation.

mod adam;
mod io;
mod model;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use io::{load_params, load_params_with_config, save_params, PARAMS_MAGIC};
pub use model::{
    argmax, batch_loss_and_grad, forward, forward_train, input_values, loss_and_grad, patchify,
    predict, ModelConfig, ParameterSet, Variant,
};
pub use tape::{cross_entropy_value, softmax, NodeId, Tape};
pub use tensor::{Real, Tensor};
