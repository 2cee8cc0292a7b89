//! A small dense-network engine: tensors, layers, normalizations, loss and
//! optimizer, with hand-written backward passes.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod noise;
pub mod norm;
pub mod param;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use dense::{residual_add, Activation, DenseLayer, Mlp};
pub use gradcheck::{check_gradients, GradCheck, GradReport};
pub use loss::{bce_grad, bce_loss};
pub use noise::add_gaussian_noise;
pub use norm::{BatchPowerNorm, PowerNormLayer};
pub use param::{ParamSlot, Parameterized};
pub use tensor::Tensor2;
