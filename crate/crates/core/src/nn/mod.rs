//! Dense network building blocks with hand-written backward passes.

mod activation;
mod dense;
mod loss;
mod lstm;

pub use activation::{prelu, sigmoid, softmax, softmax_backward, softmax_slice, PreluSite};
pub use dense::DenseLayer;
pub use loss::{gaussian_kl_to_standard, l2_loss, l2_loss_grad};
pub(crate) use loss::{kl_slice, l2_slice};
pub use lstm::{LstmCell, LstmGrads, LstmState, LstmTrace};
