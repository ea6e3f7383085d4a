//! Convolutional impact detector with hand-written backpropagation.
//!
//! Two 1-D convolution blocks run over the six kinematic channels; their
//! outputs are stacked into one image, convolved in 2-D, globally averaged,
//! normalised and classified by a softmax layer. Training runs in `f32`;
//! every routine is generic over [`Float`] so gradients can be verified in
//! `f64`.

pub mod arch;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod train;

pub use arch::{Architecture, Shapes};
pub use forward::{backward, forward, forward_tracked, update_running_stats, Mode, Trace};
pub use gradcheck::{gradient_check, relative_error, GradCheck};
pub use loss::{softmax, weighted_ce_loss};
pub use model::{Model, ModelFile, ModelParams};
pub use optim::{Adam, AdamConfig};
pub use scalar::Float;
pub use train::{evaluate, fit, labels_from_probs, predict, predict_batch, train, EpochRecord, History, Samples, TrainConfig, TrainPhase};
