//! Minimal CNN framework: three fixed toy architectures with hand-written
//! forward and backward passes, cross-entropy, SGD training and a binary
//! weight format.

mod arch;
mod io;
mod layers;
mod model;
mod train;

pub use arch::{ArchDescriptor, ArchId, LayerSpec, INPUT_SHAPE, NUM_CLASSES};
pub use io::{decode_model, encode_model, load, save, WEIGHTS_MAGIC};
pub use model::{argmax, cross_entropy, softmax, Classifier, Logits, LossGrad, Model};
pub use train::{accuracy, train, EpochStats, Example, TrainConfig, TrainHistory};
