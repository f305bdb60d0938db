//! The selector model: hashed n-gram features, a one-hidden-layer scorer
//! with exact gradients, and binary checkpointing.

mod checkpoint;
mod featurizer;
mod scorer;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, export_text, load_checkpoint, save_checkpoint,
    CheckpointError, MAGIC, VERSION,
};
pub use featurizer::{build_input, encode_tool, featurize, FeatureCache, ModelConfig, SparseVec};
pub use scorer::{
    forward, grad_check, loss_and_grad, loss_from_logits, loss_only, predict, relative_error,
    softmax, ForwardPass, Gradients, SelectorParams,
};
