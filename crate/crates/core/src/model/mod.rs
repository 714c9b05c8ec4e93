//! Multi-scale fusion, the assembled classifier, its loss and optimizer,
//! the training loop and checkpoints.

mod checkpoint;
mod config;
mod network;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Branches, ModelConfig, ModelKind};
pub use network::{
    megt_forward, mean_pool_baseline, mffm_block, Architecture, ClassifierHead, Forward, ForwardTrace,
    MegtModel, MffmBlockParams, MffmTrace, Resolution,
};
pub use train::{
    adam_step, cross_entropy_loss, evaluate, fit, fit_with, AdamConfig, AdamState, EpochRecord, History, ADAM_EPS,
};
