//! Multimodal federated learning at desk scale: synthetic or CSV data split
//! over UAVs, per-modality encoders trained locally, and a server that
//! aggregates, fuses with attention and trains the classifier head.

mod data;
mod model;
mod train;

pub use data::{
    apportion, dirichlet, load_csv_dataset, synth_multimodal_dataset, FederatedData, ModalityDataset, MultiSamples, Samples,
    TabularDataset,
};
pub use model::{
    decoder_forward, decoder_loss_grad, encoder_forward, encoder_loss_grad, fused_input, server_loss_grad, softmax, AttentionState,
    Dense, LocalContext, ModelParams,
};
pub use train::{
    aggregate_embeddings, aggregate_models, attention_scores, broadcast, concat_embeddings, evaluate_accuracy,
    estimate_local_constants, extract_high_level_features, fuse_global, global_loss, local_sgd_round, run_federated_training, test_inputs, train_on,
    GradientSnapshot, LocalUpdate, RoundRecord, TrainMode, TrainingRun,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FmlError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no participating UAV or data for a modality")]
    EmptyModality,
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("cannot read dataset: {0}")]
    Io(String),
}
