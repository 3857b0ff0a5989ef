//! Dual transformer over stay events: per-event feature attention followed
//! by sequence-level event attention, with masked-event decoding.

mod attention;
mod block;
mod checkpoint;
mod config;
mod encode;
pub mod linalg;
mod model;
mod params;
mod train;

pub use attention::{attention, AttentionOutput, Matrix};
pub use block::{Block, BlockCache};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, Precision,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Feature, FeatureKind, ModelConfig, N_DOW, N_NUMERIC, N_TOKENS};
pub use encode::{raw_numeric, EncodedEvent, EncodedSequence, NormStats};
pub use model::{CategoricalOutput, DecoderOutput, Dropout, DualTransformer, OutputGrad};
pub use params::{Init, Linear, ParamGroup, Params, Slot};
pub use train::{masked_event_loss, random_mask, sequence_loss_grad, train, Adam, TrainConfig, TrainReport};
