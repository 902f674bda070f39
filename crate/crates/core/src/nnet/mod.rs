//! Minimal neural-network engine: tensors, layers with exact gradients,
//! Adam, cosine warm restarts, checkpoints, stem adaptation and FP16
//! weight rounding.

mod adam;
mod checkpoint;
mod layers;
mod model;
mod network;
mod quantize;
mod schedule;
mod stem;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use layers::{Aux, Layer, LayerSpec, Mode};
pub use model::{HeadOutputs, ModelCache, OcularNet, Precision, Topology, Widths, AGE_PRIOR};
pub use network::{SeqCache, Sequential};
pub use quantize::{quantize_fp16, round_to_f16};
pub use schedule::{scheduled_lr, ScheduleState};
pub use stem::adapt_stem;
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer definition: {0}")]
    InvalidSpec(String),
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
