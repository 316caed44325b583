//! Volumetric reconstruction network: a fully connected decoder followed by
//! 3D transposed convolutions, trained with hand-written backpropagation and
//! AdamW.

pub mod adamw;
pub mod arch;
pub mod checkpoint;
pub mod float;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

use eit3d_core::metrics::{ReconstructError, Reconstructor};
use eit3d_core::voxel::VoxelVolume;

pub use adamw::{adamw_step, AdamState, AdamWConfig};
pub use arch::{Architecture, Preset};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use float::Float;
pub use model::{mse_loss, Grads, TnNet};
pub use tensor::Tensor;
pub use train::{train_model, EpochRecord, TrainConfig, TrainData, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("{what}: shape mismatch, expected {expected:?}, got {actual:?}")]
    Shape { what: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("architecture: {0}")]
    Architecture(String),
    #[error("non-finite values after layer {layer}")]
    NonFinite { layer: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, history: Vec<EpochRecord> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Eval-mode inference wrapper.
#[derive(Debug, Clone)]
pub struct TnNetReconstructor {
    pub net: TnNet<f32>,
}

impl TnNetReconstructor {
    pub fn new(net: TnNet<f32>) -> Self {
        Self { net }
    }

    pub fn reconstruct_frame(&self, frame: &[f32]) -> Result<VoxelVolume, NetError> {
        let out = self.net.forward(frame, 1)?;
        Ok(VoxelVolume::from_vec(out).expect("network output matches the voxel grid"))
    }
}

impl Reconstructor for TnNetReconstructor {
    fn label(&self) -> String {
        "tn-net".into()
    }

    fn reconstruct(&self, frame: &[f32]) -> Result<VoxelVolume, ReconstructError> {
        Ok(self.reconstruct_frame(frame)?)
    }
}
