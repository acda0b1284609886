//! Dataset assembly, pre-emphasized ESR loss, Adam and the early-stopping loop.

mod adam;
mod dataset;
mod loss;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dataset::{
    build_dataset, file_sha256, list_wavs, load_dataset, read_manifest, split_by_source, DatasetOptions,
    ManifestEntry, MANIFEST_FILE,
};
pub use loss::{batch_loss, esr, esr_slices, loss_and_grad, LossConfig, Reduction};
pub use trainer::{train, EpochLog, TrainReport, TrainRunConfig};

use crate::signal::AudioBuffer;

/// One 100-ms style training segment with its control setting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: AudioBuffer,
    pub control: f64,
    pub input_gain_db: f64,
    pub target: AudioBuffer,
}
