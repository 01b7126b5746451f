//! Dataset assembly, the training objective and the optimization loop.

mod dataset;
mod objective;
mod train;

pub use dataset::{
    build_dataset, prepare_segment, samples_from_container, samples_to_container, split_segments, DatasetSplit,
    FileIssue, PreparedSegment, SegmentSource, TrainingSample, KIND_SAMPLES,
};
pub use objective::{batch_loss, batch_loss_and_grad, total_loss, Batch, LossBreakdown};
pub use train::{train, train_with, EpochRecord, TrainOutcome, VALIDATION_SEED};
