pub mod clip;
pub mod dataset;
pub mod synth;

pub use clip::{clip_from_json, clip_to_json, load_clip, replay_pad, to_bone, write_clip, SkeletonClip};
pub use dataset::{
    batch_iter, prepare_input, Batch, BatchOptions, ClipRecord, Dataset, DatasetManifest, Split,
};
pub use synth::{nominal_trajectory, synth_dataset, SynthConfig, CLASS_NAMES};
