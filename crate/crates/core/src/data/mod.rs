//! Sequence files, dataset manifests and splits, and the synthetic
//! multi-view action generator.

mod io;
mod manifest;
mod split;
mod synth;

pub use io::{
    load_sequence, save_sequence, sequence_from_str, sequence_to_string, SEQUENCE_FORMAT_VERSION,
};
pub use manifest::{
    manifest_root, DatasetManifest, ManifestEntry, SplitRole, MANIFEST_FORMAT_VERSION,
};
pub use split::{
    dataset_stats, make_splits, split_indices, split_sequences, SplitIndices, SplitProtocol,
};
pub use synth::{
    motion_frames, pose_bundle, render, stick_figure_bones, synth_generate, view_tag, Camera,
    MotionProgram, MotionStyle, SynthDataset, SynthSpec, STICK_FIGURE_JOINTS,
};
