//! Synthetic gesture sequences: skeleton motion, camera projection and
//! stick-figure rendering.

pub mod camera;
pub mod dataset;
pub mod motion;
pub mod raster;
pub mod skeleton;

pub use camera::{project_camera, project_point, CameraModel};
pub use dataset::{
    build_dataset, generate_all, generate_sequence, sequence_rng, Dataset, DatasetConfig, Manifest,
    SequenceRecord, Split, SyntheticSequence, VolumeBounds,
};
pub use motion::{class_specs, length_for_onset, Arms, GestureClassSpec, Nuisance};
pub use raster::{rasterize_frame, Background};
pub use skeleton::{Pose3, NUM_JOINTS};
