#![allow(dead_code)]

use std::path::Path;

use cgap2_cli::RunConfig;
use cgap2_core::model::ModelConfig;
use cgap2_core::pipeline::DataPlan;
use cgap2_core::synthdata::DatasetConfig;
use cgap2_core::training::OptimConfig;

/// A run small enough to train all three phases in well under a second.
pub fn tiny_config(out: &Path) -> RunConfig {
    let short = |base: OptimConfig| OptimConfig { epochs: 2, lr_drop_epoch: 1, ..base };
    RunConfig {
        out: Some(out.to_path_buf()),
        model: ModelConfig::tiny(),
        data: DatasetConfig { num_classes: 3, sequences_per_class: 5, image_size: 16, ..DatasetConfig::default() },
        plan: DataPlan { pretrain_stride: 40, val_frame_stride: 40, pose_windows_per_sequence: 3, ..DataPlan::default() },
        pretrain: short(OptimConfig::default()),
        pose: short(OptimConfig::default()),
        classifier: short(OptimConfig::classifier()),
        ablation: cgap2_cli::AblationConfig { seeds: 2, ..Default::default() },
        ..RunConfig::default()
    }
    .resolve()
    .unwrap()
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.to_json()).unwrap();
}
