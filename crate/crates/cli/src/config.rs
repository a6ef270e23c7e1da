//! Run configuration: one JSON document covering every stage, with
//! command-line overrides.

use std::path::{Path, PathBuf};

use cgap2_core::model::ModelConfig;
use cgap2_core::pipeline::DataPlan;
use cgap2_core::synthdata::DatasetConfig;
use cgap2_core::training::OptimConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Each cell is trained once per seed, starting at the run seed.
    pub seeds: usize,
    /// Frames per second used for the time-advantage column.
    pub fps: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: 3, fps: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into the model, dataset and every optimizer.
    pub seed: u64,
    /// Dataset directory written by `generate`. Without one the dataset is
    /// generated in memory from `data`.
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub data: DatasetConfig,
    pub plan: DataPlan,
    pub pretrain: OptimConfig,
    pub pose: OptimConfig,
    pub classifier: OptimConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dataset: None,
            out: None,
            model: ModelConfig::desk(),
            data: DatasetConfig::default(),
            plan: DataPlan::default(),
            pretrain: OptimConfig::default(),
            pose: OptimConfig::default(),
            classifier: OptimConfig::classifier(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Applies `key.path=value` overrides. Values are parsed as JSON and
    /// fall back to plain strings; keys must already exist.
    pub fn with_overrides(&self, overrides: &[String]) -> CliResult<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
            }
            *slot = value;
        }
        serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid override: {e}")))
    }

    /// Propagates the master seed and checks that the parts agree.
    pub fn resolve(mut self) -> CliResult<Self> {
        self.model.seed = self.seed;
        self.data.seed = self.seed;
        for opt in [&mut self.pretrain, &mut self.pose, &mut self.classifier] {
            opt.seed = self.seed;
        }
        if self.dataset.is_none() {
            if self.data.image_size != self.model.image_size {
                return Err(CliError::Usage(format!(
                    "data.image_size {} differs from model.image_size {}",
                    self.data.image_size, self.model.image_size
                )));
            }
            if self.data.num_classes != self.model.num_classes {
                return Err(CliError::Usage(format!(
                    "data.num_classes {} differs from model.num_classes {}",
                    self.data.num_classes, self.model.num_classes
                )));
            }
        }
        self.model.validate().map_err(CliError::from)?;
        self.model.sampler().validate().map_err(CliError::from)?;
        self.plan.validate().map_err(CliError::from)?;
        for opt in [&self.pretrain, &self.pose, &self.classifier] {
            opt.validate().map_err(CliError::from)?;
        }
        if self.ablation.seeds == 0 || self.ablation.fps <= 0.0 {
            return Err(CliError::Usage("ablation.seeds and ablation.fps must be positive".into()));
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("no output directory: pass --out or set \"out\"".into()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn echo(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("run_config.json");
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| CliError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let c = RunConfig::default()
            .with_overrides(&["model.gap_g=2".into(), "pose.epochs=3".into(), "out=\"x\"".into()])
            .unwrap();
        assert_eq!(c.model.gap_g, 2);
        assert_eq!(c.pose.epochs, 3);
        assert_eq!(c.out, Some(PathBuf::from("x")));
        let plain = RunConfig::default().with_overrides(&["dataset=some/dir".into()]).unwrap();
        assert_eq!(plain.dataset, Some(PathBuf::from("some/dir")));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let d = RunConfig::default();
        assert!(matches!(d.with_overrides(&["model.nope=1".into()]), Err(CliError::Usage(_))));
        assert!(matches!(d.with_overrides(&["model.gap_g=minus".into()]), Err(CliError::Usage(_))));
        assert!(matches!(d.with_overrides(&["seed".into()]), Err(CliError::Usage(_))));
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn seed_propagates_and_round_trips() {
        let c = RunConfig { seed: 11, ..Default::default() }.resolve().unwrap();
        assert_eq!((c.model.seed, c.data.seed, c.pose.seed, c.classifier.seed), (11, 11, 11, 11));
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.classifier.batch_size, 64);
        assert_eq!(c.pose.batch_size, 32);
    }

    #[test]
    fn mismatched_parts_are_rejected() {
        let c = RunConfig::default().with_overrides(&["data.image_size=32".into()]).unwrap();
        assert!(c.resolve().is_err());
    }
}
