//! Encoder, temporal module, decoder and anticipatory classifier.

mod checkpoint;
mod config;
mod layers;

use cgap2_tensor::{concat, Graph, NormMode, ParamKind, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use layers::{declare, Allocator, BatchNorm, Builder, Conv, Counter, Layers, Linear, ResStage, UpStage};

use crate::error::{Error, Result};
use crate::synthdata::VolumeBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Encoder,
    Temporal,
    Decoder,
    Classifier,
    All,
}

impl Stage {
    pub const PARTS: [Stage; 4] = [Stage::Encoder, Stage::Temporal, Stage::Decoder, Stage::Classifier];

    pub fn prefix(self) -> &'static str {
        match self {
            Stage::Encoder => "encoder.",
            Stage::Temporal => "temporal.",
            Stage::Decoder => "decoder.",
            Stage::Classifier => "classifier.",
            Stage::All => "",
        }
    }
}

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub layers: Layers,
}

/// Trainable weight count of `stage` for `config`, without allocating.
pub fn planned_parameters(config: &ModelConfig, stage: Stage) -> usize {
    let mut counter = Counter::default();
    declare(config, &mut counter);
    counter
        .entries
        .iter()
        .filter(|(name, _, kind)| *kind == ParamKind::Trainable && name.starts_with(stage.prefix()))
        .map(|(_, n, _)| n)
        .sum()
}

pub fn count_parameters<T: Scalar>(model: &Model<T>, stage: Stage) -> usize {
    model.store.count_weights(stage.prefix())
}

/// `u8` frames (`[3, S, S]` each) scaled to `[0, 1]`.
pub fn frames_to_tensor<T: Scalar>(frames: &[&[u8]], image_size: usize) -> Result<Tensor<T>> {
    let data: Vec<T> = frames
        .iter()
        .flat_map(|f| f.iter().map(|&v| T::lit(v as f64 / 255.0)))
        .collect();
    Ok(Tensor::new(vec![frames.len(), 3, image_size, image_size], data)?)
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut alloc = Allocator::<T>::new(config.seed);
        let layers = declare(&config, &mut alloc);
        let mut model = Self {
            config,
            store: alloc.store,
            layers,
        };
        model.set_volume(&VolumeBounds {
            min: [-1000.0, -1000.0, 3500.0],
            max: [1000.0, 1000.0, 5500.0],
        });
        Ok(model)
    }

    /// Maps the heatmap voxel grid onto the given camera-space box.
    pub fn set_volume(&mut self, bounds: &VolumeBounds) {
        let steps = (self.config.heatmap_size.max(2) - 1) as f64;
        let origin = self.store.get_mut(self.layers.volume_origin);
        for a in 0..3 {
            origin.value.data_mut()[a] = T::lit(bounds.min[a] as f64);
        }
        let step = self.store.get_mut(self.layers.volume_step);
        for a in 0..3 {
            step.value.data_mut()[a] = T::lit((bounds.max[a] - bounds.min[a]) as f64 / steps);
        }
    }

    /// Redraws the initial weights of one stage from `seed`, leaving the
    /// rest of the model untouched. Optimizer state of that stage is reset.
    pub fn reinitialize(&mut self, stage: Stage, seed: u64) -> Result<()> {
        let fresh = Model::<T>::new(ModelConfig {
            seed,
            ..self.config.clone()
        })?;
        self.copy_stage_from(&fresh, stage)
    }

    /// Copies every parameter of `stage` from `other`; names and shapes must
    /// match. Used to share a pretrained encoder/decoder across variants.
    pub fn copy_stage_from(&mut self, other: &Model<T>, stage: Stage) -> Result<()> {
        for p in self.store.iter_mut().filter(|p| p.name.starts_with(stage.prefix())) {
            let id = other.store.find(&p.name).ok_or_else(|| {
                Error::Config(format!("source model has no parameter {}", p.name))
            })?;
            let src = &other.store.get(id).value;
            if src.shape() != p.value.shape() {
                return Err(Error::Config(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(src.data());
            p.momentum_buffer.iter_mut().for_each(|m| *m = T::zero());
        }
        Ok(())
    }

    /// Takes over the heatmap volume of `other`.
    pub fn copy_volume_from(&mut self, other: &Model<T>) {
        for id in [self.layers.volume_origin, self.layers.volume_step] {
            let name = self.store.get(id).name.clone();
            let src = other.store.find(&name).map(|i| other.store.get(i).value.data().to_vec());
            if let Some(v) = src {
                self.store.get_mut(id).value.data_mut().copy_from_slice(&v);
            }
        }
    }

    /// Millimetres per heatmap voxel along x, y, z.
    pub fn volume_step(&self) -> Vec<T> {
        self.store.get(self.layers.volume_step).value.data().to_vec()
    }

    /// Freezes every stage, then unfreezes the listed ones.
    pub fn set_trainable(&mut self, stages: &[Stage]) {
        self.store.set_frozen_prefix("", true);
        for s in stages {
            self.store.set_frozen_prefix(s.prefix(), false);
        }
    }

    pub fn is_frozen(&self, stage: Stage) -> bool {
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(stage.prefix()))
            .all(|(_, p)| p.frozen)
    }

    pub fn stage_values(&self, stage: Stage) -> Vec<(String, Vec<T>)> {
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(stage.prefix()))
            .map(|(_, p)| (p.name.clone(), p.value.data().to_vec()))
            .collect()
    }

    /// Frozen stages always normalise with their running statistics.
    fn mode_for(&self, stage: Stage, mode: NormMode) -> NormMode {
        if self.is_frozen(stage) {
            NormMode::Eval
        } else {
            mode
        }
    }

    /// `[M, 3, S, S]` frames to `[M, F, s, s]` features. In evaluation mode
    /// (or when frozen) each frame is encoded independently.
    pub fn encode<'g>(&self, g: &'g Graph<T>, images: Var<'g, T>, mode: NormMode) -> Result<Var<'g, T>> {
        let mode = self.mode_for(Stage::Encoder, mode);
        let s = self.config.image_size;
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(cgap2_tensor::TensorError::Shape(format!(
                "encoder expects [M, 3, {s}, {s}] images, got {shape:?}"
            ))
            .into());
        }
        let c = &self.config;
        let mut x = images;
        for st in &self.layers.encoder {
            let a = st.down.forward(g, &self.store, x)?;
            let a = st.down_bn.forward(g, &self.store, a, mode, c)?.relu();
            let b = st.conv.forward(g, &self.store, a)?;
            let b = st.conv_bn.forward(g, &self.store, b, mode, c)?;
            let skip = st.skip.forward(g, &self.store, x)?;
            x = b.add(skip)?.relu();
        }
        Ok(x)
    }

    /// `[N, F, n, s, s]` past features to `[N, F, k, s, s]` future features.
    pub fn temporal<'g>(&self, g: &'g Graph<T>, features: Var<'g, T>, mode: NormMode) -> Result<Var<'g, T>> {
        let mode = self.mode_for(Stage::Temporal, mode);
        let c = &self.config;
        let shape = features.shape();
        let want = [c.feature_channels, c.context_n, c.feature_spatial, c.feature_spatial];
        if shape.len() != 5 || shape[1..] != want {
            return Err(cgap2_tensor::TensorError::Shape(format!(
                "temporal module expects [N, {}, {}, {}, {}], got {shape:?}",
                want[0], want[1], want[2], want[3]
            ))
            .into());
        }
        let l = &self.layers;
        let mut x = l.temporal_bottleneck.forward(g, &self.store, features)?.relu();
        for conv in &l.temporal_pre {
            x = conv.forward(g, &self.store, x)?.relu();
        }
        if let Some(bn) = &l.temporal_bn {
            x = x.maxpool3d([1, 2, 2], [1, 2, 2])?;
            x = bn.forward(g, &self.store, x, mode, c)?;
            x = x.upsample_nearest3d([1, 2, 2])?;
        }
        for conv in &l.temporal_post {
            x = conv.forward(g, &self.store, x)?.relu();
        }
        x = l.temporal_expand.forward(g, &self.store, x)?.relu();
        Ok(l.temporal_reduce.forward(g, &self.store, x)?.relu())
    }

    /// `[M, F, s, s]` features to `[M, J, Hd, Hd, Hd]` heatmap logits.
    pub fn decode<'g>(&self, g: &'g Graph<T>, features: Var<'g, T>, mode: NormMode) -> Result<Var<'g, T>> {
        let mode = self.mode_for(Stage::Decoder, mode);
        let mut x = features;
        for up in &self.layers.decoder {
            let [m, ch, h, w] = <[usize; 4]>::try_from(x.shape()).map_err(|s| {
                cgap2_tensor::TensorError::Shape(format!("decoder expects [M, C, H, W], got {s:?}"))
            })?;
            x = x
                .reshape(&[m, ch, 1, h, w])?
                .upsample_nearest3d([1, 2, 2])?
                .reshape(&[m, ch, 2 * h, 2 * w])?;
            x = up.conv.forward(g, &self.store, x)?;
            x = up.bn.forward(g, &self.store, x, mode, &self.config)?.relu();
        }
        let x = self.layers.decoder_out.forward(g, &self.store, x)?;
        let m = x.shape()[0];
        let hd = self.config.heatmap_size;
        Ok(x.reshape(&[m, self.config.num_joints, hd, hd, hd])?)
    }

    /// Heatmaps to camera-space joints in millimetres.
    pub fn heatmaps_to_pose<'g>(&self, heatmaps: Var<'g, T>) -> Result<Var<'g, T>> {
        let origin = self.store.get(self.layers.volume_origin).value.data().to_vec();
        let step = self.store.get(self.layers.volume_step).value.data().to_vec();
        // Voxel axes are (depth, row, column) = (z, y, x).
        Ok(heatmaps.soft_argmax3d()?.affine_last(&step, &origin, &[2, 1, 0])?)
    }

    /// Single-frame pose estimation: encoder, decoder, soft-argmax.
    pub fn estimate_pose<'g>(&self, g: &'g Graph<T>, images: Var<'g, T>, mode: NormMode) -> Result<Var<'g, T>> {
        let f = self.encode(g, images, mode)?;
        self.heatmaps_to_pose(self.decode(g, f, mode)?)
    }

    /// `[N·n, F, s, s]` (sample-major) to `[N, F, n, s, s]`.
    pub fn stack_time<'g>(&self, frames: Var<'g, T>, frames_per_sample: usize) -> Result<Var<'g, T>> {
        let shape = frames.shape();
        let n = shape[0] / frames_per_sample;
        Ok(frames
            .reshape(&[n, frames_per_sample, shape[1], shape[2], shape[3]])?
            .permute(&[0, 2, 1, 3, 4])?)
    }

    /// `[N, F, t, s, s]` to `[N·t, F, s, s]` (sample-major).
    pub fn unstack_time<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        Ok(x.permute(&[0, 2, 1, 3, 4])?.reshape(&[s[0] * s[2], s[1], s[3], s[4]])?)
    }

    /// Predicted future poses `[N·k, J, 3]` from past features `[N, F, n, s, s]`.
    pub fn predict_from_features<'g>(&self, g: &'g Graph<T>, history: Var<'g, T>, mode: NormMode) -> Result<Var<'g, T>> {
        let future = self.temporal(g, history, mode)?;
        let flat = self.unstack_time(future)?;
        self.heatmaps_to_pose(self.decode(g, flat, mode)?)
    }

    /// Future poses `[N·k, J, 3]` from `N` windows of `n` frames
    /// (`[N·n, 3, S, S]`, window-major).
    pub fn pose_predict<'g>(&self, g: &'g Graph<T>, windows: Var<'g, T>, mode: NormMode) -> Result<Var<'g, T>> {
        let feats = self.encode(g, windows, mode)?;
        let history = self.stack_time(feats, self.config.context_n)?;
        self.predict_from_features(g, history, mode)
    }

    /// Logits `[N, classes]` from past features and predicted future
    /// features, joined along time. `None` for `predicted` substitutes zeros
    /// (the historical-only ablation).
    pub fn classify<'g>(
        &self,
        g: &'g Graph<T>,
        history: Var<'g, T>,
        predicted: Option<Var<'g, T>>,
        mode: NormMode,
    ) -> Result<Var<'g, T>> {
        let c = &self.config;
        let hs = history.shape();
        let predicted = match predicted {
            Some(p) => p,
            None => g.constant(Tensor::zeros([hs[0], hs[1], c.k_value, hs[3], hs[4]])),
        };
        let x = concat(history, predicted, 2)?;
        let want = c.context_n + c.k_value;
        if x.shape()[2] != want {
            return Err(cgap2_tensor::TensorError::Shape(format!(
                "classifier expects {want} time slices after concatenation, got {:?}",
                x.shape()
            ))
            .into());
        }
        let x = self.layers.classifier_conv.forward(g, &self.store, x)?;
        let x = self.layers.classifier_bn.forward(g, &self.store, x, self.mode_for(Stage::Classifier, mode), c)?.relu();
        let n = x.shape()[0];
        let flat = x.reshape(&[n, x.shape()[1..].iter().product()])?;
        let [fc0, fc1, out] = &self.layers.classifier_fc;
        let h = fc0.forward(g, &self.store, flat)?.relu();
        let h = fc1.forward(g, &self.store, h)?.relu();
        Ok(out.forward(g, &self.store, h)?)
    }

    /// Logits from `N` windows of `n` frames; the decoder is not used.
    pub fn classifier_forward<'g>(&self, g: &'g Graph<T>, windows: Var<'g, T>, historical_only: bool) -> Result<Var<'g, T>> {
        let feats = self.encode(g, windows, NormMode::Eval)?;
        let history = self.stack_time(feats, self.config.context_n)?;
        let predicted = if historical_only {
            None
        } else {
            Some(self.temporal(g, history, NormMode::Eval)?)
        };
        self.classify(g, history, predicted, NormMode::Eval)
    }
}
