//! Sample selection, cached encoder features, and the three training phases
//! run against a synthetic dataset.

use std::collections::{BTreeSet, HashMap};

use cgap2_tensor::{Graph, NormMode, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{accuracy, mpjpe_per_class, per_sample_errors, EvalReport};
use crate::model::{frames_to_tensor, Model};
use crate::sampler::{sample_window, spread_windows, windows_by_target, SamplerConfig, WindowSample};
use crate::synthdata::{Dataset, Split, NUM_JOINTS};
use crate::training::{run_epochs, OptimConfig, Phase, TrainReport, Validation};

/// Which frames and windows each phase draws from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPlan {
    /// Phase 0 uses every `pretrain_stride`-th frame of each training sequence.
    pub pretrain_stride: usize,
    /// Frame stride for single-frame validation.
    pub val_frame_stride: usize,
    /// Pose windows per sequence, spread over the valid start positions.
    pub pose_windows_per_sequence: usize,
    /// When set, pose windows are spread over first-target frames from this
    /// one to the end instead of over start positions, so that models with
    /// different spans are scored on the same frames.
    pub pose_first_target: Option<usize>,
    /// Classifier windows have their first target between `peak + lo` and
    /// `peak + hi`.
    pub classifier_target_range: [i64; 2],
    /// Batch size for inference passes.
    pub eval_batch: usize,
    /// Units the L1 pose loss is optimised in.
    pub pose_loss_units: PoseLossUnits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseLossUnits {
    Millimetre,
    /// Heatmap voxels: millimetres divided by the per-axis voxel size.
    Voxel,
}

/// L1 pose loss between `[M, J, 3]` millimetre poses in the chosen units.
pub fn pose_loss<'g>(model: &Model<f32>, pred: Var<'g, f32>, target: Var<'g, f32>, units: PoseLossUnits) -> Result<Var<'g, f32>> {
    match units {
        PoseLossUnits::Millimetre => Ok(pred.l1_pose_loss(target)?),
        PoseLossUnits::Voxel => {
            let inv: Vec<f32> = model.volume_step().iter().map(|s| 1.0 / s).collect();
            let to_voxel = |v: Var<'g, f32>| v.affine_last(&inv, &[0.0; 3], &[0, 1, 2]);
            Ok(to_voxel(pred)?.l1_pose_loss(to_voxel(target)?)?)
        }
    }
}

impl Default for DataPlan {
    fn default() -> Self {
        Self {
            pretrain_stride: 22,
            val_frame_stride: 22,
            pose_windows_per_sequence: 5,
            pose_first_target: None,
            classifier_target_range: [-3, 0],
            eval_batch: 64,
            pose_loss_units: PoseLossUnits::Voxel,
        }
    }
}

impl DataPlan {
    pub fn validate(&self) -> Result<()> {
        if self.pretrain_stride == 0 || self.val_frame_stride == 0 || self.eval_batch == 0 {
            return Err(Error::Config("data plan strides and eval_batch must be positive".into()));
        }
        if self.classifier_target_range[0] > self.classifier_target_range[1] {
            return Err(Error::Config("classifier_target_range must be [lo, hi] with lo <= hi".into()));
        }
        Ok(())
    }
}

/// `(sequence, frame)` pairs at a fixed stride; the starting offset varies
/// by sequence so that different phases of motion are covered.
pub fn frame_samples(data: &Dataset, split: Split, stride: usize) -> Vec<(usize, usize)> {
    data.split_ids(split)
        .into_iter()
        .flat_map(|id| {
            let offset = (id * 7) % stride;
            (offset..data.sequences[id].length).step_by(stride).map(move |t| (id, t))
        })
        .collect()
}

pub fn pose_windows(data: &Dataset, split: Split, sampler: &SamplerConfig, per_sequence: usize, first_target: Option<usize>) -> Vec<WindowSample> {
    data.split_ids(split)
        .into_iter()
        .flat_map(|id| {
            let len = data.sequences[id].length;
            match first_target {
                Some(t) => windows_by_target(sampler, len, t, per_sequence),
                None => spread_windows(sampler, len, per_sequence),
            }
            .into_iter()
            .map(move |w| w.with_sequence(id))
        })
        .collect()
}

/// Windows whose first target lands in the plan's range around the class
/// peak, labelled with the sequence's class.
pub fn classifier_windows(data: &Dataset, split: Split, sampler: &SamplerConfig, range: [i64; 2]) -> Vec<(WindowSample, usize)> {
    let lead = (sampler.context_n * sampler.gap_g) as i64;
    let mut out = Vec::new();
    for id in data.split_ids(split) {
        let seq = &data.sequences[id];
        for offset in range[0]..=range[1] {
            let start = seq.peak_frame as i64 + offset - lead;
            if start < 0 {
                continue;
            }
            let cfg = SamplerConfig {
                start_j: start as usize,
                ..*sampler
            };
            if let Ok(w) = sample_window(&cfg, seq.length) {
                out.push((w.with_sequence(id), seq.class_id));
            }
        }
    }
    out
}

/// Encoder outputs for a set of frames, computed once with the encoder frozen.
pub struct FeatureBank {
    /// Elements per frame (`F·s·s`).
    pub dim: usize,
    index: HashMap<(usize, usize), usize>,
    data: Vec<f32>,
}

impl FeatureBank {
    pub fn encode(model: &Model<f32>, data: &Dataset, frames: impl IntoIterator<Item = (usize, usize)>, batch: usize) -> Result<Self> {
        let frames: Vec<(usize, usize)> = frames.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let c = &model.config;
        let dim = c.feature_channels * c.feature_spatial * c.feature_spatial;
        let mut out = Vec::with_capacity(frames.len() * dim);
        for chunk in frames.chunks(batch.max(1)) {
            let images = frame_batch(data, chunk, c.image_size)?;
            let g = Graph::new();
            let f = model.encode(&g, g.constant(images), NormMode::Eval)?;
            out.extend(f.data());
        }
        Ok(Self {
            dim,
            index: frames.iter().enumerate().map(|(i, &k)| (k, i)).collect(),
            data: out,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, sequence: usize, frame: usize) -> &[f32] {
        let i = self.index[&(sequence, frame)];
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `[B, F, n, s, s]` past features for the windows.
    pub fn history(&self, windows: &[&WindowSample], channels: usize) -> Result<Tensor<f32>> {
        let n = windows.first().map_or(0, |w| w.input_indices.len());
        let plane = self.dim / channels;
        let side = (plane as f64).sqrt().round() as usize;
        let mut out = vec![0.0f32; windows.len() * self.dim * n];
        for (b, w) in windows.iter().enumerate() {
            for (t, &frame) in w.input_indices.iter().enumerate() {
                let feat = self.get(w.sequence_id, frame);
                for f in 0..channels {
                    let dst = ((b * channels + f) * n + t) * plane;
                    out[dst..dst + plane].copy_from_slice(&feat[f * plane..(f + 1) * plane]);
                }
            }
        }
        Ok(Tensor::new(vec![windows.len(), channels, n, side, side], out)?)
    }
}

fn frame_batch(data: &Dataset, frames: &[(usize, usize)], image_size: usize) -> Result<Tensor<f32>> {
    let slices: Vec<&[u8]> = frames.iter().map(|&(s, t)| data.sequences[s].frame(t)).collect();
    frames_to_tensor(&slices, image_size)
}

fn pose_batch(data: &Dataset, frames: impl IntoIterator<Item = (usize, usize)>) -> Result<Tensor<f32>> {
    let mut out = Vec::new();
    let mut n = 0;
    for (s, t) in frames {
        out.extend_from_slice(data.sequences[s].pose(t));
        n += 1;
    }
    Ok(Tensor::new(vec![n, NUM_JOINTS, 3], out)?)
}

fn window_targets<'a>(windows: impl IntoIterator<Item = &'a WindowSample>) -> Vec<(usize, usize)> {
    windows
        .into_iter()
        .flat_map(|w| w.target_indices.iter().map(move |&t| (w.sequence_id, t)))
        .collect()
}

fn window_inputs<'a>(windows: impl IntoIterator<Item = &'a WindowSample>) -> Vec<(usize, usize)> {
    windows
        .into_iter()
        .flat_map(|w| w.input_indices.iter().map(move |&t| (w.sequence_id, t)))
        .collect()
}

/// Mean over samples of the summed absolute coordinate error.
fn l1_per_sample(pred: &Tensor<f32>, target: &Tensor<f32>) -> f64 {
    let per = NUM_JOINTS * 3;
    let n = pred.shape()[0].max(1);
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    debug_assert_eq!(pred.numel(), n * per);
    total / n as f64
}

fn concat_rows(parts: Vec<Tensor<f32>>) -> Result<Tensor<f32>> {
    let mut shape = parts
        .first()
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| Error::Data("no samples to evaluate".into()))?;
    shape[0] = parts.iter().map(|t| t.shape()[0]).sum();
    let data = parts.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Tensor::new(shape, data)?)
}

/// Single-frame pose estimates for `frames`.
pub fn estimate_poses(model: &Model<f32>, data: &Dataset, frames: &[(usize, usize)], batch: usize) -> Result<Tensor<f32>> {
    let mut parts = Vec::new();
    for chunk in frames.chunks(batch.max(1)) {
        let g = Graph::new();
        let x = g.constant(frame_batch(data, chunk, model.config.image_size)?);
        parts.push(model.estimate_pose(&g, x, NormMode::Eval)?.to_tensor());
    }
    concat_rows(parts)
}

/// Future poses `[W·k, J, 3]` for windows whose past features are in `bank`.
pub fn predict_windows(model: &Model<f32>, bank: &FeatureBank, windows: &[WindowSample], batch: usize) -> Result<Tensor<f32>> {
    let mut parts = Vec::new();
    for chunk in windows.chunks(batch.max(1)) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let g = Graph::new();
        let hist = g.constant(bank.history(&refs, model.config.feature_channels)?);
        parts.push(model.predict_from_features(&g, hist, NormMode::Eval)?.to_tensor());
    }
    concat_rows(parts)
}

/// Phase 0: encoder and decoder on single-frame pose estimation.
pub fn pretrain_encoder(model: &mut Model<f32>, data: &Dataset, plan: &DataPlan, opt: &OptimConfig) -> Result<TrainReport> {
    plan.validate()?;
    Phase::Pretrain.check(model)?;
    model.set_volume(&data.manifest.volume);
    let train = frame_samples(data, Split::Train, plan.pretrain_stride);
    let val = frame_samples(data, Split::Val, plan.val_frame_stride);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("dataset has no frames for pretraining or validation".into()));
    }
    let size = model.config.image_size;
    let val_target = pose_batch(data, val.iter().copied())?;
    run_epochs(
        model,
        Phase::Pretrain,
        opt,
        train.len(),
        "mpjpe_mm",
        |model, batch| {
            let frames: Vec<(usize, usize)> = batch.iter().map(|&i| train[i]).collect();
            let g = Graph::new();
            let x = g.constant(frame_batch(data, &frames, size)?);
            let target = g.constant(pose_batch(data, frames.iter().copied())?);
            let pred = model.estimate_pose(&g, x, NormMode::Train)?;
            let loss = pose_loss(model, pred, target, plan.pose_loss_units)?;
            g.backward(loss)?;
            model.store.accumulate_grads(&g);
            model.store.apply_buffer_updates(&g);
            Ok(loss.item() as f64)
        },
        |model| {
            let pred = estimate_poses(model, data, &val, plan.eval_batch)?;
            let errs = per_sample_errors(&pred, &val_target)?;
            Ok((
                (l1_per_sample(&pred, &val_target), mean(&errs)),
                val.len(),
            ))
        },
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Windows and cached past features for pose prediction on one split.
pub struct PoseData {
    pub windows: Vec<WindowSample>,
    pub bank: FeatureBank,
    pub targets: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl PoseData {
    pub fn build(model: &Model<f32>, data: &Dataset, split: Split, plan: &DataPlan) -> Result<Self> {
        let windows = pose_windows(data, split, &model.config.sampler(), plan.pose_windows_per_sequence, plan.pose_first_target);
        if windows.is_empty() {
            return Err(Error::Data(format!(
                "no {split:?} sequence is long enough for context {} and gap {}",
                model.config.context_n, model.config.gap_g
            )));
        }
        let bank = FeatureBank::encode(model, data, window_inputs(&windows), plan.eval_batch)?;
        let targets = pose_batch(data, window_targets(&windows))?;
        let labels = window_targets(&windows)
            .iter()
            .map(|&(s, _)| data.sequences[s].class_id)
            .collect();
        Ok(Self {
            windows,
            bank,
            targets,
            labels,
        })
    }

    fn target_rows(&self, rows: &[usize], k: usize) -> Result<Tensor<f32>> {
        let per = NUM_JOINTS * 3 * k;
        let mut out = Vec::with_capacity(rows.len() * per);
        for &r in rows {
            out.extend_from_slice(&self.targets.data()[r * per..(r + 1) * per]);
        }
        Ok(Tensor::new(vec![rows.len() * k, NUM_JOINTS, 3], out)?)
    }

    /// Validation loss and MPJPE of the current model.
    pub fn evaluate(&self, model: &Model<f32>, batch: usize) -> Result<Validation> {
        let pred = predict_windows(model, &self.bank, &self.windows, batch)?;
        let errs = per_sample_errors(&pred, &self.targets)?;
        // Loss per window, as in training: k predicted frames per window.
        let k = model.config.k_value as f64;
        Ok((l1_per_sample(&pred, &self.targets) * k, mean(&errs)))
    }

    pub fn report(&self, model: &Model<f32>, class_names: &[String], batch: usize) -> Result<EvalReport> {
        let pred = predict_windows(model, &self.bank, &self.windows, batch)?;
        let errs = per_sample_errors(&pred, &self.targets)?;
        mpjpe_per_class(&errs, &self.labels, class_names)
    }
}

/// Phase 1: the temporal module on future-pose prediction with the encoder
/// and decoder frozen.
pub fn train_pose_phase(model: &mut Model<f32>, data: &Dataset, plan: &DataPlan, opt: &OptimConfig) -> Result<TrainReport> {
    let train = PoseData::build(model, data, Split::Train, plan)?;
    let val = PoseData::build(model, data, Split::Val, plan)?;
    train_pose_with(model, &train, &val, plan, opt)
}

/// Phase 1 on prepared data, so sweeps can share the cached features.
pub fn train_pose_with(model: &mut Model<f32>, train: &PoseData, val: &PoseData, plan: &DataPlan, opt: &OptimConfig) -> Result<TrainReport> {
    plan.validate()?;
    Phase::Pose.check(model)?;
    let channels = model.config.feature_channels;
    let k = model.config.k_value;
    run_epochs(
        model,
        Phase::Pose,
        opt,
        train.windows.len(),
        "mpjpe_mm",
        |model, batch| {
            let refs: Vec<&WindowSample> = batch.iter().map(|&i| &train.windows[i]).collect();
            let g = Graph::new();
            let hist = g.constant(train.bank.history(&refs, channels)?);
            let target = g.constant(train.target_rows(batch, k)?);
            let pred = model.predict_from_features(&g, hist, NormMode::Train)?;
            // Reported per window: k frames each.
            let loss = pose_loss(model, pred, target, plan.pose_loss_units)?.scale(k as f32);
            g.backward(loss)?;
            model.store.accumulate_grads(&g);
            model.store.apply_buffer_updates(&g);
            Ok(loss.item() as f64)
        },
        |model| Ok((val.evaluate(model, plan.eval_batch)?, val.windows.len())),
    )
}

/// Windows, labels, and cached past and predicted features for the
/// classifier on one split.
pub struct ClassifierData {
    pub windows: Vec<WindowSample>,
    pub labels: Vec<usize>,
    pub bank: FeatureBank,
    /// `[F, k, s, s]` per window from the frozen temporal module.
    predicted: Vec<f32>,
    predicted_dim: usize,
}

impl ClassifierData {
    pub fn build(model: &Model<f32>, data: &Dataset, split: Split, plan: &DataPlan) -> Result<Self> {
        let pairs = classifier_windows(data, split, &model.config.sampler(), plan.classifier_target_range);
        if pairs.is_empty() {
            return Err(Error::Data(format!("no {split:?} classifier windows fit around the class peaks")));
        }
        let (windows, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Self::from_windows(model, data, windows, labels, plan)
    }

    /// Classifier inputs for arbitrary windows, e.g. a sliding sweep over one
    /// sequence.
    pub fn from_windows(
        model: &Model<f32>,
        data: &Dataset,
        windows: Vec<WindowSample>,
        labels: Vec<usize>,
        plan: &DataPlan,
    ) -> Result<Self> {
        if windows.is_empty() || windows.len() != labels.len() {
            return Err(Error::Data(format!("{} windows for {} labels", windows.len(), labels.len())));
        }
        let bank = FeatureBank::encode(model, data, window_inputs(&windows), plan.eval_batch)?;
        let mut predicted = Vec::new();
        let channels = model.config.feature_channels;
        for chunk in windows.chunks(plan.eval_batch) {
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            let g = Graph::new();
            let hist = g.constant(bank.history(&refs, channels)?);
            predicted.extend(model.temporal(&g, hist, NormMode::Eval)?.data());
        }
        let predicted_dim = predicted.len() / windows.len();
        Ok(Self {
            windows,
            labels,
            bank,
            predicted,
            predicted_dim,
        })
    }

    fn inputs(&self, model: &Model<f32>, rows: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>)> {
        let c = &model.config;
        let refs: Vec<&WindowSample> = rows.iter().map(|&i| &self.windows[i]).collect();
        let hist = self.bank.history(&refs, c.feature_channels)?;
        let mut pred = Vec::with_capacity(rows.len() * self.predicted_dim);
        for &r in rows {
            pred.extend_from_slice(&self.predicted[r * self.predicted_dim..(r + 1) * self.predicted_dim]);
        }
        let pred = Tensor::new(
            vec![rows.len(), c.feature_channels, c.k_value, c.feature_spatial, c.feature_spatial],
            pred,
        )?;
        Ok((hist, pred, rows.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Logits for every window; `historical_only` zeroes the predicted features.
    pub fn logits(&self, model: &Model<f32>, historical_only: bool, batch: usize) -> Result<Tensor<f32>> {
        let rows: Vec<usize> = (0..self.windows.len()).collect();
        let mut parts = Vec::new();
        for chunk in rows.chunks(batch.max(1)) {
            let (hist, pred, _) = self.inputs(model, chunk)?;
            let g = Graph::new();
            let pred = (!historical_only).then(|| g.constant(pred));
            parts.push(model.classify(&g, g.constant(hist), pred, NormMode::Eval)?.to_tensor());
        }
        concat_rows(parts)
    }

    /// Cross-entropy and accuracy.
    pub fn evaluate(&self, model: &Model<f32>, historical_only: bool, batch: usize) -> Result<Validation> {
        let logits = self.logits(model, historical_only, batch)?;
        let g = Graph::new();
        let loss = g.constant(logits.clone()).softmax_cross_entropy(&self.labels)?.item() as f64;
        Ok((loss, accuracy(&logits, &self.labels)?))
    }
}

/// Phase 2: the classifier with encoder and temporal module frozen. The
/// decoder is not evaluated.
pub fn train_classifier_phase(model: &mut Model<f32>, data: &Dataset, plan: &DataPlan, opt: &OptimConfig) -> Result<TrainReport> {
    let train = ClassifierData::build(model, data, Split::Train, plan)?;
    let val = ClassifierData::build(model, data, Split::Val, plan)?;
    train_classifier_with(model, &train, &val, plan, opt, false)
}

/// Phase 2 on prepared data. With `historical_only` the classifier is
/// trained and validated with zeroed predicted features.
pub fn train_classifier_with(
    model: &mut Model<f32>,
    train: &ClassifierData,
    val: &ClassifierData,
    plan: &DataPlan,
    opt: &OptimConfig,
    historical_only: bool,
) -> Result<TrainReport> {
    plan.validate()?;
    Phase::Classifier.check(model)?;
    run_epochs(
        model,
        Phase::Classifier,
        opt,
        train.windows.len(),
        "accuracy",
        |model, batch| {
            let (hist, pred, labels) = train.inputs(model, batch)?;
            let g = Graph::new();
            let pred = (!historical_only).then(|| g.constant(pred));
            let loss = model.classify(&g, g.constant(hist), pred, NormMode::Train)?.softmax_cross_entropy(&labels)?;
            g.backward(loss)?;
            model.store.accumulate_grads(&g);
            model.store.apply_buffer_updates(&g);
            Ok(loss.item() as f64)
        },
        |model| Ok((val.evaluate(model, historical_only, plan.eval_batch)?, val.windows.len())),
    )
}
