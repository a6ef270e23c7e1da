//! The five subcommands. Each writes its outputs plus the resolved
//! configuration into the run's output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cgap2_core::metrics::{argmax, EvalReport};
use cgap2_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, Stage};
use cgap2_core::pipeline::{
    pretrain_encoder, train_classifier_phase, train_pose_phase, train_pose_with, ClassifierData, DataPlan, PoseData,
};
use cgap2_core::sampler::enumerate_windows;
use cgap2_core::synthdata::{build_dataset, length_for_onset, Dataset, Manifest, Split};
use cgap2_core::training::{Phase, TrainReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainPhase {
    Pretrain,
    Pose,
    Classifier,
    All,
}

impl TrainPhase {
    fn phases(self) -> Vec<Phase> {
        match self {
            TrainPhase::Pretrain => vec![Phase::Pretrain],
            TrainPhase::Pose => vec![Phase::Pose],
            TrainPhase::Classifier => vec![Phase::Classifier],
            TrainPhase::All => Phase::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Gap,
    Context,
    Arch,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Gap => "gap",
            Axis::Context => "context",
            Axis::Arch => "arch",
        }
    }

    pub fn default_values(self) -> Vec<usize> {
        match self {
            Axis::Gap => vec![2, 15, 25, 35],
            Axis::Context => vec![5, 10, 15, 20],
            Axis::Arch => vec![1, 2, 3, 4, 5],
        }
    }

    /// The model variant for one sweep value: gap alone; context with the
    /// gap fixed at 25; temporal depth with context and gap both 15.
    pub fn variant(self, base: &ModelConfig, value: usize) -> ModelConfig {
        match self {
            Axis::Gap => ModelConfig { gap_g: value, ..base.clone() },
            Axis::Context => ModelConfig { context_n: value, gap_g: 25, ..base.clone() },
            Axis::Arch => ModelConfig { conv_blocks: value, context_n: 15, gap_g: 15, ..base.clone() },
        }
    }
}

/// Seconds of anticipation a gap buys at the given frame rate.
pub fn time_advantage(gap: usize, fps: f64) -> f64 {
    gap as f64 / fps
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.out_dir()?.to_path_buf();
    cfg.echo(&out)?;
    Ok(out)
}

/// The configured dataset, loaded from disk or generated in memory.
pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let data = match &cfg.dataset {
        Some(dir) => Dataset::load(dir)?,
        None => Dataset::generate(&cfg.data)?,
    };
    let dc = &data.manifest.config;
    if dc.image_size != cfg.model.image_size || dc.num_classes != cfg.model.num_classes {
        return Err(CliError::Data(format!(
            "dataset has {} classes at {}px but the model expects {} at {}px",
            dc.num_classes, dc.image_size, cfg.model.num_classes, cfg.model.image_size
        )));
    }
    Ok(data)
}

pub fn cmd_generate(cfg: &RunConfig, overwrite: bool) -> CliResult<Manifest> {
    let out = cfg.out_dir()?;
    let manifest = build_dataset(&cfg.data, out, overwrite)?;
    cfg.echo(out)?;
    Ok(manifest)
}

fn checkpoint_name(phase: Phase) -> String {
    format!("{}.ckpt", phase.name())
}

fn write_report(out: &Path, report: &TrainReport) -> CliResult<()> {
    let name = report.phase.name();
    write(&out.join(format!("{name}_report.csv")), &report.to_csv())?;
    write(&out.join(format!("{name}_report.json")), &report.to_json())
}

/// Runs the requested phases in order. A run that starts after phase 0
/// resumes from `checkpoint`, or from the previous phase's checkpoint in the
/// output directory.
pub fn cmd_train(cfg: &RunConfig, phase: TrainPhase, checkpoint: Option<&Path>) -> CliResult<Vec<TrainReport>> {
    let out = prepare_out(cfg)?;
    let phases = phase.phases();
    let mut model = Model::<f32>::new(cfg.model.clone())?;
    if phases[0] != Phase::Pretrain {
        let previous = if phases[0] == Phase::Pose { Phase::Pretrain } else { Phase::Pose };
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => out.join(checkpoint_name(previous)),
        };
        if !path.exists() {
            return Err(CliError::Precondition(format!(
                "the {} phase needs a {} checkpoint; {} does not exist",
                phases[0].name(),
                previous.name(),
                path.display()
            )));
        }
        load_checkpoint(&mut model.store, &path)?;
    }
    let data = load_dataset(cfg)?;
    let mut reports = Vec::new();
    for p in phases {
        p.prepare(&mut model);
        let mut report = match p {
            Phase::Pretrain => pretrain_encoder(&mut model, &data, &cfg.plan, &cfg.pretrain)?,
            Phase::Pose => train_pose_phase(&mut model, &data, &cfg.plan, &cfg.pose)?,
            Phase::Classifier => train_classifier_phase(&mut model, &data, &cfg.plan, &cfg.classifier)?,
        };
        let ckpt = out.join(checkpoint_name(p));
        save_checkpoint(&model.store, &ckpt)?;
        report.checkpoint = Some(ckpt);
        write_report(&out, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub checkpoint: Option<PathBuf>,
    pub pose: EvalReport,
    pub pose_windows: usize,
    pub accuracy: f64,
    pub historical_only_accuracy: f64,
    pub chance: f64,
    pub classifier_windows: usize,
}

/// MPJPE per class on validation pose windows, and classifier accuracy with
/// and without the predicted features.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> CliResult<EvalSummary> {
    let out = prepare_out(cfg)?;
    let data = load_dataset(cfg)?;
    let mut model = Model::<f32>::new(cfg.model.clone())?;
    match checkpoint {
        Some(p) => load_checkpoint(&mut model.store, p)?,
        None => model.set_volume(&data.manifest.volume),
    }
    let batch = cfg.plan.eval_batch;
    let pose = PoseData::build(&model, &data, Split::Val, &cfg.plan)?;
    let cls = ClassifierData::build(&model, &data, Split::Val, &cfg.plan)?;
    let (_, accuracy) = cls.evaluate(&model, false, batch)?;
    let (_, historical_only_accuracy) = cls.evaluate(&model, true, batch)?;
    let mut report = pose.report(&model, &data.manifest.class_names, batch)?;
    report.accuracy = Some(accuracy);
    let summary = EvalSummary {
        checkpoint: checkpoint.map(Path::to_path_buf),
        pose: report,
        pose_windows: pose.windows.len(),
        accuracy,
        historical_only_accuracy,
        chance: 1.0 / data.num_classes() as f64,
        classifier_windows: cls.windows.len(),
    };
    write(&out.join("eval_mpjpe.csv"), &summary.pose.to_csv())?;
    write(
        &out.join("eval.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub value: usize,
    pub context_n: usize,
    pub gap_g: usize,
    pub conv_blocks: usize,
    pub time_advantage_s: f64,
    pub seeds: Vec<u64>,
    pub final_mpjpe: Vec<f64>,
    #[serde(skip)]
    pub reports: Vec<TrainReport>,
}

impl AblationCell {
    pub fn median_mpjpe(&self) -> f64 {
        median(&self.final_mpjpe)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    pub axis: Axis,
    pub cells: Vec<AblationCell>,
}

impl AblationResult {
    pub fn cell(&self, value: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.value == value)
    }

    /// One row per value and seed.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,value,context_n,gap_g,conv_blocks,time_advantage_s,seed,final_val_mpjpe_mm\n");
        for c in &self.cells {
            for (seed, m) in c.seeds.iter().zip(&c.final_mpjpe) {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.3},{},{:.6}",
                    self.axis.name(),
                    c.value,
                    c.context_n,
                    c.gap_g,
                    c.conv_blocks,
                    c.time_advantage_s,
                    seed,
                    m
                );
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("axis,value,context_n,gap_g,conv_blocks,time_advantage_s,seeds,median_final_val_mpjpe_mm\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.3},{},{:.6}",
                self.axis.name(),
                c.value,
                c.context_n,
                c.gap_g,
                c.conv_blocks,
                c.time_advantage_s,
                c.seeds.len(),
                c.median_mpjpe()
            );
        }
        s
    }

    /// Validation curves (loss against global step) for every cell and seed.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("axis,value,seed,epoch,global_step,train_loss,val_loss,val_mpjpe_mm\n");
        for c in &self.cells {
            for (seed, r) in c.seeds.iter().zip(&c.reports) {
                for e in &r.epochs {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{:.6},{:.6},{:.6}",
                        self.axis.name(),
                        c.value,
                        seed,
                        e.epoch,
                        e.global_step,
                        e.train_loss,
                        e.val_loss,
                        e.val_metric
                    );
                }
            }
        }
        s
    }
}

/// Phase-1 sweep over one axis. Every cell shares one phase-0 encoder and
/// decoder (from `checkpoint`, or trained here once) and retrains only the
/// temporal module, once per seed.
pub fn cmd_ablate(
    cfg: &RunConfig,
    axis: Axis,
    values: Option<&[usize]>,
    checkpoint: Option<&Path>,
) -> CliResult<AblationResult> {
    let out = prepare_out(cfg)?;
    let values = values.map_or_else(|| axis.default_values(), <[usize]>::to_vec);
    if values.is_empty() {
        return Err(CliError::Usage("no sweep values".into()));
    }
    let variants: Vec<ModelConfig> = values.iter().map(|&v| axis.variant(&cfg.model, v)).collect();
    for v in &variants {
        v.validate()?;
    }
    // Every cell is scored on the same target frames: from the latest first
    // target any variant can reach to the end of the sequence. Generated data
    // is lengthened until that range starts before any gesture does.
    let first_target = variants.iter().map(|v| v.context_n * v.gap_g).max().unwrap_or(0);
    let plan = DataPlan { pose_first_target: Some(first_target), ..cfg.plan.clone() };
    let data = if cfg.dataset.is_none() {
        let tail = variants.iter().map(|v| (v.k_value - 1) * v.gap_g).max().unwrap_or(0);
        let mut c = cfg.clone();
        c.data.length = c
            .data
            .length
            .max(length_for_onset(c.data.num_classes, c.data.divergence_width, first_target))
            .max(first_target + tail + plan.pose_windows_per_sequence);
        load_dataset(&c)?
    } else {
        load_dataset(cfg)?
    };

    let mut base = Model::<f32>::new(cfg.model.clone())?;
    match checkpoint {
        Some(p) => load_checkpoint(&mut base.store, p)?,
        None => {
            Phase::Pretrain.prepare(&mut base);
            let mut report = pretrain_encoder(&mut base, &data, &cfg.plan, &cfg.pretrain)?;
            let ckpt = out.join(checkpoint_name(Phase::Pretrain));
            save_checkpoint(&base.store, &ckpt)?;
            report.checkpoint = Some(ckpt);
            write_report(&out, &report)?;
        }
    }

    let mut cells = Vec::new();
    for (&value, variant) in values.iter().zip(&variants) {
        let mut cell = AblationCell {
            value,
            context_n: variant.context_n,
            gap_g: variant.gap_g,
            conv_blocks: variant.conv_blocks,
            time_advantage_s: time_advantage(variant.gap_g, cfg.ablation.fps),
            seeds: Vec::new(),
            final_mpjpe: Vec::new(),
            reports: Vec::new(),
        };
        let mut shared: Option<(PoseData, PoseData)> = None;
        for s in 0..cfg.ablation.seeds as u64 {
            let seed = cfg.seed + s;
            let mut model = Model::<f32>::new(ModelConfig { seed, ..variant.clone() })?;
            model.copy_stage_from(&base, Stage::Encoder)?;
            model.copy_stage_from(&base, Stage::Decoder)?;
            model.copy_volume_from(&base);
            Phase::Pose.prepare(&mut model);
            if shared.is_none() {
                shared = Some((
                    PoseData::build(&model, &data, Split::Train, &plan)?,
                    PoseData::build(&model, &data, Split::Val, &plan)?,
                ));
            }
            let (train, val) = shared.as_ref().expect("built above");
            let opt = cgap2_core::training::OptimConfig { seed, ..cfg.pose.clone() };
            let report = train_pose_with(&mut model, train, val, &plan, &opt)?;
            cell.seeds.push(seed);
            cell.final_mpjpe.push(report.final_metric());
            cell.reports.push(report);
        }
        cells.push(cell);
    }
    let result = AblationResult { axis, cells };
    let name = axis.name();
    write(&out.join(format!("ablation_{name}.csv")), &result.to_csv())?;
    write(&out.join(format!("ablation_{name}_summary.csv")), &result.summary_csv())?;
    write(&out.join(format!("ablation_{name}_curves.csv")), &result.curves_csv())?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamRow {
    pub start: usize,
    pub last_input: usize,
    pub target: usize,
    pub predicted: usize,
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamResult {
    pub sequence: usize,
    pub class_id: usize,
    pub peak_frame: usize,
    pub hop: usize,
    pub lead_frames: usize,
    pub windows_per_second: f64,
    pub rows: Vec<StreamRow>,
    #[serde(skip)]
    pub class_names: Vec<String>,
}

impl StreamResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("window,start,last_input,target,lead_frames,true_class,predicted");
        for name in &self.class_names {
            let _ = write!(s, ",logit_{name}");
        }
        s.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(
                s,
                "{i},{},{},{},{},{},{}",
                r.start,
                r.last_input,
                r.target,
                r.target - r.last_input,
                self.class_id,
                r.predicted
            );
            for l in &r.logits {
                let _ = write!(s, ",{l:.6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Slides the sampler over one sequence and classifies every window. The
/// target frame of each row is when the gesture state it anticipates happens.
pub fn cmd_classify_stream(
    cfg: &RunConfig,
    checkpoint: &Path,
    sequence: Option<usize>,
    hop: usize,
) -> CliResult<StreamResult> {
    if hop == 0 {
        return Err(CliError::Usage("--hop must be at least 1".into()));
    }
    let out = prepare_out(cfg)?;
    let data = load_dataset(cfg)?;
    let id = match sequence {
        Some(id) if id < data.sequences.len() => id,
        Some(id) => {
            return Err(CliError::Usage(format!(
                "sequence {id} does not exist (dataset has {})",
                data.sequences.len()
            )))
        }
        None => *data
            .split_ids(Split::Val)
            .first()
            .ok_or_else(|| CliError::Data("dataset has no validation sequences".into()))?,
    };
    let mut model = Model::<f32>::new(cfg.model.clone())?;
    load_checkpoint(&mut model.store, checkpoint)?;
    let seq = &data.sequences[id];
    let windows: Vec<_> = enumerate_windows(&model.config.sampler(), seq.length, hop)
        .into_iter()
        .map(|w| w.with_sequence(id))
        .collect();
    if windows.is_empty() {
        return Err(CliError::Data(format!(
            "sequence {id} ({} frames) is shorter than one window ({} frames)",
            seq.length,
            model.config.sampler().span()
        )));
    }
    let started = Instant::now();
    let labels = vec![seq.class_id; windows.len()];
    let cls = ClassifierData::from_windows(&model, &data, windows, labels, &cfg.plan)?;
    let logits = cls.logits(&model, false, cfg.plan.eval_batch)?;
    let seconds = started.elapsed().as_secs_f64();
    let k = data.num_classes();
    let rows: Vec<StreamRow> = cls
        .windows
        .iter()
        .zip(logits.data().chunks(k))
        .map(|(w, l)| StreamRow {
            start: w.input_indices[0],
            last_input: w.last_input(),
            target: w.target_indices[0],
            predicted: argmax(l),
            logits: l.to_vec(),
        })
        .collect();
    let result = StreamResult {
        sequence: id,
        class_id: seq.class_id,
        peak_frame: seq.peak_frame,
        hop,
        lead_frames: model.config.gap_g,
        windows_per_second: rows.len() as f64 / seconds.max(1e-9),
        rows,
        class_names: data.manifest.class_names.clone(),
    };
    write(&out.join(format!("stream_{id}.csv")), &result.to_csv())?;
    write(
        &out.join(format!("stream_{id}.json")),
        &serde_json::to_string_pretty(&result).expect("stream serializes"),
    )?;
    Ok(result)
}
