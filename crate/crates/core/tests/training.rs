use cgap2_core::model::{Model, ModelConfig, Stage};
use cgap2_core::pipeline::*;
use cgap2_core::synthdata::{Dataset, DatasetConfig};
use cgap2_core::training::*;
use cgap2_core::Error;
use cgap2_tensor::{Graph, ParamId, ParamKind, ParamStore, Tensor};

fn one_param(w: f64) -> (ParamStore<f64>, ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("w", Tensor::scalar(w), ParamKind::Trainable);
    (s, id)
}

fn value(s: &ParamStore<f64>, id: ParamId) -> f64 {
    s.get(id).value.data()[0]
}

#[test]
fn momentum_two_step_example() {
    let (mut s, id) = one_param(1.0);
    let c = OptimConfig { momentum: 0.9, weight_decay: 0.0, ..Default::default() };
    s.get_mut(id).value.accumulate_grad(&[1.0]);
    sgd_step(&mut s, &c, 0.1).unwrap();
    assert!((s.get(id).momentum_buffer[0] - 1.0).abs() < 1e-15);
    assert!((value(&s, id) - 0.9).abs() < 1e-15);
    s.get_mut(id).value.accumulate_grad(&[1.0]);
    sgd_step(&mut s, &c, 0.1).unwrap();
    assert!((s.get(id).momentum_buffer[0] - 1.9).abs() < 1e-15);
    assert!((value(&s, id) - 0.71).abs() < 1e-15);
}

/// Hand iteration: w=1, grad 0.5, wd 0.1, momentum 0.9, lr 0.1.
/// Step 1: g = 0.6, buf = 0.6, w = 0.94.
/// Step 2: g = 0.5 + 0.094 = 0.594, buf = 0.54 + 0.594 = 1.134, w = 0.8266.
#[test]
fn weight_decay_enters_before_momentum() {
    let (mut s, id) = one_param(1.0);
    let c = OptimConfig { momentum: 0.9, weight_decay: 0.1, ..Default::default() };
    for _ in 0..2 {
        s.get_mut(id).value.accumulate_grad(&[0.5]);
        sgd_step(&mut s, &c, 0.1).unwrap();
    }
    assert!((s.get(id).momentum_buffer[0] - 1.134).abs() < 1e-12);
    assert!((value(&s, id) - 0.8266).abs() < 1e-12);
}

#[test]
fn frozen_parameter_is_untouched() {
    let (mut s, id) = one_param(1.0);
    s.set_frozen_prefix("w", true);
    s.get_mut(id).value.accumulate_grad(&[3.0]);
    sgd_step(&mut s, &OptimConfig::default(), 0.1).unwrap();
    assert_eq!(value(&s, id), 1.0);
    assert_eq!(s.get(id).momentum_buffer, vec![0.0]);
}

/// `L = a/2 (w - c)^2` under plain gradient descent contracts the error by
/// `1 - lr·a` per step: `w_t = c + (w_0 - c)(1 - lr·a)^t`.
#[test]
fn plain_descent_follows_the_quadratic_closed_form() {
    let (a, c, lr, w0) = (3.0, -0.5, 0.05, 2.0);
    let (mut s, id) = one_param(w0);
    let opt = OptimConfig { momentum: 0.0, weight_decay: 0.0, ..Default::default() };
    for t in 1..=40 {
        let g = Graph::new();
        let w = g.param(&s, id);
        let d = w.add(g.constant(Tensor::scalar(-c))).unwrap();
        let loss = d.mul(d).unwrap().sum().scale(a / 2.0);
        g.backward(loss).unwrap();
        s.accumulate_grads(&g);
        sgd_step(&mut s, &opt, lr).unwrap();
        let want = c + (w0 - c) * (1.0 - lr * a).powi(t);
        assert!((value(&s, id) - want).abs() < 1e-12, "step {t}");
    }
}

fn tiny_setup() -> (Model<f32>, Dataset, DataPlan) {
    let data = Dataset::generate(&DatasetConfig {
        num_classes: 3,
        sequences_per_class: 5,
        image_size: 16,
        ..DatasetConfig::default()
    })
    .unwrap();
    let model = Model::<f32>::new(ModelConfig::tiny()).unwrap();
    let plan = DataPlan {
        pretrain_stride: 40,
        val_frame_stride: 40,
        pose_windows_per_sequence: 3,
        ..DataPlan::default()
    };
    (model, data, plan)
}

fn short(batch_size: usize) -> OptimConfig {
    OptimConfig { epochs: 3, lr_drop_epoch: 1, batch_size, ..Default::default() }
}

fn others(model: &Model<f32>, phase: Phase) -> Vec<(String, Vec<f32>)> {
    Stage::PARTS
        .into_iter()
        .filter(|s| !phase.trainable().contains(s))
        .flat_map(|s| model.stage_values(s))
        .collect()
}

fn run_all(model: &mut Model<f32>, data: &Dataset, plan: &DataPlan) -> Vec<TrainReport> {
    let mut reports = Vec::new();
    for phase in Phase::ALL {
        phase.prepare(model);
        let before = others(model, phase);
        let trained_before: Vec<_> = phase.trainable().iter().flat_map(|&s| model.stage_values(s)).collect();
        let report = match phase {
            Phase::Pretrain => pretrain_encoder(model, data, plan, &short(32)),
            Phase::Pose => train_pose_phase(model, data, plan, &short(32)),
            Phase::Classifier => train_classifier_phase(model, data, plan, &short(64)),
        }
        .unwrap();
        assert_eq!(others(model, phase), before, "{phase:?} touched a frozen stage");
        let trained_after: Vec<_> = phase.trainable().iter().flat_map(|&s| model.stage_values(s)).collect();
        assert_ne!(trained_after, trained_before, "{phase:?} did not train");
        reports.push(report);
    }
    reports
}

#[test]
fn phases_respect_freeze_contracts_and_are_deterministic() {
    let (mut model, data, plan) = tiny_setup();
    let first = run_all(&mut model, &data, &plan);
    for (r, batch) in first.iter().zip([32, 32, 64]) {
        assert_eq!(r.epochs.len(), 3);
        assert!(r.epochs.iter().all(|e| e.batch_size == batch));
        let lrs: Vec<f64> = r.epochs.iter().map(|e| e.lr).collect();
        assert_eq!(lrs[0], 0.001);
        assert!((lrs[1] - 0.0001).abs() < 1e-18 && lrs[1] == lrs[2]);
        assert_eq!(r.to_csv().lines().count(), 4);
        assert!(r.epochs.windows(2).all(|w| w[1].global_step > w[0].global_step));
    }
    assert_eq!(first[0].metric, "mpjpe_mm");
    assert_eq!(first[2].metric, "accuracy");

    let (mut again, _, _) = tiny_setup();
    let second = run_all(&mut again, &data, &plan);
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.to_csv(), b.to_csv());
    }
}

#[test]
fn pretraining_beats_the_random_initialisation() {
    let (mut model, data, plan) = tiny_setup();
    Phase::Pretrain.prepare(&mut model);
    let opt = OptimConfig { epochs: 4, lr_drop_epoch: 3, ..Default::default() };
    let report = pretrain_encoder(&mut model, &data, &DataPlan { pretrain_stride: 5, ..plan }, &opt).unwrap();
    let first = report.epochs[0].val_metric;
    let mut fresh = Model::<f32>::new(ModelConfig::tiny()).unwrap();
    fresh.set_volume(&data.manifest.volume);
    let frames = frame_samples(&data, cgap2_core::synthdata::Split::Val, plan.val_frame_stride);
    let pred = estimate_poses(&fresh, &data, &frames, 64).unwrap();
    let target: Vec<f32> = frames.iter().flat_map(|&(s, t)| data.sequences[s].pose(t).to_vec()).collect();
    let target = Tensor::new(vec![frames.len(), 17, 3], target).unwrap();
    let untrained = cgap2_core::metrics::mpjpe(&pred, &target).unwrap();
    assert!(report.final_metric() < untrained, "{} vs untrained {untrained}", report.final_metric());
    assert!(report.final_metric() <= first * 1.05);
}

#[test]
fn phases_refuse_wrong_freeze_state() {
    let (mut model, data, plan) = tiny_setup();
    Phase::Pretrain.prepare(&mut model);
    let err = train_pose_phase(&mut model, &data, &plan, &short(32)).unwrap_err();
    assert!(matches!(err, Error::PhaseContract(_)), "{err}");
    model.set_trainable(&[Stage::Temporal, Stage::Encoder]);
    assert!(matches!(train_pose_phase(&mut model, &data, &plan, &short(32)), Err(Error::PhaseContract(_))));
    Phase::Pose.prepare(&mut model);
    assert!(matches!(train_classifier_phase(&mut model, &data, &plan, &short(64)), Err(Error::PhaseContract(_))));
    assert!(matches!(pretrain_encoder(&mut model, &data, &plan, &short(32)), Err(Error::PhaseContract(_))));
}

#[test]
fn empty_data_is_a_data_error() {
    let (mut model, data, plan) = tiny_setup();
    Phase::Pretrain.prepare(&mut model);
    let mut empty = data.clone();
    empty.sequences.clear();
    assert!(matches!(pretrain_encoder(&mut model, &empty, &plan, &short(32)), Err(Error::Data(_))));

    let (mut model, mut too_short, plan) = tiny_setup();
    for s in &mut too_short.sequences {
        s.length = 20;
    }
    Phase::Pose.prepare(&mut model);
    assert!(train_pose_phase(&mut model, &too_short, &plan, &short(32)).is_err());
}

#[test]
fn report_serialises_both_ways() {
    let r = TrainReport {
        phase: Phase::Pose,
        metric: "mpjpe_mm".into(),
        train_samples: 4,
        val_samples: 2,
        epochs: vec![EpochRecord {
            epoch: 0,
            global_step: 1,
            train_loss: 1.5,
            val_loss: 2.25,
            val_metric: 3.0,
            lr: 0.001,
            batch_size: 32,
            seconds: 0.37,
        }],
        checkpoint: None,
    };
    assert_eq!(
        r.to_csv(),
        "epoch,global_step,train_loss,val_loss,val_metric,lr,batch_size\n0,1,1.500000,2.250000,3.000000,0.001,32\n"
    );
    let back: TrainReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn aligned_pose_windows_score_every_gap_on_the_same_frames() {
    let data = Dataset::generate(&DatasetConfig {
        num_classes: 3,
        sequences_per_class: 5,
        image_size: 16,
        length: 120,
        ..DatasetConfig::default()
    })
    .unwrap();
    let plan = DataPlan { pose_first_target: Some(3 * 20), ..DataPlan::default() };
    let targets = |gap: usize| -> Vec<(usize, usize)> {
        let model = Model::<f32>::new(ModelConfig { gap_g: gap, ..ModelConfig::tiny() }).unwrap();
        let pd = PoseData::build(&model, &data, cgap2_core::synthdata::Split::Val, &plan).unwrap();
        pd.windows.iter().map(|w| (w.sequence_id, w.target_indices[0])).collect()
    };
    let short = targets(2);
    assert_eq!(short.len(), 3 * plan.pose_windows_per_sequence);
    assert!(short.iter().all(|&(_, t)| t >= 60));
    assert_eq!(short, targets(20));
}
