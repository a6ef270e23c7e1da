//! Gradient-check cases for every differentiable op, shared between the
//! crate's own tests and the workspace acceptance run.

use cgap2_tensor::{concat, Graph, NormMode, Result, RunningStats, Tensor, Var};

pub type CaseFn = Box<dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>>;

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

/// Deterministic values in roughly [-1, 1] kept at least `margin` away from 0.
pub fn values(shape: &[usize], salt: f64, margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| {
        let v = ((i as f64 + 1.0) * 0.7371 + salt).sin();
        if v.abs() < margin {
            v.signum() * margin + v
        } else {
            v
        }
    })
}

/// Distinct values spaced 0.25 apart in a scrambled order (no max-pool ties).
pub fn distinct(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_fn(shape.to_vec(), |i| ((i * 7919 + 13) % (n * 3 + 1)) as f64 * 0.25 - n as f64 * 0.3)
}

fn param(t: Tensor<f64>) -> Tensor<f64> {
    t.with_requires_grad(true)
}

/// Scalar projection `sum(y * r)` with fixed weights, so every output
/// element contributes a different gradient.
pub fn project<'g>(y: Var<'g, f64>) -> Result<Var<'g, f64>> {
    let r = y.graph().constant(values(&y.shape(), 0.3, 0.0));
    Ok(y.mul(r)?.sum())
}

pub fn cases() -> Vec<GradCase> {
    let mut v: Vec<GradCase> = Vec::new();
    let mut add = |name, inputs, f: CaseFn| v.push(GradCase { name, inputs, f });

    add("add", vec![param(values(&[2, 3], 0.1, 0.0)), param(values(&[2, 3], 0.9, 0.0))], Box::new(|_, x| project(x[0].add(x[1])?)));
    add("mul", vec![param(values(&[2, 3], 0.1, 0.0)), param(values(&[2, 3], 0.9, 0.0))], Box::new(|_, x| project(x[0].mul(x[1])?)));
    add("scale", vec![param(values(&[4], 0.2, 0.0))], Box::new(|_, x| project(x[0].scale(-1.7))));
    add("relu", vec![param(values(&[3, 4], 0.4, 0.1))], Box::new(|_, x| project(x[0].relu())));
    add("sum", vec![param(values(&[5], 0.5, 0.0))], Box::new(|_, x| Ok(x[0].mul(x[0])?.sum())));
    add("mean", vec![param(values(&[2, 5], 0.6, 0.0))], Box::new(|_, x| Ok(x[0].mul(x[0])?.mean())));
    add("reshape", vec![param(values(&[2, 6], 0.7, 0.0))], Box::new(|_, x| project(x[0].reshape(&[3, 4])?)));
    add("permute", vec![param(values(&[2, 3, 4], 0.8, 0.0))], Box::new(|_, x| project(x[0].permute(&[2, 0, 1])?)));
    add("narrow", vec![param(values(&[2, 5, 3], 0.9, 0.0))], Box::new(|_, x| project(x[0].narrow(1, 1, 3)?)));
    add(
        "concat",
        vec![param(values(&[1, 2, 4, 4], 1.0, 0.0)), param(values(&[1, 3, 4, 4], 1.1, 0.0))],
        Box::new(|_, x| project(concat(x[0], x[1], 1)?)),
    );
    add(
        "affine_last",
        vec![param(values(&[2, 4, 3], 1.2, 0.0))],
        Box::new(|_, x| project(x[0].affine_last(&[2.0, -0.5, 3.0], &[10.0, 0.0, -4.0], &[2, 0, 1])?)),
    );
    add(
        "conv3d",
        vec![param(values(&[2, 2, 3, 4, 4], 1.3, 0.0)), param(values(&[3, 2, 3, 3, 3], 1.4, 0.0)), param(values(&[3], 1.5, 0.0))],
        Box::new(|_, x| project(x[0].conv3d(x[1], x[2], [1, 1, 1], [1, 1, 1])?)),
    );
    add(
        "conv3d_strided",
        vec![param(values(&[1, 2, 4, 5, 5], 1.6, 0.0)), param(values(&[2, 2, 2, 3, 3], 1.7, 0.0)), param(values(&[2], 1.8, 0.0))],
        Box::new(|_, x| project(x[0].conv3d(x[1], x[2], [2, 2, 2], [0, 1, 1])?)),
    );
    add(
        "conv3d_pointwise",
        vec![param(values(&[2, 3, 2, 3, 3], 1.9, 0.0)), param(values(&[2, 3, 1, 1, 1], 2.0, 0.0)), param(values(&[2], 2.1, 0.0))],
        Box::new(|_, x| project(x[0].conv3d(x[1], x[2], [1, 1, 1], [0, 0, 0])?)),
    );
    add(
        "conv2d",
        vec![param(values(&[2, 2, 5, 5], 2.2, 0.0)), param(values(&[3, 2, 3, 3], 2.3, 0.0)), param(values(&[3], 2.4, 0.0))],
        Box::new(|_, x| project(x[0].conv2d(x[1], x[2], [2, 2], [1, 1])?)),
    );
    add(
        "upsample_nearest3d",
        vec![param(values(&[1, 2, 2, 2, 3], 2.5, 0.0))],
        Box::new(|_, x| project(x[0].upsample_nearest3d([1, 2, 2])?)),
    );
    add(
        "linear",
        vec![param(values(&[3, 4], 2.6, 0.0)), param(values(&[2, 4], 2.7, 0.0)), param(values(&[2], 2.8, 0.0))],
        Box::new(|_, x| project(x[0].linear(x[1], x[2])?)),
    );
    add("maxpool3d", vec![param(distinct(&[1, 2, 2, 4, 4]))], Box::new(|_, x| project(x[0].maxpool3d([1, 2, 2], [1, 2, 2])?)));
    add(
        "batchnorm3d_train",
        vec![param(values(&[2, 3, 2, 2, 2], 2.9, 0.0)), param(values(&[3], 3.0, 0.3)), param(values(&[3], 3.1, 0.0))],
        Box::new(|_, x| {
            let mut stats = RunningStats::new(3);
            project(x[0].batchnorm3d(x[1], x[2], &mut stats, NormMode::Train, 1e-5, 0.1)?)
        }),
    );
    add(
        "batchnorm3d_eval",
        vec![param(values(&[2, 3, 1, 2, 2], 3.2, 0.0)), param(values(&[3], 3.3, 0.3)), param(values(&[3], 3.4, 0.0))],
        Box::new(|_, x| {
            let mut stats = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
            project(x[0].batchnorm3d(x[1], x[2], &mut stats, NormMode::Eval, 1e-5, 0.1)?)
        }),
    );
    add(
        "l1_pose_loss",
        vec![param(values(&[2, 17, 3], 3.5, 0.0)), param(values(&[2, 17, 3], 3.5, 0.0))],
        Box::new(|g, x| {
            // Targets sit at least 0.1 away from predictions in every coordinate.
            let shift = g.constant(values(&x[0].shape(), 4.0, 0.1));
            x[0].l1_pose_loss(x[1].add(shift)?)
        }),
    );
    add(
        "softmax_cross_entropy",
        vec![param(values(&[3, 5], 3.6, 0.0))],
        Box::new(|_, x| x[0].scale(3.0).softmax_cross_entropy(&[4, 0, 2])),
    );
    add(
        "soft_argmax3d",
        vec![param(values(&[1, 2, 3, 4, 4], 3.7, 0.0))],
        Box::new(|_, x| project(x[0].scale(2.0).soft_argmax3d()?)),
    );
    add(
        "conv3d_relu_linear_chain",
        vec![param(values(&[2, 1, 2, 4, 4], 3.8, 0.0)), param(values(&[2, 1, 2, 3, 3], 3.9, 0.0)), param(values(&[2], 4.0, 0.0)), param(values(&[3, 32], 4.1, 0.0)), param(values(&[3], 4.2, 0.0))],
        Box::new(|_, x| {
            let h = x[0].conv3d(x[1], x[2], [1, 1, 1], [0, 1, 1])?.relu();
            let flat = h.reshape(&[2, 32])?;
            flat.linear(x[3], x[4])?.softmax_cross_entropy(&[1, 2])
        }),
    );
    v
}
