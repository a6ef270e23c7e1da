use crate::error::{shape_err, Result, TensorError};
use crate::graph::{BackwardCtx, Var};
use crate::param::{ParamId, ParamStore};
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Per-channel batch normalization of `[N, C, ...]` (axis 1 is the channel
    /// axis). Training mode uses the biased batch variance.
    pub fn batchnorm3d(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        running: &mut RunningStats<T>,
        mode: NormMode,
        eps: T,
        momentum: T,
    ) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() < 2 {
            return shape_err(format!("batchnorm expects [N, C, ...], got {shape:?}"));
        }
        let c = shape[1];
        if gamma.shape() != [c] || beta.shape() != [c] || running.mean.len() != c || running.var.len() != c {
            return shape_err(format!("batchnorm affine/statistics do not match {c} channels"));
        }
        let n = shape[0];
        let inner: usize = shape[2..].iter().product();
        let m = n * inner;
        let idx = move |b: usize, ch: usize, i: usize| (b * c + ch) * inner + i;

        let (mean, inv_std) = {
            let x = self.graph.value(self);
            let x = x.data();
            match mode {
                NormMode::Train => {
                    if m < 2 {
                        return Err(TensorError::DegenerateStatistics(format!(
                            "training-mode batchnorm needs at least 2 values per channel, got {m}"
                        )));
                    }
                    let mf = T::lit(m as f64);
                    let mut mean = vec![T::zero(); c];
                    let mut var = vec![T::zero(); c];
                    for ch in 0..c {
                        let mut s = T::zero();
                        for b in 0..n {
                            for i in 0..inner {
                                s += x[idx(b, ch, i)];
                            }
                        }
                        let mu = s / mf;
                        let mut v = T::zero();
                        for b in 0..n {
                            for i in 0..inner {
                                let d = x[idx(b, ch, i)] - mu;
                                v += d * d;
                            }
                        }
                        mean[ch] = mu;
                        var[ch] = v / mf;
                    }
                    for ch in 0..c {
                        running.mean[ch] = (T::one() - momentum) * running.mean[ch] + momentum * mean[ch];
                        running.var[ch] = (T::one() - momentum) * running.var[ch] + momentum * var[ch];
                    }
                    let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect::<Vec<_>>();
                    (mean, inv_std)
                }
                NormMode::Eval => (
                    running.mean.clone(),
                    running.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
                ),
            }
        };

        let data = {
            let g = self.graph;
            let (x, ga, be) = (g.value(self), g.value(gamma), g.value(beta));
            let (x, ga, be) = (x.data(), ga.data(), be.data());
            let mut out = vec![T::zero(); x.len()];
            for b in 0..n {
                for ch in 0..c {
                    for i in 0..inner {
                        let k = idx(b, ch, i);
                        out[k] = ga[ch] * ((x[k] - mean[ch]) * inv_std[ch]) + be[ch];
                    }
                }
            }
            out
        };

        Ok(self.graph.push(
            Tensor::new(shape, data)?,
            vec![self.id, gamma.id, beta.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (x, ga, dy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let mut gx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                let mf = T::lit(m as f64);
                for ch in 0..c {
                    let mut sum_dy = T::zero();
                    let mut sum_dy_xhat = T::zero();
                    for b in 0..n {
                        for i in 0..inner {
                            let k = idx(b, ch, i);
                            let xhat = (x[k] - mean[ch]) * inv_std[ch];
                            sum_dy += dy[k];
                            sum_dy_xhat += dy[k] * xhat;
                        }
                    }
                    gg[ch] = sum_dy_xhat;
                    gb[ch] = sum_dy;
                    let Some(gx) = gx.as_mut() else { continue };
                    let scale = ga[ch] * inv_std[ch];
                    for b in 0..n {
                        for i in 0..inner {
                            let k = idx(b, ch, i);
                            gx[k] = match mode {
                                NormMode::Eval => dy[k] * scale,
                                NormMode::Train => {
                                    let xhat = (x[k] - mean[ch]) * inv_std[ch];
                                    scale * (dy[k] - sum_dy / mf - xhat * sum_dy_xhat / mf)
                                }
                            };
                        }
                    }
                }
                vec![gx, ctx.needs[1].then_some(gg), ctx.needs[2].then_some(gb)]
            }),
        ))
    }

    /// Batch norm whose running statistics live in a [`ParamStore`] as buffers.
    /// The training-mode update is recorded on the graph and committed by
    /// [`ParamStore::apply_buffer_updates`].
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm3d_tracked(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        store: &ParamStore<T>,
        running_mean: ParamId,
        running_var: ParamId,
        mode: NormMode,
        eps: T,
        momentum: T,
    ) -> Result<Var<'g, T>> {
        let mean_t = &store.get(running_mean).value;
        let var_t = &store.get(running_var).value;
        let mut stats = RunningStats {
            mean: mean_t.data().to_vec(),
            var: var_t.data().to_vec(),
        };
        let out = self.batchnorm3d(gamma, beta, &mut stats, mode, eps, momentum)?;
        if mode == NormMode::Train {
            let c = stats.mean.len();
            self.graph.record_buffer_update(running_mean, Tensor::new([c], stats.mean)?);
            self.graph.record_buffer_update(running_var, Tensor::new([c], stats.var)?);
        }
        Ok(out)
    }
}
