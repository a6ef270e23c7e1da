use crate::error::{shape_err, Result, TensorError};
use crate::graph::{BackwardCtx, Var};
use crate::{Scalar, Tensor};

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Pose L1 loss: per sample, the sum of absolute coordinate differences
    /// over all joints; averaged over the batch. Operands are `[N, J, 3]`.
    pub fn l1_pose_loss(self, target: Var<'g, T>) -> Result<Var<'g, T>> {
        let (ps, ts) = (self.shape(), target.shape());
        if ps.len() != 3 || ps[2] != 3 {
            return shape_err(format!("l1_pose_loss expects [N, J, 3] poses, got {ps:?}"));
        }
        if ps != ts {
            return shape_err(format!("l1_pose_loss: predicted {ps:?} vs target {ts:?}"));
        }
        let n = T::lit(ps[0].max(1) as f64);
        let total = {
            let (p, t) = (self.graph.value(self), self.graph.value(target));
            p.data()
                .iter()
                .zip(t.data())
                .fold(T::zero(), |a, (&x, &y)| a + (x - y).abs())
        };
        Ok(self.graph.push(
            Tensor::scalar(total / n),
            vec![self.id, target.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (p, t) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let scale = ctx.grad[0] / n;
                let gp: Vec<T> = p.iter().zip(t).map(|(&x, &y)| sign(x - y) * scale).collect();
                let gt = ctx.needs[1].then(|| gp.iter().map(|&v| -v).collect());
                vec![ctx.needs[0].then_some(gp), gt]
            }),
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`,
    /// computed with a max-subtracted log-sum-exp. `self` is `[N, K]`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return shape_err(format!(
                "softmax_cross_entropy: logits {shape:?} vs {} labels",
                labels.len()
            ));
        }
        let (n, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::Usage(format!("label {bad} out of range for {k} classes")));
        }
        let (loss, probs) = {
            let v = self.graph.value(self);
            let x = v.data();
            let mut probs = vec![T::zero(); n * k];
            let mut total = T::zero();
            for r in 0..n {
                let row = &x[r * k..(r + 1) * k];
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let z: T = row.iter().fold(T::zero(), |a, &v| a + (v - mx).exp());
                for (p, &v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                    *p = (v - mx).exp() / z;
                }
                total += mx + z.ln() - row[labels[r]];
            }
            (total / T::lit(n.max(1) as f64), probs)
        };
        let labels = labels.to_vec();
        Ok(self.graph.push(
            Tensor::scalar(loss),
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let scale = ctx.grad[0] / T::lit(n.max(1) as f64);
                let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    g[r * k + l] -= scale;
                }
                vec![Some(g)]
            }),
        ))
    }
}
