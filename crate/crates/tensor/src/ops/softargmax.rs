use crate::error::{shape_err, Result};
use crate::graph::{BackwardCtx, Var};
use crate::{Scalar, Tensor};

impl<'g, T: Scalar> Var<'g, T> {
    /// Differentiable argmax of `[N, J, D, H, W]` heatmaps: the expected voxel
    /// coordinate `(d, h, w)` under a per-joint softmax over the volume.
    /// Output is `[N, J, 3]` in voxel units.
    pub fn soft_argmax3d(self) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 5 {
            return shape_err(format!("soft_argmax3d expects [N, J, D, H, W], got {shape:?}"));
        }
        let [d, h, w] = [shape[2], shape[3], shape[4]];
        let vol = d * h * w;
        let maps = shape[0] * shape[1];
        let coord = move |v: usize| -> [T; 3] {
            [
                T::lit((v / (h * w)) as f64),
                T::lit((v / w % h) as f64),
                T::lit((v % w) as f64),
            ]
        };
        let softmax = move |logits: &[T], probs: &mut [T]| {
            let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &l) in probs.iter_mut().zip(logits) {
                *p = (l - mx).exp();
                z += *p;
            }
            probs.iter_mut().for_each(|p| *p = *p / z);
        };
        let data = {
            let v = self.graph.value(self);
            let x = v.data();
            let mut probs = vec![T::zero(); vol];
            let mut out = Vec::with_capacity(maps * 3);
            for m in 0..maps {
                softmax(&x[m * vol..(m + 1) * vol], &mut probs);
                let mut e = [T::zero(); 3];
                for (i, &p) in probs.iter().enumerate() {
                    let c = coord(i);
                    for a in 0..3 {
                        e[a] += p * c[a];
                    }
                }
                out.extend_from_slice(&e);
            }
            out
        };
        Ok(self.graph.push(
            Tensor::new(vec![shape[0], shape[1], 3], data)?,
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (x, e) = (ctx.inputs[0].data(), ctx.output.data());
                let mut gx = vec![T::zero(); x.len()];
                let mut probs = vec![T::zero(); vol];
                for m in 0..maps {
                    let go = &ctx.grad[m * 3..m * 3 + 3];
                    if go.iter().all(|&g| g == T::zero()) {
                        continue;
                    }
                    softmax(&x[m * vol..(m + 1) * vol], &mut probs);
                    let em = &e[m * 3..m * 3 + 3];
                    for (i, g) in gx[m * vol..(m + 1) * vol].iter_mut().enumerate() {
                        let c = coord(i);
                        let dot = go[0] * (c[0] - em[0]) + go[1] * (c[1] - em[1]) + go[2] * (c[2] - em[2]);
                        *g = probs[i] * dot;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn spike_recovers_voxel() {
        let g = Graph::<f64>::new();
        let mut hm = Tensor::zeros([1, 1, 5, 8, 8]);
        hm.data_mut()[(2 * 8 + 3) * 8 + 4] = 1e4;
        let c = g.constant(hm).soft_argmax3d().unwrap().data();
        for (got, want) in c.iter().zip([2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-3);
        }
    }

    #[test]
    fn uniform_gives_center() {
        let g = Graph::<f64>::new();
        let c = g.constant(Tensor::zeros([2, 3, 5, 8, 6])).soft_argmax3d().unwrap().data();
        for j in 0..6 {
            assert!((c[j * 3] - 2.0).abs() < 1e-12);
            assert!((c[j * 3 + 1] - 3.5).abs() < 1e-12);
            assert!((c[j * 3 + 2] - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_equal_spikes_average() {
        let g = Graph::<f64>::new();
        let mut hm = Tensor::full([1, 1, 5, 5, 5], -1e4);
        hm.data_mut()[0] = 0.0;
        hm.data_mut()[124] = 0.0;
        let c = g.constant(hm).soft_argmax3d().unwrap().data();
        for v in c {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }
}
