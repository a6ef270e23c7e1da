use crate::error::{shape_err, Result};
use crate::graph::{BackwardCtx, Var};
use crate::tensor::strides;
use crate::{Scalar, Tensor};

fn same_shape<T: Scalar>(op: &str, a: Var<'_, T>, b: Var<'_, T>) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return shape_err(format!("{op}: shapes {sa:?} and {sb:?} differ"));
    }
    Ok(sa)
}

fn check_same_graph<T: Scalar>(a: Var<'_, T>, b: Var<'_, T>) {
    assert!(
        std::ptr::eq(a.graph, b.graph),
        "operands belong to different graphs"
    );
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        check_same_graph(self, other);
        let shape = same_shape("add", self, other)?;
        let data: Vec<T> = {
            let (a, b) = (self.graph.value(self), self.graph.value(other));
            a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect()
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.graph.push(
            out,
            vec![self.id, other.id],
            Box::new(|ctx: &BackwardCtx<'_, T>| {
                ctx.needs.iter().map(|&n| n.then(|| ctx.grad.to_vec())).collect()
            }),
        ))
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        check_same_graph(self, other);
        let shape = same_shape("mul", self, other)?;
        let data: Vec<T> = {
            let (a, b) = (self.graph.value(self), self.graph.value(other));
            a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect()
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.graph.push(
            out,
            vec![self.id, other.id],
            Box::new(|ctx: &BackwardCtx<'_, T>| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let times = |v: &[T]| ctx.grad.iter().zip(v).map(|(&g, &x)| g * x).collect();
                vec![ctx.needs[0].then(|| times(b)), ctx.needs[1].then(|| times(a))]
            }),
        ))
    }

    pub fn scale(self, factor: T) -> Var<'g, T> {
        let out = {
            let v = self.graph.value(self);
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x * factor).collect())
                .expect("same shape")
        };
        self.graph.push(
            out,
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                vec![Some(ctx.grad.iter().map(|&g| g * factor).collect())]
            }),
        )
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(self) -> Var<'g, T> {
        let out = {
            let v = self.graph.value(self);
            let data = v
                .data()
                .iter()
                .map(|&x| if x > T::zero() { x } else { T::zero() })
                .collect();
            Tensor::new(v.shape().to_vec(), data).expect("same shape")
        };
        self.graph.push(
            out,
            vec![self.id],
            Box::new(|ctx: &BackwardCtx<'_, T>| {
                let x = ctx.inputs[0].data();
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sum(self) -> Var<'g, T> {
        let total = self
            .graph
            .value(self)
            .data()
            .iter()
            .fold(T::zero(), |a, &b| a + b);
        self.graph.push(
            Tensor::scalar(total),
            vec![self.id],
            Box::new(|ctx: &BackwardCtx<'_, T>| vec![Some(vec![ctx.grad[0]; ctx.inputs[0].numel()])]),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.graph.value(self).numel().max(1);
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let out = self.to_tensor().reshape(shape.to_vec())?;
        Ok(self.graph.push(
            out,
            vec![self.id],
            Box::new(|ctx: &BackwardCtx<'_, T>| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return shape_err(format!("permute: {axes:?} is not a permutation of rank {}", shape.len()));
        }
        let (data, out_shape) = permute_data(self.graph.value(self).data(), &shape, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.graph.push(
            Tensor::new(out_shape.clone(), data)?,
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                vec![Some(permute_data(ctx.grad, &out_shape, &inverse).0)]
            }),
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return shape_err(format!("narrow: range {start}..{} outside axis {axis} of {shape:?}", start + len));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let data = {
            let v = self.graph.value(self);
            let src = v.data();
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                out.extend_from_slice(&src[base..base + len * inner]);
            }
            out
        };
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.graph.push(
            Tensor::new(out_shape, data)?,
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); outer * dim * inner];
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    g[base..base + len * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn concat(self, other: Var<'g, T>, axis: usize) -> Result<Var<'g, T>> {
        concat(self, other, axis)
    }

    /// Per-component affine map on the last axis:
    /// `out[.., i] = scale[i] * x[.., source[i]] + offset[i]`.
    pub fn affine_last(self, scale: &[T], offset: &[T], source: &[usize]) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let Some(&last) = shape.last() else {
            return shape_err("affine_last on a rank-0 tensor");
        };
        if scale.len() != offset.len() || scale.len() != source.len() || source.iter().any(|&s| s >= last) {
            return shape_err("affine_last: inconsistent scale/offset/source");
        }
        let k = scale.len();
        let rows = self.graph.value(self).numel() / last.max(1);
        let data = {
            let v = self.graph.value(self);
            let x = v.data();
            let mut out = Vec::with_capacity(rows * k);
            for r in 0..rows {
                for i in 0..k {
                    out.push(scale[i] * x[r * last + source[i]] + offset[i]);
                }
            }
            out
        };
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = k;
        let (scale, source) = (scale.to_vec(), source.to_vec());
        Ok(self.graph.push(
            Tensor::new(out_shape, data)?,
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); rows * last];
                for r in 0..rows {
                    for i in 0..k {
                        g[r * last + source[i]] += scale[i] * ctx.grad[r * k + i];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

/// Concatenates along `axis`. Shapes must agree on every other axis.
pub fn concat<'g, T: Scalar>(a: Var<'g, T>, b: Var<'g, T>, axis: usize) -> Result<Var<'g, T>> {
    check_same_graph(a, b);
    let (sa, sb) = (a.shape(), b.shape());
    let compatible = sa.len() == sb.len()
        && axis < sa.len()
        && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
    if !compatible {
        return shape_err(format!("concat on axis {axis}: incompatible shapes {sa:?} and {sb:?}"));
    }
    let outer: usize = sa[..axis].iter().product();
    let inner: usize = sa[axis + 1..].iter().product();
    let (la, lb) = (sa[axis] * inner, sb[axis] * inner);
    let data = {
        let (va, vb) = (a.graph.value(a), a.graph.value(b));
        let mut out = Vec::with_capacity(outer * (la + lb));
        for o in 0..outer {
            out.extend_from_slice(&va.data()[o * la..(o + 1) * la]);
            out.extend_from_slice(&vb.data()[o * lb..(o + 1) * lb]);
        }
        out
    };
    let mut shape = sa.clone();
    shape[axis] += sb[axis];
    Ok(a.graph.push(
        Tensor::new(shape, data)?,
        vec![a.id, b.id],
        Box::new(move |ctx: &BackwardCtx<'_, T>| {
            let split = |start: usize, len: usize| {
                let mut g = Vec::with_capacity(outer * len);
                for o in 0..outer {
                    let base = o * (la + lb) + start;
                    g.extend_from_slice(&ctx.grad[base..base + len]);
                }
                g
            };
            vec![ctx.needs[0].then(|| split(0, la)), ctx.needs[1].then(|| split(la, lb))]
        }),
    ))
}

pub(crate) fn permute_data<T: Scalar>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let walk: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return (out, out_shape);
    }
    let rank = shape.len();
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += walk[d];
            if counter[d] < out_shape[d] {
                break;
            }
            offset -= walk[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    (out, out_shape)
}
