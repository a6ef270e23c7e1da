use crate::error::{shape_err, Result};
use crate::graph::{BackwardCtx, Var};
use crate::kernels::{conv3d_backward, conv3d_forward, ConvGeometry};
use crate::{Scalar, Tensor};

fn check_bias(bias: &[usize], out_channels: usize) -> Result<()> {
    if bias != [out_channels] {
        return shape_err(format!("bias shape {bias:?} does not match {out_channels} output channels"));
    }
    Ok(())
}

fn conv_node<'g, T: Scalar>(
    input: Var<'g, T>,
    weight: Var<'g, T>,
    bias: Var<'g, T>,
    geo: ConvGeometry,
    out_shape: Vec<usize>,
) -> Result<Var<'g, T>> {
    let data = {
        let g = input.graph;
        let (x, w, b) = (g.value(input), g.value(weight), g.value(bias));
        conv3d_forward(&geo, x.data(), w.data(), b.data())
    };
    Ok(input.graph.push(
        Tensor::new(out_shape, data)?,
        vec![input.id, weight.id, bias.id],
        Box::new(move |ctx: &BackwardCtx<'_, T>| {
            let need = [ctx.needs[0], ctx.needs[1], ctx.needs[2]];
            let gr = conv3d_backward(&geo, ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad, need);
            vec![gr.input, gr.weight, gr.bias]
        }),
    ))
}

impl<'g, T: Scalar> Var<'g, T> {
    /// 3D cross-correlation. `self` is `[N, C_in, D, H, W]`, `weight` is
    /// `[C_out, C_in, kD, kH, kW]`, `bias` is `[C_out]`.
    pub fn conv3d(
        self,
        weight: Var<'g, T>,
        bias: Var<'g, T>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var<'g, T>> {
        let geo = ConvGeometry::new(&self.shape(), &weight.shape(), stride, padding)?;
        check_bias(&bias.shape(), geo.out_channels)?;
        let out_shape = geo.output_shape().to_vec();
        conv_node(self, weight, bias, geo, out_shape)
    }

    /// 2D cross-correlation over `[N, C_in, H, W]`; runs the 3D kernel with a
    /// unit depth axis.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Var<'g, T>,
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Result<Var<'g, T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(format!("conv2d expects rank-4 input and weight, got {xs:?} and {ws:?}"));
        }
        let geo = ConvGeometry::new(
            &[xs[0], xs[1], 1, xs[2], xs[3]],
            &[ws[0], ws[1], 1, ws[2], ws[3]],
            [1, stride[0], stride[1]],
            [0, padding[0], padding[1]],
        )?;
        check_bias(&bias.shape(), geo.out_channels)?;
        let [n, c, _, h, w] = geo.output_shape();
        conv_node(self, weight, bias, geo, vec![n, c, h, w])
    }

    /// Nearest-neighbour upsampling of the last three axes of `[N, C, D, H, W]`.
    pub fn upsample_nearest3d(self, factor: [usize; 3]) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 5 || factor.iter().any(|&f| f == 0) {
            return shape_err(format!("upsample_nearest3d: bad input {shape:?} or factor {factor:?}"));
        }
        let [d, h, w] = [shape[2], shape[3], shape[4]];
        let [fd, fh, fw] = factor;
        let (od, oh, ow) = (d * fd, h * fh, w * fw);
        let planes = shape[0] * shape[1];
        let data = {
            let v = self.graph.value(self);
            let x = v.data();
            let mut out = Vec::with_capacity(planes * od * oh * ow);
            for p in 0..planes {
                let base = p * d * h * w;
                for z in 0..od {
                    for y in 0..oh {
                        let row = base + ((z / fd) * h + y / fh) * w;
                        out.extend((0..ow).map(|xo| x[row + xo / fw]));
                    }
                }
            }
            out
        };
        let out_shape = vec![shape[0], shape[1], od, oh, ow];
        Ok(self.graph.push(
            Tensor::new(out_shape, data)?,
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut gx = vec![T::zero(); planes * d * h * w];
                let mut i = 0;
                for p in 0..planes {
                    let base = p * d * h * w;
                    for z in 0..od {
                        for y in 0..oh {
                            let row = base + ((z / fd) * h + y / fh) * w;
                            for xo in 0..ow {
                                gx[row + xo / fw] += ctx.grad[i];
                                i += 1;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Affine map `[N, F_in] -> [N, F_out]` with `weight` `[F_out, F_in]`.
    pub fn linear(self, weight: Var<'g, T>, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(format!("linear: input {xs:?} incompatible with weight {ws:?}"));
        }
        check_bias(&bias.shape(), ws[0])?;
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let data = {
            let g = self.graph;
            let (x, w, b) = (g.value(self), g.value(weight), g.value(bias));
            let (x, w, b) = (x.data(), w.data(), b.data());
            let mut out = Vec::with_capacity(n * fout);
            for r in 0..n {
                let xr = &x[r * fin..(r + 1) * fin];
                for o in 0..fout {
                    let wr = &w[o * fin..(o + 1) * fin];
                    let acc = xr.iter().zip(wr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    out.push(acc + b[o]);
                }
            }
            out
        };
        Ok(self.graph.push(
            Tensor::new(vec![n, fout], data)?,
            vec![self.id, weight.id, bias.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (x, w, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![T::zero(); n * fin];
                    for r in 0..n {
                        let row = &mut gx[r * fin..(r + 1) * fin];
                        for o in 0..fout {
                            let gv = g[r * fout + o];
                            if gv == T::zero() {
                                continue;
                            }
                            for (a, &wv) in row.iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                                *a += gv * wv;
                            }
                        }
                    }
                    gx
                });
                let gw = ctx.needs[1].then(|| {
                    let mut gw = vec![T::zero(); fout * fin];
                    for r in 0..n {
                        let xr = &x[r * fin..(r + 1) * fin];
                        for o in 0..fout {
                            let gv = g[r * fout + o];
                            if gv == T::zero() {
                                continue;
                            }
                            for (a, &xv) in gw[o * fin..(o + 1) * fin].iter_mut().zip(xr) {
                                *a += gv * xv;
                            }
                        }
                    }
                    gw
                });
                let gb = ctx.needs[2].then(|| {
                    let mut gb = vec![T::zero(); fout];
                    for r in 0..n {
                        for o in 0..fout {
                            gb[o] += g[r * fout + o];
                        }
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        ))
    }
}
