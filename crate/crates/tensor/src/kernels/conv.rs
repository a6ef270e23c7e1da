//! 3D cross-correlation over `[N, C, D, H, W]` tensors.
//!
//! Each output element is accumulated from zero in `(c_in, kd, kh, kw)` order
//! and the bias is added last. The im2col + row-GEMM formulation below keeps
//! that order, so results agree bit-for-bit with a direct seven-loop
//! implementation.

use std::borrow::Cow;

use crate::error::{shape_err, Result};
use crate::exec;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    pub fn new(
        input_shape: &[usize],
        weight_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if input_shape.len() != 5 || weight_shape.len() != 5 {
            return shape_err(format!(
                "conv3d expects rank-5 input and weight, got {input_shape:?} and {weight_shape:?}"
            ));
        }
        if input_shape[1] != weight_shape[1] {
            return shape_err(format!(
                "conv3d input has {} channels but weight expects {}",
                input_shape[1], weight_shape[1]
            ));
        }
        if stride.iter().any(|&s| s == 0) {
            return shape_err("conv3d stride components must be >= 1");
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input_shape[2 + a] + 2 * padding[a];
            let k = weight_shape[2 + a];
            if k == 0 || k > padded {
                return shape_err(format!(
                    "conv3d kernel {:?} does not fit padded input {:?}",
                    &weight_shape[2..],
                    &input_shape[2..]
                ));
            }
            output[a] = (padded - k) / stride[a] + 1;
        }
        Ok(Self {
            batch: input_shape[0],
            in_channels: input_shape[1],
            out_channels: weight_shape[0],
            input: [input_shape[2], input_shape[3], input_shape[4]],
            kernel: [weight_shape[2], weight_shape[3], weight_shape[4]],
            stride,
            padding,
            output,
        })
    }

    pub fn output_shape(&self) -> [usize; 5] {
        let [d, h, w] = self.output;
        [self.batch, self.out_channels, d, h, w]
    }

    /// Rows of the unfolded input: `c_in * kd * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    pub fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    /// Multiply-accumulates of one forward pass.
    pub fn macs(&self) -> usize {
        self.batch * self.out_channels * self.out_plane() * self.patch_len()
    }
}

/// Visits every (patch row, output position) pair with the matching input
/// offset, or `None` where the tap falls into the zero padding.
#[inline]
fn for_each_tap(geo: &ConvGeometry, mut f: impl FnMut(usize, usize, Option<usize>)) {
    let [id, ih, iw] = geo.input;
    let [kd, kh, kw] = geo.kernel;
    let [od, oh, ow] = geo.output;
    let [sd, sh, sw] = geo.stride;
    let [pd, ph, pw] = geo.padding;
    let mut row = 0;
    for c in 0..geo.in_channels {
        let cbase = c * id * ih * iw;
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let mut p = 0;
                    for z in 0..od {
                        let iz = (z * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            for x in 0..ow {
                                let ix = (x * sw + e) as isize - pw as isize;
                                let inside = iz >= 0
                                    && (iz as usize) < id
                                    && iy >= 0
                                    && (iy as usize) < ih
                                    && ix >= 0
                                    && (ix as usize) < iw;
                                let off = inside.then(|| {
                                    cbase + (iz as usize * ih + iy as usize) * iw + ix as usize
                                });
                                f(row, p, off);
                                p += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Unfolds one sample into `[patch_len, out_plane]`.
fn im2col<T: Scalar>(geo: &ConvGeometry, x: &[T]) -> Vec<T> {
    let plane = geo.out_plane();
    let mut col = vec![T::zero(); geo.patch_len() * plane];
    for_each_tap(geo, |r, p, off| {
        if let Some(o) = off {
            col[r * plane + p] = x[o];
        }
    });
    col
}

/// Transposed unfold, `[out_plane, patch_len]`.
fn im2col_t<T: Scalar>(geo: &ConvGeometry, x: &[T]) -> Vec<T> {
    let rows = geo.patch_len();
    let mut col = vec![T::zero(); rows * geo.out_plane()];
    for_each_tap(geo, |r, p, off| {
        if let Some(o) = off {
            col[p * rows + r] = x[o];
        }
    });
    col
}

fn col2im_add<T: Scalar>(geo: &ConvGeometry, col: &[T], gx: &mut [T]) {
    let plane = geo.out_plane();
    for_each_tap(geo, |r, p, off| {
        if let Some(o) = off {
            gx[o] += col[r * plane + p];
        }
    });
}

/// Forward pass. `x` is `[N, C_in, D, H, W]`, `w` is `[C_out, C_in, kD, kH, kW]`.
pub fn conv3d_forward<T: Scalar>(geo: &ConvGeometry, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let plane = geo.out_plane();
    let rows = geo.patch_len();
    let in_len = geo.in_channels * geo.in_plane();
    let mut out = vec![T::zero(); geo.batch * geo.out_channels * plane];
    exec::for_each_chunk(&mut out, geo.out_channels * plane, |n, out_n| {
        let x_n = &x[n * in_len..(n + 1) * in_len];
        let col: Cow<'_, [T]> = if geo.is_pointwise() {
            Cow::Borrowed(x_n)
        } else {
            Cow::Owned(im2col(geo, x_n))
        };
        for (co, orow) in out_n.chunks_mut(plane).enumerate() {
            let wrow = &w[co * rows..(co + 1) * rows];
            for (r, &wv) in wrow.iter().enumerate() {
                let crow = &col[r * plane..(r + 1) * plane];
                for (o, &c) in orow.iter_mut().zip(crow) {
                    *o += wv * c;
                }
            }
            let b = bias[co];
            orow.iter_mut().for_each(|o| *o = *o + b);
        }
    });
    out
}

#[derive(Debug, Default)]
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Backward pass; only the requested gradients are computed. Batch
/// reductions sum per-sample partials in sample order.
pub fn conv3d_backward<T: Scalar>(
    geo: &ConvGeometry,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let [need_input, need_weight, need_bias] = need;
    let plane = geo.out_plane();
    let rows = geo.patch_len();
    let in_len = geo.in_channels * geo.in_plane();
    let out_len = geo.out_channels * plane;
    let mut grads = ConvGrads::default();

    if need_bias {
        let mut gb = vec![T::zero(); geo.out_channels];
        for g_n in grad_out.chunks(out_len) {
            for (co, grow) in g_n.chunks(plane).enumerate() {
                let s: T = grow.iter().fold(T::zero(), |a, &v| a + v);
                gb[co] += s;
            }
        }
        grads.bias = Some(gb);
    }

    if need_weight {
        let partials = exec::map_indices(geo.batch, |n| {
            let x_n = &x[n * in_len..(n + 1) * in_len];
            let g_n = &grad_out[n * out_len..(n + 1) * out_len];
            let col_t = im2col_t(geo, x_n);
            let mut gw = vec![T::zero(); geo.out_channels * rows];
            for (co, gw_row) in gw.chunks_mut(rows).enumerate() {
                for (p, &g) in g_n[co * plane..(co + 1) * plane].iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    let crow = &col_t[p * rows..(p + 1) * rows];
                    for (a, &c) in gw_row.iter_mut().zip(crow) {
                        *a += g * c;
                    }
                }
            }
            gw
        });
        let mut gw = vec![T::zero(); geo.out_channels * rows];
        for part in &partials {
            gw.iter_mut().zip(part).for_each(|(a, &b)| *a += b);
        }
        grads.weight = Some(gw);
    }

    if need_input {
        let mut gx = vec![T::zero(); geo.batch * in_len];
        exec::for_each_chunk(&mut gx, in_len, |n, gx_n| {
            let g_n = &grad_out[n * out_len..(n + 1) * out_len];
            if geo.is_pointwise() {
                transpose_weight_times_grad(w, g_n, geo.out_channels, rows, plane, gx_n);
            } else {
                let mut gcol = vec![T::zero(); rows * plane];
                transpose_weight_times_grad(w, g_n, geo.out_channels, rows, plane, &mut gcol);
                col2im_add(geo, &gcol, gx_n);
            }
        });
        grads.input = Some(gx);
    }
    grads
}

/// `target[r, p] += sum_co w[co, r] * g[co, p]`, accumulated in `co` order.
fn transpose_weight_times_grad<T: Scalar>(
    w: &[T],
    g: &[T],
    out_channels: usize,
    rows: usize,
    plane: usize,
    target: &mut [T],
) {
    for (r, trow) in target.chunks_mut(plane).enumerate() {
        for co in 0..out_channels {
            let wv = w[co * rows + r];
            if wv == T::zero() {
                continue;
            }
            let grow = &g[co * plane..(co + 1) * plane];
            for (t, &gv) in trow.iter_mut().zip(grow) {
                *t += wv * gv;
            }
        }
    }
}
