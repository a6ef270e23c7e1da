use crate::error::{shape_err, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl PoolGeometry {
    pub fn new(input_shape: &[usize], window: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        if input_shape.len() != 5 {
            return shape_err(format!("maxpool3d expects rank-5 input, got {input_shape:?}"));
        }
        if stride.iter().chain(&window).any(|&s| s == 0) {
            return shape_err("maxpool3d window and stride must be >= 1");
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let len = input_shape[2 + a];
            if window[a] > len {
                return shape_err(format!(
                    "maxpool3d window {window:?} larger than input {:?}",
                    &input_shape[2..]
                ));
            }
            output[a] = (len - window[a]) / stride[a] + 1;
        }
        Ok(Self {
            batch: input_shape[0],
            channels: input_shape[1],
            input: [input_shape[2], input_shape[3], input_shape[4]],
            window,
            stride,
            output,
        })
    }

    pub fn output_shape(&self) -> [usize; 5] {
        let [d, h, w] = self.output;
        [self.batch, self.channels, d, h, w]
    }
}

/// Windowed maximum. Returns the output and, for each output voxel, the flat
/// input index of its maximum (first occurrence in row-major scan order).
pub fn maxpool3d_forward<T: Scalar>(geo: &PoolGeometry, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let [id, ih, iw] = geo.input;
    let [od, oh, ow] = geo.output;
    let [kd, kh, kw] = geo.window;
    let [sd, sh, sw] = geo.stride;
    let n_out = geo.batch * geo.channels * od * oh * ow;
    let mut out = Vec::with_capacity(n_out);
    let mut arg = Vec::with_capacity(n_out);
    for nc in 0..geo.batch * geo.channels {
        let base = nc * id * ih * iw;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for a in 0..kd {
                        for b in 0..kh {
                            for c in 0..kw {
                                let i = base
                                    + ((z * sd + a) * ih + (y * sh + b)) * iw
                                    + (xo * sw + c);
                                // Strict comparison keeps the first maximum.
                                if best_i == usize::MAX || x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (out, arg)
}
