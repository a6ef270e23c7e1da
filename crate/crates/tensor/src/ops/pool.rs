use crate::error::Result;
use crate::graph::{BackwardCtx, Var};
use crate::kernels::{maxpool3d_forward, PoolGeometry};
use crate::{Scalar, Tensor};

impl<'g, T: Scalar> Var<'g, T> {
    /// Max pooling over `[N, C, D, H, W]` without padding. The gradient goes
    /// to the first maximal voxel of each window in row-major order.
    pub fn maxpool3d(self, window: [usize; 3], stride: [usize; 3]) -> Result<Var<'g, T>> {
        let geo = PoolGeometry::new(&self.shape(), window, stride)?;
        let (data, argmax) = maxpool3d_forward(&geo, self.graph.value(self).data());
        Ok(self.graph.push(
            Tensor::new(geo.output_shape().to_vec(), data)?,
            vec![self.id],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut gx = vec![T::zero(); ctx.inputs[0].numel()];
                for (&i, &g) in argmax.iter().zip(ctx.grad) {
                    gx[i] += g;
                }
                vec![Some(gx)]
            }),
        ))
    }
}
