use super::for_each_plane;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Flat in-plane argmax position for each pooled output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

/// 2×2 max pooling with stride 2. Ties resolve to the first window element in
/// row-major order.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let xs = x.shape();
    if xs.h % 2 != 0 || xs.w % 2 != 0 || xs.h == 0 || xs.w == 0 {
        return Err(Error::shape("maxpool2", format!("spatial dims of {xs} must be even and positive")));
    }
    let (ho, wo) = (xs.h / 2, xs.w / 2);
    let mut out = Tensor::zeros(xs.with_hw(ho, wo));
    let mut argmax = vec![0u32; out.len()];
    let xd = x.data();
    let plane_in = xs.plane();
    {
        let od = out.data_mut();
        for (plane, (o, a)) in od.chunks_mut(ho * wo).zip(argmax.chunks_mut(ho * wo)).enumerate() {
            let src = &xd[plane * plane_in..(plane + 1) * plane_in];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_i = (2 * oy) * xs.w + 2 * ox;
                    let mut best = src[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (2 * oy + dy) * xs.w + 2 * ox + dx;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                    o[oy * wo + ox] = best;
                    a[oy * wo + ox] = best_i as u32;
                }
            }
        }
    }
    Ok((out, PoolIndices { input_shape: xs, argmax }))
}

pub fn maxpool2_backward<T: Scalar>(idx: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = idx.input_shape;
    let expect = xs.with_hw(xs.h / 2, xs.w / 2);
    if grad_out.shape() != expect {
        return Err(Error::shape_pair("maxpool2_backward", expect, grad_out.shape()));
    }
    let mut gx = Tensor::zeros(xs);
    let po = expect.plane();
    let gd = grad_out.data();
    for_each_plane(gx.data_mut(), xs.plane(), |plane, gxp| {
        let a = &idx.argmax[plane * po..(plane + 1) * po];
        let g = &gd[plane * po..(plane + 1) * po];
        for (&i, &v) in a.iter().zip(g) {
            gxp[i as usize] += v;
        }
    });
    Ok(gx)
}
