use super::for_each_plane;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Source taps for one output coordinate of a ×2 align-corners=false resize:
/// the sample centre is `(i + 0.5) / 2 − 0.5`, clamped at 0.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn taps(input: usize) -> Vec<Tap> {
    (0..2 * input)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap { i0, i1, frac: src - i0 as f64 }
        })
        .collect()
}

/// Bilinear ×2 upsampling (align-corners=false).
pub fn upsample_bilinear2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.h == 0 || xs.w == 0 {
        return Err(Error::shape("upsample_bilinear2", format!("empty spatial dims in {xs}")));
    }
    let (ty, tx) = (taps(xs.h), taps(xs.w));
    let (ho, wo) = (2 * xs.h, 2 * xs.w);
    let mut out = Tensor::zeros(xs.with_hw(ho, wo));
    let xd = x.data();
    for_each_plane(out.data_mut(), ho * wo, |plane, o| {
        let src = &xd[plane * xs.plane()..(plane + 1) * xs.plane()];
        for (oy, ty) in ty.iter().enumerate() {
            let fy = T::lit(ty.frac);
            let r0 = &src[ty.i0 * xs.w..(ty.i0 + 1) * xs.w];
            let r1 = &src[ty.i1 * xs.w..(ty.i1 + 1) * xs.w];
            for (ox, tx) in tx.iter().enumerate() {
                let fx = T::lit(tx.frac);
                let top = r0[tx.i0] * (T::one() - fx) + r0[tx.i1] * fx;
                let bot = r1[tx.i0] * (T::one() - fx) + r1[tx.i1] * fx;
                o[oy * wo + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    });
    Ok(out)
}

/// Transpose of the interpolation operator applied to `grad_out`.
pub fn upsample_bilinear2_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let expect = input_shape.with_hw(2 * input_shape.h, 2 * input_shape.w);
    if grad_out.shape() != expect || input_shape.h == 0 || input_shape.w == 0 {
        return Err(Error::shape_pair("upsample_bilinear2_backward", expect, grad_out.shape()));
    }
    let (ty, tx) = (taps(input_shape.h), taps(input_shape.w));
    let (wi, wo) = (input_shape.w, expect.w);
    let gd = grad_out.data();
    let mut gx = Tensor::zeros(input_shape);
    for_each_plane(gx.data_mut(), input_shape.plane(), |plane, g| {
        let gop = &gd[plane * expect.plane()..(plane + 1) * expect.plane()];
        for (oy, ty) in ty.iter().enumerate() {
            let fy = T::lit(ty.frac);
            for (ox, tx) in tx.iter().enumerate() {
                let fx = T::lit(tx.frac);
                let v = gop[oy * wo + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                g[ty.i0 * wi + tx.i0] += top * (T::one() - fx);
                g[ty.i0 * wi + tx.i1] += top * fx;
                g[ty.i1 * wi + tx.i0] += bot * (T::one() - fx);
                g[ty.i1 * wi + tx.i1] += bot * fx;
            }
        }
    });
    Ok(gx)
}
