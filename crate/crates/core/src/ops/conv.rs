use serde::{Deserialize, Serialize};

use super::for_each_plane;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Spatial geometry of a square convolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Stride-1 geometry with "same" zero padding `d·(k−1)/2`.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeometry { kernel, dilation, stride: 1, padding: dilation * kernel.saturating_sub(1) / 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Geometry(format!("kernel size must be odd and positive, got {}", self.kernel)));
        }
        if self.dilation == 0 {
            return Err(Error::Geometry("dilation must be positive, got 0".into()));
        }
        if self.stride == 0 {
            return Err(Error::Geometry("stride must be positive, got 0".into()));
        }
        Ok(())
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    fn output_hw(&self, x: Shape) -> Result<(usize, usize)> {
        match (self.output_len(x.h), self.output_len(x.w)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::shape(
                "conv2d_depthwise",
                format!("input {x} too small for kernel {} dilation {}", self.kernel, self.dilation),
            )),
        }
    }
}

fn check_depthwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: &ConvGeometry) -> Result<(usize, usize)> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.c != 1 || ws.h != ws.w || ws.n != xs.c {
        return Err(Error::shape(
            "conv2d_depthwise",
            format!("input {xs} needs weight ({}, 1, k, k), got {ws}", xs.c),
        ));
    }
    if ws.h != g.kernel {
        return Err(Error::shape(
            "conv2d_depthwise",
            format!("weight {ws} does not match kernel size {} (input {xs})", g.kernel),
        ));
    }
    g.validate().map_err(|e| Error::shape("conv2d_depthwise", format!("{e}; input {xs}, weight {ws}")))?;
    g.output_hw(xs)
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `off`, so
/// that `o·s + off − p` stays inside `[0, len)`.
#[inline]
fn valid_range(off: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    // o·s + off ≥ pad
    let lo = if off >= pad { 0 } else { (pad - off).div_ceil(stride) };
    // o·s + off − pad ≤ len − 1
    let hi = if len + pad <= off { 0 } else { ((len - 1 + pad - off) / stride + 1).min(out_len) };
    (lo.min(hi), hi)
}

/// Per-channel dilated cross-correlation with zero padding.
pub fn conv2d_depthwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: &ConvGeometry) -> Result<Tensor<T>> {
    let (ho, wo) = check_depthwise(x, w, g)?;
    let xs = x.shape();
    let mut out = Tensor::zeros(Shape::new(xs.n, xs.c, ho, wo));
    let k = g.kernel;
    let (xd, wd) = (x.data(), w.data());
    let (h, wi, s, d, p) = (xs.h, xs.w, g.stride, g.dilation, g.padding);
    for_each_plane(out.data_mut(), ho * wo, |plane, o| {
        let c = plane % xs.c;
        let src = &xd[plane * h * wi..(plane + 1) * h * wi];
        let ker = &wd[c * k * k..(c + 1) * k * k];
        for oy in 0..ho {
            let row = &mut o[oy * wo..(oy + 1) * wo];
            for ky in 0..k {
                let iy = (oy * s + ky * d) as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let srow = &src[iy as usize * wi..(iy as usize + 1) * wi];
                for kx in 0..k {
                    let wv = ker[ky * k + kx];
                    let (lo, hi) = valid_range(kx * d, p, s, wi, wo);
                    if lo >= hi {
                        continue;
                    }
                    if s == 1 {
                        let base = lo + kx * d - p;
                        for (r, &v) in row[lo..hi].iter_mut().zip(&srow[base..base + hi - lo]) {
                            *r += wv * v;
                        }
                    } else {
                        for (ox, r) in row.iter_mut().enumerate().take(hi).skip(lo) {
                            *r += wv * srow[ox * s + kx * d - p];
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of [`conv2d_depthwise`] with respect to input and weight.
pub fn conv2d_depthwise_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (ho, wo) = check_depthwise(x, w, g)?;
    let xs = x.shape();
    if grad_out.shape() != Shape::new(xs.n, xs.c, ho, wo) {
        return Err(Error::shape_pair("conv2d_depthwise_backward", Shape::new(xs.n, xs.c, ho, wo), grad_out.shape()));
    }
    let k = g.kernel;
    let (h, wi, s, d, p) = (xs.h, xs.w, g.stride, g.dilation, g.padding);
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());

    let mut gx = Tensor::zeros(xs);
    for_each_plane(gx.data_mut(), h * wi, |plane, gxp| {
        let c = plane % xs.c;
        let gop = &gd[plane * ho * wo..(plane + 1) * ho * wo];
        let ker = &wd[c * k * k..(c + 1) * k * k];
        for oy in 0..ho {
            let grow = &gop[oy * wo..(oy + 1) * wo];
            for ky in 0..k {
                let iy = (oy * s + ky * d) as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let drow = &mut gxp[iy as usize * wi..(iy as usize + 1) * wi];
                for kx in 0..k {
                    let wv = ker[ky * k + kx];
                    let (lo, hi) = valid_range(kx * d, p, s, wi, wo);
                    for ox in lo..hi {
                        drow[ox * s + kx * d - p] += wv * grow[ox];
                    }
                }
            }
        }
    });

    let mut gw = Tensor::zeros(w.shape());
    for_each_plane(gw.data_mut(), k * k, |c, gker| {
        for n in 0..xs.n {
            let plane = n * xs.c + c;
            let src = &xd[plane * h * wi..(plane + 1) * h * wi];
            let gop = &gd[plane * ho * wo..(plane + 1) * ho * wo];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = valid_range(kx * d, p, s, wi, wo);
                    let mut acc = T::zero();
                    for oy in 0..ho {
                        let iy = (oy * s + ky * d) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * wi..(iy as usize + 1) * wi];
                        let grow = &gop[oy * wo..(oy + 1) * wo];
                        for ox in lo..hi {
                            acc += grow[ox] * srow[ox * s + kx * d - p];
                        }
                    }
                    gker[ky * k + kx] += acc;
                }
            }
        }
    });
    Ok((gx, gw))
}

fn check_pointwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<()> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.h != 1 || ws.w != 1 || ws.c != xs.c {
        return Err(Error::shape(
            "conv2d_pointwise",
            format!("input {xs} needs weight (c_out, {}, 1, 1), got {ws}", xs.c),
        ));
    }
    if let Some(b) = bias {
        if b.len() != ws.n {
            return Err(Error::shape(
                "conv2d_pointwise",
                format!("bias {} does not match {} output channels (weight {ws})", b.shape(), ws.n),
            ));
        }
    }
    Ok(())
}

/// 1×1 convolution mixing channels; spatial extent is unchanged.
pub fn conv2d_pointwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_pointwise(x, w, bias)?;
    let xs = x.shape();
    let (cin, cout, hw) = (xs.c, w.shape().n, xs.plane());
    let mut out = Tensor::zeros(xs.with_c(cout));
    let (xd, wd) = (x.data(), w.data());
    let bd = bias.map(|b| b.data());
    for_each_plane(out.data_mut(), hw, |plane, o| {
        let (n, co) = (plane / cout, plane % cout);
        if let Some(b) = bd {
            o.iter_mut().for_each(|v| *v = b[co]);
        }
        let wrow = &wd[co * cin..(co + 1) * cin];
        for (ci, &wv) in wrow.iter().enumerate() {
            let src = &xd[(n * cin + ci) * hw..(n * cin + ci + 1) * hw];
            for (r, &v) in o.iter_mut().zip(src) {
                *r += wv * v;
            }
        }
    });
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PointwiseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_pointwise_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<PointwiseGrads<T>> {
    check_pointwise(x, w, None)?;
    let xs = x.shape();
    let (cin, cout, hw) = (xs.c, w.shape().n, xs.plane());
    if grad_out.shape() != xs.with_c(cout) {
        return Err(Error::shape_pair("conv2d_pointwise_backward", xs.with_c(cout), grad_out.shape()));
    }
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());

    let mut gx = Tensor::zeros(xs);
    for_each_plane(gx.data_mut(), hw, |plane, gxp| {
        let (n, ci) = (plane / cin, plane % cin);
        for co in 0..cout {
            let wv = wd[co * cin + ci];
            let gop = &gd[(n * cout + co) * hw..(n * cout + co + 1) * hw];
            for (r, &g) in gxp.iter_mut().zip(gop) {
                *r += wv * g;
            }
        }
    });

    let mut gw = Tensor::zeros(w.shape());
    for_each_plane(gw.data_mut(), cin, |co, grow| {
        for n in 0..xs.n {
            let gop = &gd[(n * cout + co) * hw..(n * cout + co + 1) * hw];
            for (ci, r) in grow.iter_mut().enumerate() {
                let src = &xd[(n * cin + ci) * hw..(n * cin + ci + 1) * hw];
                *r += gop.iter().zip(src).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
    });

    let gb = with_bias.then(|| {
        let mut gb = Tensor::zeros(Shape::new(1, cout, 1, 1));
        for co in 0..cout {
            let mut acc = T::zero();
            for n in 0..xs.n {
                acc += gd[(n * cout + co) * hw..(n * cout + co + 1) * hw].iter().copied().sum::<T>();
            }
            gb.data_mut()[co] = acc;
        }
        gb
    });
    Ok(PointwiseGrads { input: gx, weight: gw, bias: gb })
}
