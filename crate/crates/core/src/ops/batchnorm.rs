use super::for_each_plane;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{join_name, ParamRole, ParamTensor, Parameterized, Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Saved state of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check_params<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let c = x.shape().c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("input {} needs {c} scale/shift values, got {} and {}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Normalizes each channel by its batch statistics over (n, h, w).
pub fn batchnorm_train<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
    check_params(x, gamma, beta)?;
    let s = x.shape();
    let count = s.n * s.plane();
    if count <= 1 {
        return Err(Error::shape("batchnorm", format!("train mode needs more than one value per channel, input {s}")));
    }
    let inv_count = T::one() / T::from_usize(count).unwrap();
    let eps = T::lit(BN_EPS);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            acc += x.plane(n, c).iter().copied().sum::<T>();
        }
        let m = acc * inv_count;
        let mut sq = T::zero();
        for n in 0..s.n {
            sq += x.plane(n, c).iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
        mean[c] = m;
        var[c] = sq * inv_count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let plane = s.plane();
    for_each_plane(xhat.data_mut(), plane, |p, o| {
        let c = p % s.c;
        for (r, &v) in o.iter_mut().zip(&xd[p * plane..(p + 1) * plane]) {
            *r = (v - mean[c]) * inv_std[c];
        }
    });
    let xh = xhat.data();
    for_each_plane(y.data_mut(), plane, |p, o| {
        let c = p % s.c;
        for (r, &v) in o.iter_mut().zip(&xh[p * plane..(p + 1) * plane]) {
            *r = gd[c] * v + bd[c];
        }
    });
    Ok((y, BnCache { xhat, inv_std, mean, var }))
}

/// Full batch-norm gradient including the mean and variance terms.
/// Returns (grad_x, grad_gamma, grad_beta).
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = cache.xhat.shape();
    if grad_out.shape() != s {
        return Err(Error::shape_pair("batchnorm_backward", s, grad_out.shape()));
    }
    let count = T::from_usize(s.n * s.plane()).unwrap();
    let mut sum_g = vec![T::zero(); s.c];
    let mut sum_gx = vec![T::zero(); s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            let g = grad_out.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            sum_g[c] += g.iter().copied().sum::<T>();
            sum_gx[c] += g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
    let plane = s.plane();
    let (gd, xh, gm) = (grad_out.data(), cache.xhat.data(), gamma.data());
    let mut gx = Tensor::zeros(s);
    for_each_plane(gx.data_mut(), plane, |p, o| {
        let c = p % s.c;
        let k = gm[c] * cache.inv_std[c] / count;
        let g = &gd[p * plane..(p + 1) * plane];
        let x = &xh[p * plane..(p + 1) * plane];
        for ((r, &gv), &xv) in o.iter_mut().zip(g).zip(x) {
            *r = k * (count * gv - sum_g[c] - xv * sum_gx[c]);
        }
    });
    let cs = Shape::new(1, s.c, 1, 1);
    Ok((gx, Tensor::from_vec(cs, sum_gx)?, Tensor::from_vec(cs, sum_g)?))
}

pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
) -> Result<Tensor<T>> {
    check_params(x, gamma, beta)?;
    let s = x.shape();
    let eps = T::lit(BN_EPS);
    let scale: Vec<T> = (0..s.c).map(|c| gamma.data()[c] / (running_var[c] + eps).sqrt()).collect();
    let shift: Vec<T> = (0..s.c).map(|c| beta.data()[c] - running_mean[c] * scale[c]).collect();
    let mut y = Tensor::zeros(s);
    let xd = x.data();
    let plane = s.plane();
    for_each_plane(y.data_mut(), plane, |p, o| {
        let c = p % s.c;
        for (r, &v) in o.iter_mut().zip(&xd[p * plane..(p + 1) * plane]) {
            *r = v * scale[c] + shift[c];
        }
    });
    Ok(y)
}

pub fn batchnorm_eval_backward<T: Scalar>(gamma: &Tensor<T>, running_var: &[T], grad_out: &Tensor<T>) -> Tensor<T> {
    let s = grad_out.shape();
    let eps = T::lit(BN_EPS);
    let mut gx = grad_out.clone();
    let plane = s.plane();
    for_each_plane(gx.data_mut(), plane, |p, o| {
        let c = p % s.c;
        let k = gamma.data()[c] / (running_var[c] + eps).sqrt();
        o.iter_mut().for_each(|v| *v *= k);
    });
    gx
}

/// Batch-norm layer with learnable affine parameters and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: ParamTensor<T>,
    pub beta: ParamTensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        let cs = Shape::new(1, channels, 1, 1);
        BatchNorm {
            gamma: ParamTensor::new(Tensor::full(cs, T::one()), ParamRole::BnGamma),
            beta: ParamTensor::new(Tensor::zeros(cs), ParamRole::BnBeta),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        match mode {
            BnMode::Train => {
                let (y, cache) = batchnorm_train(x, &self.gamma.value, &self.beta.value)?;
                let s = x.shape();
                let count = (s.n * s.plane()) as f64;
                let m = T::lit(BN_MOMENTUM);
                let unbias = T::lit(count / (count - 1.0));
                for c in 0..self.channels() {
                    self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * cache.mean[c];
                    self.running_var[c] = (T::one() - m) * self.running_var[c] + m * cache.var[c] * unbias;
                }
                self.cache = Some(cache);
                Ok(y)
            }
            BnMode::Eval => {
                self.cache = None;
                batchnorm_eval(x, &self.gamma.value, &self.beta.value, &self.running_mean, &self.running_var)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// Requires a preceding train-mode forward.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.cache {
            Some(cache) => {
                let (gx, gg, gb) = batchnorm_backward(cache, &self.gamma.value, grad_out)?;
                self.gamma.grad.add_assign(&gg)?;
                self.beta.grad.add_assign(&gb)?;
                Ok(gx)
            }
            None => Err(Error::InvalidArgument("batchnorm backward requires a train-mode forward".into())),
        }
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor<T>)) {
        f(&join_name(prefix, "gamma"), &self.gamma);
        f(&join_name(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor<T>)) {
        f(&join_name(prefix, "gamma"), &mut self.gamma);
        f(&join_name(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&join_name(prefix, "running_mean"), &self.running_mean);
        f(&join_name(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        f(&join_name(prefix, "running_mean"), &mut self.running_mean);
        f(&join_name(prefix, "running_var"), &mut self.running_var);
    }
}
