use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Averages each channel over (h, w); output is `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = T::one() / T::from_usize(s.plane().max(1)).unwrap();
    let data = (0..s.n * s.c)
        .map(|p| x.data()[p * s.plane()..(p + 1) * s.plane()].iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(s.with_hw(1, 1), data).expect("shape is consistent")
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: crate::tensor::Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let expect = input_shape.with_hw(1, 1);
    if grad_out.shape() != expect {
        return Err(crate::error::Error::shape_pair("global_avg_pool_backward", expect, grad_out.shape()));
    }
    let inv = T::one() / T::from_usize(input_shape.plane().max(1)).unwrap();
    let plane = input_shape.plane();
    let mut data = Vec::with_capacity(input_shape.numel());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat(g * inv).take(plane));
    }
    Tensor::from_vec(input_shape, data)
}
