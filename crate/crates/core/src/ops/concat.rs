use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Concatenates along the channel axis.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?.shape();
    if xs.iter().any(|t| {
        let s = t.shape();
        s.n != first.n || s.h != first.h || s.w != first.w
    }) {
        let list: Vec<String> = xs.iter().map(|t| t.shape().to_string()).collect();
        return Err(Error::shape("concat_channels", format!("incompatible inputs [{}]", list.join(", "))));
    }
    let c_total: usize = xs.iter().map(|t| t.shape().c).sum();
    let out_shape = first.with_c(c_total);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for t in xs {
            data.extend_from_slice(t.item(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Inverse of [`concat_channels`]: splits by the given channel counts.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = x.shape();
    if sizes.iter().sum::<usize>() != s.c {
        return Err(Error::shape("split_channels", format!("sizes {sizes:?} do not sum to channels of {s}")));
    }
    let plane = s.plane();
    let mut parts: Vec<Vec<T>> = sizes.iter().map(|&c| Vec::with_capacity(s.n * c * plane)).collect();
    for n in 0..s.n {
        let item = x.item(n);
        let mut off = 0;
        for (part, &c) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&item[off * plane..(off + c) * plane]);
            off += c;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &c)| Tensor::from_vec(s.with_c(c), d))
        .collect()
}

/// Rearranges `m` maps stacked along the batch axis (map-major, shape
/// `(m·n, c, h, w)`) into one tensor `(n, m·c, h, w)` whose channel block `j`
/// holds map `j`.
pub fn maps_to_channels<T: Scalar>(x: &Tensor<T>, maps: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if maps == 0 || s.n % maps != 0 {
        return Err(Error::shape("maps_to_channels", format!("{s} is not divisible into {maps} maps")));
    }
    let n = s.n / maps;
    let mut data = Vec::with_capacity(s.numel());
    for b in 0..n {
        for j in 0..maps {
            data.extend_from_slice(x.item(j * n + b));
        }
    }
    Tensor::from_vec(Shape::new(n, maps * s.c, s.h, s.w), data)
}

/// Inverse of [`maps_to_channels`].
pub fn channels_to_maps<T: Scalar>(x: &Tensor<T>, maps: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if maps == 0 || s.c % maps != 0 {
        return Err(Error::shape("channels_to_maps", format!("{s} is not divisible into {maps} maps")));
    }
    let c = s.c / maps;
    let block = c * s.plane();
    let mut data = vec![T::zero(); s.numel()];
    for b in 0..s.n {
        let item = x.item(b);
        for j in 0..maps {
            let dst = (j * s.n + b) * block;
            data[dst..dst + block].copy_from_slice(&item[j * block..(j + 1) * block]);
        }
    }
    Tensor::from_vec(Shape::new(maps * s.n, c, s.h, s.w), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_shapes_and_roundtrip() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 2, 4, 4), |_, c, y, x| (c * 16 + y * 4 + x) as f64);
        let b = Tensor::<f64>::from_fn(Shape::new(1, 3, 4, 4), |_, c, y, x| -((c * 16 + y * 4 + x) as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape::new(1, 5, 4, 4));
        let parts = split_channels(&cat, &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_mismatch_lists_shapes() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let b = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 4));
        let err = concat_channels(&[&a, &b]).unwrap_err().to_string();
        assert!(err.contains("(1, 2, 4, 4)") && err.contains("(1, 2, 2, 4)"));
    }

    #[test]
    fn maps_channels_roundtrip() {
        let x = Tensor::<f64>::from_fn(Shape::new(6, 2, 2, 2), |n, c, y, x| (n * 8 + c * 4 + y * 2 + x) as f64);
        let m = maps_to_channels(&x, 3).unwrap();
        assert_eq!(m.shape(), Shape::new(2, 6, 2, 2));
        // batch item 1, map 2 is stacked row 2·2+1 = 5
        assert_eq!(m.at(1, 4, 0, 0), x.at(5, 0, 0, 0));
        assert_eq!(channels_to_maps(&m, 3).unwrap(), x);
    }
}
