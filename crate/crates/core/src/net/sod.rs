use rand::Rng;

use super::config::{Head, NetworkConfig};
use super::schedule::validate_network;
use crate::error::{Error, Result};
use crate::gradcheck::Piecewise;
use crate::layer::{uniform_param, LmfLayer};
use crate::ops::{concat_channels, conv2d_pointwise, conv2d_pointwise_backward, sigmoid, sigmoid_backward, split_channels, BnMode};
use crate::scalar::Scalar;
use crate::tensor::{join_name, ParamRole, ParamTensor, Parameterized, Shape, Tensor};

/// Sigmoid saliency map, shape `(n, 1, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyOutput<T> {
    pub map: Tensor<T>,
}

/// Concatenates map `j` of `skip` with map `j` of `main` along channels.
pub fn concat_mapwise<T: Scalar>(skip: &[Tensor<T>], main: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    if skip.len() != main.len() {
        return Err(Error::shape(
            "concat_mapwise",
            format!("map counts differ: {} and {}", skip.len(), main.len()),
        ));
    }
    skip.iter().zip(main).map(|(a, b)| concat_channels(&[a, b])).collect()
}

/// Inverse of [`concat_mapwise`] for gradients.
fn split_mapwise<T: Scalar>(grads: &[Tensor<T>], skip_c: usize) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
    let mut skip = Vec::with_capacity(grads.len());
    let mut main = Vec::with_capacity(grads.len());
    for g in grads {
        let c = g.shape().c;
        let mut parts = split_channels(g, &[skip_c, c - skip_c])?.into_iter();
        skip.push(parts.next().expect("two parts"));
        main.push(parts.next().expect("two parts"));
    }
    Ok((skip, main))
}

fn add_maps<T: Scalar>(acc: &mut [Tensor<T>], other: &[Tensor<T>]) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_assign(b)?;
    }
    Ok(())
}

pub(crate) fn check_images<T: Scalar>(config: &NetworkConfig, images: &Tensor<T>) -> Result<()> {
    let s = images.shape();
    let i = config.input;
    if s.c != i.channels || s.h != i.height || s.w != i.width || s.n == 0 {
        return Err(Error::shape(
            "forward",
            format!("images {s} do not match configured input (n, {}, {}, {})", i.channels, i.height, i.width),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct SodCache<T> {
    head_in: Tensor<T>,
    output: Tensor<T>,
}

/// Encoder, mid- and low-level fusion, decoder and sigmoid head.
#[derive(Debug, Clone)]
pub struct SodNetwork<T> {
    config: NetworkConfig,
    encoder: Vec<LmfLayer<T>>,
    fusion_i: [LmfLayer<T>; 2],
    fusion_l: [LmfLayer<T>; 2],
    decoder: Vec<LmfLayer<T>>,
    head_weight: ParamTensor<T>,
    head_bias: ParamTensor<T>,
    cache: Option<SodCache<T>>,
}

impl<T: Scalar> SodNetwork<T> {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        if config.head != Head::Saliency {
            return Err(Error::Config("saliency network needs a saliency head".into()));
        }
        validate_network(&config)?;
        let mut layer = |c: &crate::layer::LmfConfig| LmfLayer::new(c.clone(), rng);
        let encoder = config.encoder.iter().map(&mut layer).collect::<Result<Vec<_>>>()?;
        let fi = config.fusion_i.as_ref().expect("validated");
        let fl = config.fusion_l.as_ref().expect("validated");
        let fusion_i = [layer(&fi.pool)?, layer(&fi.upsample)?];
        let fusion_l = [layer(&fl.pool)?, layer(&fl.upsample)?];
        let decoder = config.decoder.iter().map(&mut layer).collect::<Result<Vec<_>>>()?;
        let cin = config.head_in_channels();
        let head_weight = uniform_param(Shape::new(1, cin, 1, 1), cin, ParamRole::PointwiseWeight, rng);
        let head_bias = ParamTensor::new(Tensor::zeros(Shape::new(1, 1, 1, 1)), ParamRole::PointwiseBias);
        Ok(SodNetwork { config, encoder, fusion_i, fusion_l, decoder, head_weight, head_bias, cache: None })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Saliency map at input resolution. Train mode keeps the state needed by
    /// [`SodNetwork::backward`].
    pub fn forward(&mut self, images: &Tensor<T>, mode: BnMode) -> Result<SaliencyOutput<T>> {
        check_images(&self.config, images)?;
        let mut feats = vec![images.clone()];
        let mut f2 = Vec::new();
        let mut f3 = Vec::new();
        for (i, l) in self.encoder.iter_mut().enumerate() {
            feats = l.forward(&feats, mode)?;
            match i {
                1 => f2 = feats.clone(),
                2 => f3 = feats.clone(),
                _ => {}
            }
        }
        let fi = self.fusion_i[0].forward(&f3, mode)?;
        let fi = self.fusion_i[1].forward(&fi, mode)?;
        let fl = self.fusion_l[0].forward(&f2, mode)?;
        let fl = self.fusion_l[1].forward(&fl, mode)?;

        let f6 = self.decoder[0].forward(&feats, mode)?;
        let f7 = self.decoder[1].forward(&f6, mode)?;
        let f8 = self.decoder[2].forward(&concat_mapwise(&fi, &f7)?, mode)?;
        let f9 = self.decoder[3].forward(&concat_mapwise(&fl, &f8)?, mode)?;

        let refs: Vec<&Tensor<T>> = f9.iter().collect();
        let head_in = concat_channels(&refs)?;
        let logits = conv2d_pointwise(&head_in, &self.head_weight.value, Some(&self.head_bias.value))?;
        let map = sigmoid(&logits);
        self.cache = match mode {
            BnMode::Train => Some(SodCache { head_in, output: map.clone() }),
            BnMode::Eval => None,
        };
        Ok(SaliencyOutput { map })
    }

    /// Backpropagates `grad_map` (gradient w.r.t. the saliency map), adding
    /// into every parameter gradient. Returns the gradient w.r.t. the images.
    pub fn backward(&mut self, grad_map: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward requires a train-mode forward".into()))?;
        let g_logits = sigmoid_backward(&cache.output, grad_map)?;
        let pw = conv2d_pointwise_backward(&cache.head_in, &self.head_weight.value, true, &g_logits)?;
        self.head_weight.grad.add_assign(&pw.weight)?;
        self.head_bias.grad.add_assign(&pw.bias.expect("bias requested"))?;

        let d = &self.config.decoder;
        let g9 = split_channels(&pw.input, &vec![d[3].out_channels; d[3].branches()])?;
        let g_cat9 = self.decoder[3].backward(&g9)?;
        let (g_fl, g8) = split_mapwise(&g_cat9, self.fusion_l[1].config().out_channels)?;
        let g_cat8 = self.decoder[2].backward(&g8)?;
        let (g_fi, g7) = split_mapwise(&g_cat8, self.fusion_i[1].config().out_channels)?;
        let g6 = self.decoder[1].backward(&g7)?;
        let mut grads = self.decoder[0].backward(&g6)?;

        let g = self.fusion_l[1].backward(&g_fl)?;
        let g_f2_skip = self.fusion_l[0].backward(&g)?;
        let g = self.fusion_i[1].backward(&g_fi)?;
        let g_f3_skip = self.fusion_i[0].backward(&g)?;

        for i in (0..self.encoder.len()).rev() {
            match i {
                2 => add_maps(&mut grads, &g_f3_skip)?,
                1 => add_maps(&mut grads, &g_f2_skip)?,
                _ => {}
            }
            grads = self.encoder[i].backward(&grads)?;
        }
        Ok(grads.into_iter().next().expect("encoder1 has one input map"))
    }
}

impl<T: Scalar> Piecewise for SodNetwork<T> {
    fn activation_pattern(&self) -> Option<Vec<u64>> {
        self.cache.as_ref()?;
        let mut out = Vec::new();
        for (_, l) in self.layers() {
            if !l.push_pattern(&mut out) {
                return None;
            }
        }
        Some(out)
    }
}

impl<T: Scalar> Parameterized<T> for SodNetwork<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor<T>)) {
        for (name, l) in self.layers() {
            l.visit_params(&join_name(prefix, &name), f);
        }
        f(&join_name(prefix, "head.weight"), &self.head_weight);
        f(&join_name(prefix, "head.bias"), &self.head_bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor<T>)) {
        for (name, l) in self.layers_mut() {
            l.visit_params_mut(&join_name(prefix, &name), f);
        }
        f(&join_name(prefix, "head.weight"), &mut self.head_weight);
        f(&join_name(prefix, "head.bias"), &mut self.head_bias);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (name, l) in self.layers() {
            l.visit_buffers(&join_name(prefix, &name), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        for (name, l) in self.layers_mut() {
            l.visit_buffers_mut(&join_name(prefix, &name), f);
        }
    }
}

impl<T: Scalar> SodNetwork<T> {
    fn layer_names(&self) -> Vec<String> {
        self.config.named_layers().into_iter().map(|(n, _)| n).collect()
    }

    fn layers(&self) -> Vec<(String, &LmfLayer<T>)> {
        let all = self.encoder.iter().chain(&self.fusion_i).chain(&self.fusion_l).chain(&self.decoder);
        self.layer_names().into_iter().zip(all).collect()
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut LmfLayer<T>)> {
        let names = self.layer_names();
        let all = self
            .encoder
            .iter_mut()
            .chain(self.fusion_i.iter_mut())
            .chain(self.fusion_l.iter_mut())
            .chain(self.decoder.iter_mut());
        names.into_iter().zip(all).collect()
    }
}
