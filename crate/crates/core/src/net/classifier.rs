use rand::Rng;

use super::config::{Head, NetworkConfig};
use super::schedule::validate_network;
use super::sod::check_images;
use crate::error::{Error, Result};
use crate::gradcheck::{pack_signs, Piecewise};
use crate::layer::{uniform_param, LmfLayer};
use crate::ops::{
    concat_channels, conv2d_pointwise, conv2d_pointwise_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, split_channels, BnMode,
};
use crate::scalar::Scalar;
use crate::tensor::{join_name, ParamRole, ParamTensor, Parameterized, Shape, Tensor};

#[derive(Debug, Clone)]
struct Fc<T> {
    weight: ParamTensor<T>,
    bias: ParamTensor<T>,
}

impl<T: Scalar> Fc<T> {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        Fc {
            weight: uniform_param(Shape::new(cout, cin, 1, 1), cin, ParamRole::FcWeight, rng),
            bias: ParamTensor::new(Tensor::zeros(Shape::new(1, cout, 1, 1)), ParamRole::FcBias),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_pointwise(x, &self.weight.value, Some(&self.bias.value))
    }

    fn backward(&mut self, x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let pw = conv2d_pointwise_backward(x, &self.weight.value, true, g)?;
        self.weight.grad.add_assign(&pw.weight)?;
        self.bias.grad.add_assign(&pw.bias.expect("bias requested"))?;
        Ok(pw.input)
    }
}

#[derive(Debug, Clone)]
struct ClassifierCache<T> {
    pooled_shape: Shape,
    features: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
}

/// Encoder stages followed by global average pooling and two fully
/// connected layers.
#[derive(Debug, Clone)]
pub struct ClassifierNetwork<T> {
    config: NetworkConfig,
    encoder: Vec<LmfLayer<T>>,
    fc1: Fc<T>,
    fc2: Fc<T>,
    cache: Option<ClassifierCache<T>>,
}

impl<T: Scalar> ClassifierNetwork<T> {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        let Head::Classifier { num_classes, hidden_width } = config.head else {
            return Err(Error::Config("classifier network needs a classifier head".into()));
        };
        validate_network(&config)?;
        let encoder = config.encoder.iter().map(|c| LmfLayer::new(c.clone(), rng)).collect::<Result<Vec<_>>>()?;
        let feat = config.head_in_channels();
        let fc1 = Fc::new(feat, hidden_width, rng);
        let fc2 = Fc::new(hidden_width, num_classes, rng);
        Ok(ClassifierNetwork { config, encoder, fc1, fc2, cache: None })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        match self.config.head {
            Head::Classifier { num_classes, .. } => num_classes,
            Head::Saliency => unreachable!("checked at construction"),
        }
    }

    /// Raw logits of shape `(n, num_classes, 1, 1)`.
    pub fn forward(&mut self, images: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        check_images(&self.config, images)?;
        let mut feats = vec![images.clone()];
        for l in self.encoder.iter_mut() {
            feats = l.forward(&feats, mode)?;
        }
        let refs: Vec<&Tensor<T>> = feats.iter().collect();
        let stacked = concat_channels(&refs)?;
        let features = global_avg_pool(&stacked);
        let hidden_pre = self.fc1.forward(&features)?;
        let hidden = relu(&hidden_pre);
        let logits = self.fc2.forward(&hidden)?;
        self.cache = match mode {
            BnMode::Train => Some(ClassifierCache { pooled_shape: stacked.shape(), features, hidden_pre, hidden }),
            BnMode::Eval => None,
        };
        Ok(logits)
    }

    /// Backpropagates the logit gradient; returns the image gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward requires a train-mode forward".into()))?;
        let g = self.fc2.backward(&c.hidden, grad_logits)?;
        let g = relu_backward(&c.hidden_pre, &g)?;
        let g = self.fc1.backward(&c.features, &g)?;
        let g = global_avg_pool_backward(c.pooled_shape, &g)?;
        let last = self.config.encoder.last().expect("five stages");
        let mut grads = split_channels(&g, &vec![last.out_channels; last.branches()])?;
        for l in self.encoder.iter_mut().rev() {
            grads = l.backward(&grads)?;
        }
        Ok(grads.into_iter().next().expect("encoder1 has one input map"))
    }
}

impl<T: Scalar> Piecewise for ClassifierNetwork<T> {
    fn activation_pattern(&self) -> Option<Vec<u64>> {
        let c = self.cache.as_ref()?;
        let mut out = Vec::new();
        for l in &self.encoder {
            if !l.push_pattern(&mut out) {
                return None;
            }
        }
        pack_signs(c.hidden_pre.data(), &mut out);
        Some(out)
    }
}

impl<T: Scalar> Parameterized<T> for ClassifierNetwork<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor<T>)) {
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit_params(&join_name(prefix, &format!("encoder{}", i + 1)), f);
        }
        for (name, fc) in [("fc1", &self.fc1), ("fc2", &self.fc2)] {
            f(&join_name(prefix, &format!("{name}.weight")), &fc.weight);
            f(&join_name(prefix, &format!("{name}.bias")), &fc.bias);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor<T>)) {
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_params_mut(&join_name(prefix, &format!("encoder{}", i + 1)), f);
        }
        for (name, fc) in [("fc1", &mut self.fc1), ("fc2", &mut self.fc2)] {
            f(&join_name(prefix, &format!("{name}.weight")), &mut fc.weight);
            f(&join_name(prefix, &format!("{name}.bias")), &mut fc.bias);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit_buffers(&join_name(prefix, &format!("encoder{}", i + 1)), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_buffers_mut(&join_name(prefix, &format!("encoder{}", i + 1)), f);
        }
    }
}
