//! The full gradient suite: every differentiable kernel, each loss component,
//! one LMF layer and a whole network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{grad_check, grad_check_params_piecewise, Coords, GradCheckReport};
use crate::error::Result;
use crate::layer::{LmfConfig, LmfLayer, Resample};
use crate::losses::{bce_loss, hybrid_loss, iou_loss, softmax_cross_entropy, ssim_loss, LossComponents};
use crate::net::{ClassifierNetwork, NetworkConfig, SodNetwork};
use crate::ops::*;
use crate::tensor::{Parameterized, Shape, Tensor};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOptions {
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Sampled coordinates per network parameter tensor.
    pub per_tensor: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { eps: 1e-4, tolerance: 1e-4, seed: 0, per_tensor: 4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub options: SuiteOptions,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.report.passed(self.options.tolerance))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.report.max_rel_error()).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.report.passed(self.options.tolerance))
            .map(|e| e.name.as_str())
            .collect()
    }
}

struct Suite {
    opts: SuiteOptions,
    rng: ChaCha8Rng,
    entries: Vec<SuiteEntry>,
}

type Forward<'a> = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'a>;
type Backward<'a> = Box<dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>> + 'a>;

impl Suite {
    fn rand(&mut self, shape: Shape) -> Tensor<f64> {
        Tensor::uniform(shape, -1.0, 1.0, &mut self.rng)
    }

    /// Checks `backward` against `<r, forward(inputs)>` for a random `r`.
    fn op(&mut self, name: &str, names: &[&str], inputs: Vec<Tensor<f64>>, forward: Forward, backward: Backward) -> Result<()> {
        let r = self.rand(forward(&inputs)?.shape());
        let analytic = backward(&inputs, &r)?;
        let report = grad_check(names, &inputs, &analytic, self.opts.eps, Coords::All, |xs| forward(xs)?.dot(&r));
        self.entries.push(SuiteEntry { name: name.to_string(), report });
        Ok(())
    }

    fn loss(
        &mut self,
        name: &str,
        s: Tensor<f64>,
        g: Tensor<f64>,
        f: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
    ) -> Result<()> {
        let (_, grad) = f(&s, &g)?;
        let report = grad_check(&["prediction"], &[s], &[grad], self.opts.eps, Coords::All, |xs| Ok(f(&xs[0], &g)?.0));
        self.entries.push(SuiteEntry { name: name.to_string(), report });
        Ok(())
    }

    fn kernels(&mut self) -> Result<()> {
        for (k, d, stride) in [(3, 1, 1), (3, 3, 1), (5, 2, 1), (3, 2, 2)] {
            let g = ConvGeometry { kernel: k, dilation: d, stride, padding: d * (k - 1) / 2 };
            let inputs = vec![self.rand(Shape::new(2, 3, 6, 5)), self.rand(Shape::new(3, 1, k, k))];
            self.op(
                &format!("conv2d_depthwise k{k} d{d} s{stride}"),
                &["x", "w"],
                inputs,
                Box::new(move |t| conv2d_depthwise(&t[0], &t[1], &g)),
                Box::new(move |t, r| {
                    let (gx, gw) = conv2d_depthwise_backward(&t[0], &t[1], &g, r)?;
                    Ok(vec![gx, gw])
                }),
            )?;
        }
        let inputs = vec![self.rand(Shape::new(2, 3, 3, 4)), self.rand(Shape::new(4, 3, 1, 1)), self.rand(Shape::new(1, 4, 1, 1))];
        self.op(
            "conv2d_pointwise",
            &["x", "w", "bias"],
            inputs,
            Box::new(|t| conv2d_pointwise(&t[0], &t[1], Some(&t[2]))),
            Box::new(|t, r| {
                let g = conv2d_pointwise_backward(&t[0], &t[1], true, r)?;
                Ok(vec![g.input, g.weight, g.bias.expect("bias requested")])
            }),
        )?;

        let x = self.rand(Shape::new(2, 3, 4, 4));
        let gamma = self.rand(Shape::new(1, 3, 1, 1)).map(|v| 1.0 + 0.5 * v);
        let beta = self.rand(Shape::new(1, 3, 1, 1));
        self.op(
            "batchnorm train",
            &["x", "gamma", "beta"],
            vec![x.clone(), gamma.clone(), beta.clone()],
            Box::new(|t| Ok(batchnorm_train(&t[0], &t[1], &t[2])?.0)),
            Box::new(|t, r| {
                let (_, cache) = batchnorm_train(&t[0], &t[1], &t[2])?;
                let (gx, gg, gb) = batchnorm_backward(&cache, &t[1], r)?;
                Ok(vec![gx, gg, gb])
            }),
        )?;
        let (rm, rv) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
        let (g2, b2, rv2) = (gamma.clone(), beta.clone(), rv.clone());
        self.op(
            "batchnorm eval",
            &["x"],
            vec![x],
            Box::new(move |t| batchnorm_eval(&t[0], &gamma, &beta, &rm, &rv)),
            Box::new(move |_, r| {
                let _ = &b2;
                Ok(vec![batchnorm_eval_backward(&g2, &rv2, r)])
            }),
        )?;

        // kept away from the ReLU kink
        let x = self.rand(Shape::new(2, 2, 3, 3)).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        self.op("relu", &["x"], vec![x.clone()], Box::new(|t| Ok(relu(&t[0]))), Box::new(|t, r| Ok(vec![relu_backward(&t[0], r)?])))?;
        self.op(
            "sigmoid",
            &["x"],
            vec![x.map(|v| 4.0 * v)],
            Box::new(|t| Ok(sigmoid(&t[0]))),
            Box::new(|t, r| Ok(vec![sigmoid_backward(&sigmoid(&t[0]), r)?])),
        )?;

        // distinct values spaced far beyond eps, so no pooling window ties
        let mut ramp: Vec<f64> = (0..2 * 3 * 4 * 6).map(|i| i as f64 * 0.01).collect();
        ramp.shuffle(&mut self.rng);
        let x = Tensor::from_vec(Shape::new(2, 3, 4, 6), ramp)?;
        let s = x.shape();
        self.op(
            "maxpool2",
            &["x"],
            vec![x.clone()],
            Box::new(|t| Ok(maxpool2(&t[0])?.0)),
            Box::new(|t, r| Ok(vec![maxpool2_backward(&maxpool2(&t[0])?.1, r)?])),
        )?;
        self.op(
            "upsample_bilinear2",
            &["x"],
            vec![x.clone()],
            Box::new(|t| upsample_bilinear2(&t[0])),
            Box::new(move |_, r| Ok(vec![upsample_bilinear2_backward(s, r)?])),
        )?;
        self.op(
            "global_avg_pool",
            &["x"],
            vec![x],
            Box::new(|t| Ok(global_avg_pool(&t[0]))),
            Box::new(move |_, r| Ok(vec![global_avg_pool_backward(s, r)?])),
        )?;

        let inputs = vec![self.rand(Shape::new(2, 2, 3, 3)), self.rand(Shape::new(2, 3, 3, 3))];
        self.op(
            "concat_channels",
            &["a", "b"],
            inputs,
            Box::new(|t| concat_channels(&[&t[0], &t[1]])),
            Box::new(|_, r| split_channels(r, &[2, 3])),
        )?;
        let x = self.rand(Shape::new(6, 2, 3, 3));
        self.op(
            "maps_to_channels",
            &["x"],
            vec![x],
            Box::new(|t| maps_to_channels(&t[0], 3)),
            Box::new(|_, r| Ok(vec![channels_to_maps(r, 3)?])),
        )
    }

    fn losses(&mut self) -> Result<()> {
        let shape = Shape::new(2, 1, 16, 16);
        let s = Tensor::uniform(shape, 0.05, 0.95, &mut self.rng);
        let g = Tensor::uniform(shape, 0.0, 1.0, &mut self.rng).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        self.loss("bce", s.clone(), g.clone(), bce_loss)?;
        self.loss("ssim", s.clone(), g.clone(), ssim_loss)?;
        self.loss("iou", s.clone(), g.clone(), iou_loss)?;
        self.loss("hybrid", s, g, |a, b| {
            let (v, grad) = hybrid_loss(a, b, LossComponents::HYBRID)?;
            Ok((v.total, grad))
        })?;
        let logits = self.rand(Shape::new(3, 5, 1, 1)).map(|v| 3.0 * v);
        let labels = [0usize, 4, 2];
        let (_, grad) = softmax_cross_entropy(&logits, &labels)?;
        let report = grad_check(&["logits"], &[logits], &[grad], self.opts.eps, Coords::All, |xs| {
            Ok(softmax_cross_entropy(&xs[0], &labels)?.0)
        });
        self.entries.push(SuiteEntry { name: "softmax_cross_entropy".into(), report });
        Ok(())
    }

    fn layer(&mut self) -> Result<()> {
        for resample in [Resample::None, Resample::Pool, Resample::Upsample] {
            let cfg = LmfConfig { dilations: vec![1, 2, 4], inputs: 2, in_channels: 3, out_channels: 4, kernel: 3, resample };
            let mut layer = LmfLayer::<f64>::new(cfg, &mut self.rng)?;
            let inputs = vec![self.rand(Shape::new(2, 3, 6, 6)), self.rand(Shape::new(2, 3, 6, 6))];
            let out = layer.forward(&inputs, BnMode::Train)?;
            let proj: Vec<Tensor<f64>> = out.iter().map(|o| self.rand(o.shape())).collect();
            let project = |l: &mut LmfLayer<f64>, xs: &[Tensor<f64>]| -> Result<f64> {
                l.forward(xs, BnMode::Train)?.iter().zip(&proj).map(|(o, r)| o.dot(r)).sum()
            };
            layer.zero_grad();
            layer.forward(&inputs, BnMode::Train)?;
            let analytic = layer.backward(&proj)?;
            let report = grad_check(&["map0", "map1"], &inputs, &analytic, self.opts.eps, Coords::All, |xs| {
                project(&mut layer, xs)
            });
            self.entries.push(SuiteEntry { name: format!("lmf layer {resample:?} inputs"), report });
            let report = grad_check_params_piecewise(&mut layer, self.opts.eps, Coords::All, |l| project(l, &inputs));
            self.entries.push(SuiteEntry { name: format!("lmf layer {resample:?} params"), report });
        }
        Ok(())
    }

    fn network(&mut self, config: &NetworkConfig) -> Result<()> {
        let i = config.input;
        let x = Tensor::uniform(Shape::new(2, i.channels, i.height, i.width), 0.0, 1.0, &mut self.rng);
        let coords = Coords::Sample { per_tensor: self.opts.per_tensor, seed: self.opts.seed };
        let eps = self.opts.eps;
        let report = if config.is_classifier() {
            let mut net = ClassifierNetwork::<f64>::new(config.clone(), &mut self.rng)?;
            let labels = [0usize, 1];
            let logits = net.forward(&x, BnMode::Train)?;
            let (_, g) = softmax_cross_entropy(&logits, &labels)?;
            net.backward(&g)?;
            grad_check_params_piecewise(&mut net, eps, coords, |n| softmax_cross_entropy(&n.forward(&x, BnMode::Train)?, &labels).map(|r| r.0))
        } else {
            let mut net = SodNetwork::<f64>::new(config.clone(), &mut self.rng)?;
            let gt = Tensor::from_fn(Shape::new(2, 1, i.height, i.width), |n, _, y, x| {
                if (y / 4 + x / 4 + n) % 3 == 0 { 1.0 } else { 0.0 }
            });
            let map = net.forward(&x, BnMode::Train)?.map;
            let (_, g) = hybrid_loss(&map, &gt, LossComponents::HYBRID)?;
            net.backward(&g)?;
            grad_check_params_piecewise(&mut net, eps, coords, |n| {
                Ok(hybrid_loss(&n.forward(&x, BnMode::Train)?.map, &gt, LossComponents::HYBRID)?.0.total)
            })
        };
        self.entries.push(SuiteEntry { name: "network".into(), report });
        Ok(())
    }
}

/// Runs every check in `f64`. Network coordinates whose perturbation crosses
/// a ReLU or pooling kink are skipped and counted in the report.
pub fn run_gradient_suite(network: &NetworkConfig, opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut suite = Suite { opts: opts.clone(), rng: ChaCha8Rng::seed_from_u64(opts.seed), entries: Vec::new() };
    suite.kernels()?;
    suite.losses()?;
    suite.layer()?;
    suite.network(network)?;
    Ok(SuiteReport { options: opts.clone(), entries: suite.entries })
}
