use lmfnet::gradcheck::{grad_check, grad_check_params, grad_check_params_piecewise, Coords};
use lmfnet::layer::{lmf_param_count, truncate_dilation_vector, LmfConfig, LmfLayer, Resample};
use lmfnet::losses::{hybrid_loss, LossComponents};
use lmfnet::net::{SodBlueprint, SodNetwork};
use lmfnet::ops::BnMode;
use lmfnet::{Parameterized, Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn config(dilations: &[usize], inputs: usize, ci: usize, co: usize, resample: Resample) -> LmfConfig {
    LmfConfig { dilations: dilations.to_vec(), inputs, in_channels: ci, out_channels: co, kernel: 3, resample }
}

fn maps(m: usize, shape: Shape, seed: u64) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    (0..m).map(|_| Tensor::uniform(shape, -1.0, 1.0, &mut r)).collect()
}

#[test]
fn parameter_count_example() {
    let cfg = config(&[1, 2, 3, 4, 5], 3, 32, 32, Resample::None);
    // 5·9·32 depthwise + 5·3·32·32 fusion + 5·(2·32 + 2·32) batch norm
    assert_eq!(lmf_param_count(&cfg), 1440 + 15360 + 640);
    let layer = LmfLayer::<f32>::new(cfg.clone(), &mut rng(1)).unwrap();
    assert_eq!(layer.num_params(), lmf_param_count(&cfg));
}

#[test]
fn parameter_count_equals_enumeration_for_random_configs() {
    let mut r = rng(2);
    for _ in 0..50 {
        let n = r.gen_range(1..7);
        let cfg = LmfConfig {
            dilations: (0..n).map(|_| r.gen_range(1..9)).collect(),
            inputs: r.gen_range(1..6),
            in_channels: r.gen_range(1..20),
            out_channels: r.gen_range(1..20),
            kernel: [1, 3, 5][r.gen_range(0..3)],
            resample: Resample::None,
        };
        let layer = LmfLayer::<f32>::new(cfg.clone(), &mut r).unwrap();
        assert_eq!(layer.num_params(), lmf_param_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn dilation_vectors_truncate_to_a_prefix() {
    let base = [1, 2, 3, 4, 5, 6];
    assert_eq!(truncate_dilation_vector(&base, 3).unwrap(), vec![1, 2, 3]);
    assert!(truncate_dilation_vector(&base, 0).is_err());
    assert!(truncate_dilation_vector(&base, 7).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        config(&[], 1, 4, 4, Resample::None),
        config(&[1, 0], 1, 4, 4, Resample::None),
        config(&[1], 0, 4, 4, Resample::None),
        config(&[1], 1, 0, 4, Resample::None),
        LmfConfig { kernel: 4, ..config(&[1], 1, 4, 4, Resample::None) },
    ];
    for cfg in bad {
        assert!(LmfLayer::<f64>::new(cfg.clone(), &mut rng(1)).is_err(), "{cfg:?}");
    }
}

#[test]
fn output_shapes_follow_branches_and_resampling() {
    let s = Shape::new(2, 8, 16, 16);
    for (resample, hw) in [(Resample::None, 16), (Resample::Pool, 8), (Resample::Upsample, 32)] {
        let mut layer = LmfLayer::new(config(&[1, 2, 3], 2, 8, 8, resample), &mut rng(3)).unwrap();
        let out = layer.forward(&maps(2, s, 4), BnMode::Train).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert_eq!(o.shape(), Shape::new(2, 8, hw, hw));
            assert!(o.data().iter().all(|v| *v >= 0.0));
        }
        assert_eq!(layer.output_hw(16, 16), (hw, hw));
    }
}

#[test]
fn pool_then_upsample_restores_dims() {
    let s = Shape::new(1, 4, 12, 10);
    let mut down = LmfLayer::new(config(&[1, 2], 1, 4, 6, Resample::Pool), &mut rng(5)).unwrap();
    let mut up = LmfLayer::new(config(&[1, 3], 2, 6, 4, Resample::Upsample), &mut rng(6)).unwrap();
    let mid = down.forward(&maps(1, s, 7), BnMode::Train).unwrap();
    let out = up.forward(&mid, BnMode::Train).unwrap();
    assert!(out.iter().all(|o| o.shape() == s));
}

#[test]
fn wrong_inputs_are_shape_errors() {
    let mut layer = LmfLayer::new(config(&[1, 2], 2, 4, 4, Resample::Pool), &mut rng(1)).unwrap();
    assert!(layer.forward(&maps(1, Shape::new(1, 4, 8, 8), 1), BnMode::Train).is_err());
    assert!(layer.forward(&maps(2, Shape::new(1, 3, 8, 8), 1), BnMode::Train).is_err());
    assert!(layer.forward(&maps(2, Shape::new(1, 4, 7, 8), 1), BnMode::Train).is_err());
    let mixed = vec![maps(1, Shape::new(1, 4, 8, 8), 1).remove(0), maps(1, Shape::new(1, 4, 6, 8), 2).remove(0)];
    assert!(layer.forward(&mixed, BnMode::Train).is_err());
    assert!(layer.backward(&maps(2, Shape::new(1, 4, 4, 4), 1)).is_err());
}

#[test]
fn every_output_depends_on_every_input() {
    let (m, n) = (3, 4);
    let s = Shape::new(2, 3, 8, 8);
    let mut layer = LmfLayer::new(config(&[1, 2, 3, 4], m, 3, 5, Resample::None), &mut rng(8)).unwrap();
    let inputs = maps(m, s, 9);
    for j in 0..n {
        let out = layer.forward(&inputs, BnMode::Train).unwrap();
        let grads: Vec<Tensor<f64>> = out
            .iter()
            .enumerate()
            .map(|(i, o)| Tensor::full(o.shape(), if i == j { 1.0 } else { 0.0 }))
            .collect();
        let gin = layer.backward(&grads).unwrap();
        assert_eq!(gin.len(), m);
        for (i, g) in gin.iter().enumerate() {
            assert!(g.max_abs() > 0.0, "output {j} ignores input {i}");
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let mut layer = LmfLayer::new(config(&[1, 2, 5], 2, 3, 4, Resample::Pool), &mut rng(10)).unwrap();
    let out = layer.forward(&maps(2, Shape::new(2, 3, 8, 8), 11), BnMode::Train).unwrap();
    let grads: Vec<Tensor<f64>> = out.iter().map(|o| Tensor::uniform(o.shape(), -1.0, 1.0, &mut rng(12))).collect();
    layer.backward(&grads).unwrap();
    let mut zero = Vec::new();
    layer.visit_params("", &mut |name, p| {
        if p.grad.max_abs() == 0.0 {
            zero.push(name.to_string());
        }
    });
    assert!(zero.is_empty(), "{zero:?}");
}

fn projected_loss(layer: &mut LmfLayer<f64>, inputs: &[Tensor<f64>], proj: &[Tensor<f64>]) -> lmfnet::Result<f64> {
    let out = layer.forward(inputs, BnMode::Train)?;
    out.iter().zip(proj).map(|(o, r)| o.dot(r)).sum()
}

fn layer_gradcheck(resample: Resample, seed: u64) {
    let s = Shape::new(2, 3, 6, 6);
    let mut layer = LmfLayer::new(config(&[1, 2, 4], 2, 3, 4, resample), &mut rng(seed)).unwrap();
    let inputs = maps(2, s, seed + 1);
    let out = layer.forward(&inputs, BnMode::Train).unwrap();
    let proj: Vec<Tensor<f64>> = out.iter().map(|o| Tensor::uniform(o.shape(), -1.0, 1.0, &mut rng(seed + 2))).collect();
    layer.zero_grad();
    layer.forward(&inputs, BnMode::Train).unwrap();
    let analytic = layer.backward(&proj).unwrap();

    let report = grad_check(&["map0", "map1"], &inputs, &analytic, EPS, Coords::All, |xs| {
        projected_loss(&mut layer, xs, &proj)
    });
    assert!(report.passed(TOL), "{resample:?} inputs: {report:?}");
    let report = grad_check_params(&mut layer, EPS, Coords::All, |l| projected_loss(l, &inputs, &proj));
    assert!(report.passed(TOL), "{resample:?} params: {report:?}");
}

#[test]
fn layer_gradients_match_finite_differences() {
    layer_gradcheck(Resample::None, 20);
    layer_gradcheck(Resample::Pool, 30);
    layer_gradcheck(Resample::Upsample, 40);
}

#[test]
fn network_gradients_match_finite_differences_through_hybrid_loss() {
    let cfg = SodBlueprint::tiny(8).build(32, 32).unwrap();
    let mut net = SodNetwork::<f64>::new(cfg, &mut rng(50)).unwrap();
    let x = Tensor::uniform(Shape::new(2, 3, 32, 32), 0.0, 1.0, &mut rng(51));
    let gt = Tensor::from_fn(Shape::new(2, 1, 32, 32), |n, _, y, x| if (y / 4 + x / 4 + n) % 3 == 0 { 1.0 } else { 0.0 });
    let loss = |net: &mut SodNetwork<f64>| -> lmfnet::Result<f64> {
        let map = net.forward(&x, BnMode::Train)?.map;
        Ok(hybrid_loss(&map, &gt, LossComponents::HYBRID)?.0.total)
    };

    net.zero_grad();
    let map = net.forward(&x, BnMode::Train).unwrap().map;
    let (_, g) = hybrid_loss(&map, &gt, LossComponents::HYBRID).unwrap();
    net.backward(&g).unwrap();
    let report = grad_check_params_piecewise(&mut net, EPS, Coords::Sample { per_tensor: 4, seed: 52 }, loss);
    println!("network gradcheck: {} checked, {} skipped at kinks, worst {:.3e}", report.checked(), report.skipped(), report.max_rel_error());
    assert!(report.tensors.len() > 100);
    assert!(report.checked() >= 500 && report.checked() >= report.skipped(), "{} checked, {} skipped", report.checked(), report.skipped());
    assert!(report.passed(TOL), "worst {}: {report:?}", report.max_rel_error());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_are_finite_and_nonnegative(seed in any::<u64>(), m in 1usize..4, n in 1usize..4, c in 1usize..5, hw in 1usize..5) {
        let dilations: Vec<usize> = (1..=n).collect();
        let s = Shape::new(2, c, 2 * hw, 2 * hw);
        for resample in [Resample::None, Resample::Pool, Resample::Upsample] {
            let mut layer = LmfLayer::new(config(&dilations, m, c, 3, resample), &mut rng(seed)).unwrap();
            let x: Vec<Tensor<f64>> = (0..m).map(|i| Tensor::uniform(s, -10.0, 10.0, &mut rng(seed ^ i as u64))).collect();
            for mode in [BnMode::Train, BnMode::Eval] {
                let out = layer.forward(&x, mode).unwrap();
                prop_assert_eq!(out.len(), n);
                for o in &out {
                    prop_assert!(o.is_finite());
                    prop_assert!(o.data().iter().all(|v| *v >= 0.0));
                }
            }
        }
    }
}
