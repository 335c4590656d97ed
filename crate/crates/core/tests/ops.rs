use lmfnet::gradcheck::{grad_check, Coords, GradCheckReport};
use lmfnet::ops::*;
use lmfnet::{Result, Shape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(shape: Shape, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// Checks `backward` against the scalar loss `<r, forward(inputs)>` for a
/// fixed random projection `r`.
fn check_op(
    names: &[&str],
    inputs: &[Tensor<f64>],
    forward: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    backward: impl Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
) -> GradCheckReport {
    let out = forward(inputs).unwrap();
    let r = rand_t(out.shape(), 99);
    let analytic = backward(inputs, &r).unwrap();
    grad_check(names, inputs, &analytic, EPS, Coords::All, |xs| forward(xs)?.dot(&r))
}

fn assert_passes(what: &str, report: GradCheckReport) {
    assert!(report.passed(TOL), "{what}: {report:?}");
}

/// Nested-loop reference for the depthwise dilated cross-correlation.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, g: &ConvGeometry) -> Option<Tensor<f64>> {
    let s = x.shape();
    let (ho, wo) = (g.output_len(s.h)?, g.output_len(s.w)?);
    Some(Tensor::from_fn(Shape::new(s.n, s.c, ho, wo), |n, c, oy, ox| {
        let mut acc = 0.0;
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                    acc += w.at(c, 0, ky, kx) * x.at(n, c, iy as usize, ix as usize);
                }
            }
        }
        acc
    }))
}

fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn depthwise_matches_nested_loops_on_full_grid() {
    let mut cases = 0;
    for n in 1..=2 {
        for c in 1..=4 {
            for h in 1..=9 {
                for w in 1..=9 {
                    let x = rand_t(Shape::new(n, c, h, w), (n * 1000 + c * 100 + h * 10 + w) as u64);
                    for k in [1, 3, 5] {
                        let wt = rand_t(Shape::new(c, 1, k, k), (k * 7 + c) as u64);
                        for d in 1..=4 {
                            let geoms = [
                                ConvGeometry::same(k, d),
                                ConvGeometry { kernel: k, dilation: d, stride: 2, padding: d * (k - 1) / 2 },
                                ConvGeometry { kernel: k, dilation: d, stride: 1, padding: 0 },
                            ];
                            for g in geoms {
                                let got = conv2d_depthwise(&x, &wt, &g);
                                match conv_oracle(&x, &wt, &g) {
                                    None => assert!(got.is_err(), "{n}x{c}x{h}x{w} k{k} d{d} {g:?}"),
                                    Some(want) => {
                                        let got = got.unwrap();
                                        assert_eq!(got.shape(), want.shape());
                                        for (a, b) in got.data().iter().zip(want.data()) {
                                            assert!(close_rel(*a, *b, 1e-6), "{n}x{c}x{h}x{w} k{k} d{d} {g:?}: {a} vs {b}");
                                        }
                                    }
                                }
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    assert_eq!(cases, 2 * 4 * 81 * 3 * 4 * 3);
}

#[test]
fn same_padding_preserves_size_even_when_dilation_exceeds_input() {
    let x = rand_t(Shape::new(1, 2, 3, 4), 1);
    let w = rand_t(Shape::new(2, 1, 3, 3), 2);
    let y = conv2d_depthwise(&x, &w, &ConvGeometry::same(3, 6)).unwrap();
    assert_eq!(y.shape(), x.shape());
    // every off-centre tap lands in padding
    for c in 0..2 {
        for i in 0..12 {
            let (yy, xx) = (i / 4, i % 4);
            assert!((y.at(0, c, yy, xx) - w.at(c, 0, 1, 1) * x.at(0, c, yy, xx)).abs() < 1e-15);
        }
    }
}

#[test]
fn bad_geometry_is_a_shape_error() {
    let x = rand_t(Shape::new(1, 2, 5, 5), 1);
    assert!(conv2d_depthwise(&x, &rand_t(Shape::new(2, 1, 2, 2), 2), &ConvGeometry::same(2, 1)).is_err());
    assert!(conv2d_depthwise(&x, &rand_t(Shape::new(3, 1, 3, 3), 2), &ConvGeometry::same(3, 1)).is_err());
    assert!(conv2d_depthwise(&x, &rand_t(Shape::new(2, 1, 3, 3), 2), &ConvGeometry::same(3, 0)).is_err());
    assert!(conv2d_pointwise(&x, &rand_t(Shape::new(4, 3, 1, 1), 2), None).is_err());
}

#[test]
fn pointwise_example() {
    let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![3.0, 4.0]).unwrap();
    let w = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, 1.0, 2.0, -1.0]).unwrap();
    assert_eq!(conv2d_pointwise(&x, &w, None).unwrap().data(), &[7.0, 2.0]);
    let b = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.5, -2.0]).unwrap();
    assert_eq!(conv2d_pointwise(&x, &w, Some(&b)).unwrap().data(), &[7.5, 0.0]);
}

#[test]
fn upsample_example_and_oracle() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
    let y = upsample_bilinear2(&x).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 2, 4));
    for row in 0..2 {
        assert_eq!(&y.data()[row * 4..row * 4 + 4], &[0.0, 0.25, 0.75, 1.0]);
    }

    // half-pixel centres, edge-clamped
    let src = |o: usize, len: usize| ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
    let x = rand_t(Shape::new(2, 3, 5, 4), 3);
    let y = upsample_bilinear2(&x).unwrap();
    let want = Tensor::from_fn(y.shape(), |n, c, oy, ox| {
        let (fy, fx) = (src(oy, 5), src(ox, 4));
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(4), (x0 + 1).min(3));
        let (ay, ax) = (fy - y0 as f64, fx - x0 as f64);
        let top = x.at(n, c, y0, x0) * (1.0 - ax) + x.at(n, c, y0, x1) * ax;
        let bot = x.at(n, c, y1, x0) * (1.0 - ax) + x.at(n, c, y1, x1) * ax;
        top * (1.0 - ay) + bot * ay
    });
    for (a, b) in y.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn maxpool_picks_window_maxima() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 4), vec![1.0, 5.0, -1.0, -2.0, 3.0, 2.0, -4.0, -3.0]).unwrap();
    let (y, _) = maxpool2(&x).unwrap();
    assert_eq!(y.data(), &[5.0, -1.0]);
    assert!(maxpool2(&rand_t(Shape::new(1, 1, 3, 4), 1)).is_err());
}

#[test]
fn sigmoid_gradient_at_zero_is_a_quarter() {
    let x = Tensor::zeros(Shape::new(1, 1, 1, 1));
    let y = sigmoid(&x);
    assert_eq!(y.data(), &[0.5]);
    assert_eq!(sigmoid_backward(&y, &Tensor::full(y.shape(), 1.0)).unwrap().data(), &[0.25]);
}

#[test]
fn gradcheck_depthwise() {
    for (k, d, stride) in [(3, 1, 1), (3, 2, 1), (5, 3, 1), (3, 4, 1), (1, 1, 1), (3, 2, 2)] {
        let g = ConvGeometry { kernel: k, dilation: d, stride, padding: d * (k - 1) / 2 };
        let x = rand_t(Shape::new(2, 3, 6, 5), 10 + k as u64);
        let w = rand_t(Shape::new(3, 1, k, k), 20 + d as u64);
        let report = check_op(
            &["x", "w"],
            &[x, w],
            |t| conv2d_depthwise(&t[0], &t[1], &g),
            |t, r| {
                let (gx, gw) = conv2d_depthwise_backward(&t[0], &t[1], &g, r)?;
                Ok(vec![gx, gw])
            },
        );
        assert_passes(&format!("depthwise {g:?}"), report);
    }
}

#[test]
fn gradcheck_pointwise() {
    let x = rand_t(Shape::new(2, 3, 4, 3), 1);
    let w = rand_t(Shape::new(5, 3, 1, 1), 2);
    let b = rand_t(Shape::new(1, 5, 1, 1), 3);
    let report = check_op(
        &["x", "w", "bias"],
        &[x, w, b],
        |t| conv2d_pointwise(&t[0], &t[1], Some(&t[2])),
        |t, r| {
            let g = conv2d_pointwise_backward(&t[0], &t[1], true, r)?;
            Ok(vec![g.input, g.weight, g.bias.expect("bias requested")])
        },
    );
    assert_passes("pointwise", report);
}

#[test]
fn gradcheck_batchnorm_train_and_eval() {
    let x = rand_t(Shape::new(2, 3, 4, 4), 4);
    let gamma = Tensor::uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, &mut rng(5));
    let beta = rand_t(Shape::new(1, 3, 1, 1), 6);
    let report = check_op(
        &["x", "gamma", "beta"],
        &[x.clone(), gamma.clone(), beta.clone()],
        |t| Ok(batchnorm_train(&t[0], &t[1], &t[2])?.0),
        |t, r| {
            let (_, cache) = batchnorm_train(&t[0], &t[1], &t[2])?;
            let (gx, gg, gb) = batchnorm_backward(&cache, &t[1], r)?;
            Ok(vec![gx, gg, gb])
        },
    );
    assert_passes("batchnorm train", report);

    let (rm, rv) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
    let report = check_op(
        &["x"],
        &[x],
        |t| batchnorm_eval(&t[0], &gamma, &beta, &rm, &rv),
        |_, r| Ok(vec![batchnorm_eval_backward(&gamma, &rv, r)]),
    );
    assert_passes("batchnorm eval", report);
}

#[test]
fn gradcheck_activations() {
    // keep samples away from the ReLU kink
    let x = rand_t(Shape::new(2, 2, 3, 3), 7).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let report = check_op(&["x"], &[x.clone()], |t| Ok(relu(&t[0])), |t, r| Ok(vec![relu_backward(&t[0], r)?]));
    assert_passes("relu", report);
    let x = x.map(|v| v * 4.0);
    let report =
        check_op(&["x"], &[x], |t| Ok(sigmoid(&t[0])), |t, r| Ok(vec![sigmoid_backward(&sigmoid(&t[0]), r)?]));
    assert_passes("sigmoid", report);
}

#[test]
fn gradcheck_pool_upsample_gap() {
    // a shuffled ramp has no ties within EPS
    let mut vals: Vec<f64> = (0..2 * 3 * 4 * 6).map(|i| i as f64 * 0.01).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut rng(8));
    let x = Tensor::from_vec(Shape::new(2, 3, 4, 6), vals).unwrap();
    let report = check_op(
        &["x"],
        &[x.clone()],
        |t| Ok(maxpool2(&t[0])?.0),
        |t, r| Ok(vec![maxpool2_backward(&maxpool2(&t[0])?.1, r)?]),
    );
    assert_passes("maxpool2", report);

    let s = x.shape();
    let report = check_op(
        &["x"],
        &[x.clone()],
        |t| upsample_bilinear2(&t[0]),
        |_, r| Ok(vec![upsample_bilinear2_backward(s, r)?]),
    );
    assert_passes("upsample", report);

    let report =
        check_op(&["x"], &[x], |t| Ok(global_avg_pool(&t[0])), |_, r| Ok(vec![global_avg_pool_backward(s, r)?]));
    assert_passes("global_avg_pool", report);
}

#[test]
fn gradcheck_concat_split_and_map_packing() {
    let a = rand_t(Shape::new(2, 2, 3, 3), 1);
    let b = rand_t(Shape::new(2, 3, 3, 3), 2);
    let report = check_op(
        &["a", "b"],
        &[a.clone(), b],
        |t| concat_channels(&[&t[0], &t[1]]),
        |_, r| split_channels(r, &[2, 3]),
    );
    assert_passes("concat", report);

    let x = rand_t(Shape::new(6, 2, 3, 3), 3);
    let report =
        check_op(&["x"], &[x], |t| maps_to_channels(&t[0], 3), |_, r| Ok(vec![channels_to_maps(r, 3)?]));
    assert_passes("maps_to_channels", report);
}

#[test]
fn concat_split_and_map_packing_invert() {
    let a = rand_t(Shape::new(2, 2, 3, 3), 1);
    let b = rand_t(Shape::new(2, 1, 3, 3), 2);
    let parts = split_channels(&concat_channels(&[&a, &b]).unwrap(), &[2, 1]).unwrap();
    assert_eq!(parts, vec![a, b]);
    assert!(split_channels(&rand_t(Shape::new(1, 3, 1, 1), 1), &[1, 1]).is_err());
    let x = rand_t(Shape::new(6, 2, 2, 2), 3);
    let packed = maps_to_channels(&x, 3).unwrap();
    assert_eq!(packed.shape(), Shape::new(2, 6, 2, 2));
    // map j of item i occupies channels [j·c, (j+1)·c)
    assert_eq!(packed.at(1, 2 * 2 + 1, 0, 1), x.at(2 * 2 + 1, 1, 0, 1));
    assert_eq!(channels_to_maps(&packed, 3).unwrap(), x);
}

fn shape_strategy() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..3, 1usize..4, 1usize..7, 1usize..7)
}

fn tensor_in(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, &mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_finite((n, c, h, w) in shape_strategy(), seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5]), d in 1usize..5) {
        let s = Shape::new(n, c, 2 * h, 2 * w);
        let x = tensor_in(s, seed, -10.0, 10.0);
        let wt = tensor_in(Shape::new(c, 1, k, k), seed ^ 1, -10.0, 10.0);
        let pw = tensor_in(Shape::new(3, c, 1, 1), seed ^ 2, -10.0, 10.0);
        let gamma = tensor_in(Shape::new(1, c, 1, 1), seed ^ 3, -10.0, 10.0);
        let beta = tensor_in(Shape::new(1, c, 1, 1), seed ^ 4, -10.0, 10.0);
        prop_assert!(conv2d_depthwise(&x, &wt, &ConvGeometry::same(k, d)).unwrap().is_finite());
        prop_assert!(conv2d_pointwise(&x, &pw, None).unwrap().is_finite());
        prop_assert!(batchnorm_train(&x, &gamma, &beta).unwrap().0.is_finite());
        prop_assert!(relu(&x).is_finite());
        prop_assert!(sigmoid(&x).is_finite());
        prop_assert!(maxpool2(&x).unwrap().0.is_finite());
        prop_assert!(upsample_bilinear2(&x).unwrap().is_finite());
        prop_assert!(global_avg_pool(&x).is_finite());
    }

    #[test]
    fn convolutions_are_linear_in_the_input((n, c, h, w) in shape_strategy(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, d in 1usize..4) {
        let s = Shape::new(n, c, h, w);
        let (x, y) = (tensor_in(s, seed, -1.0, 1.0), tensor_in(s, seed ^ 9, -1.0, 1.0));
        let combo = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let wt = tensor_in(Shape::new(c, 1, 3, 3), seed ^ 5, -1.0, 1.0);
        let pw = tensor_in(Shape::new(2, c, 1, 1), seed ^ 6, -1.0, 1.0);
        let g = ConvGeometry::same(3, d);
        type Op = Box<dyn Fn(&Tensor<f64>) -> Tensor<f64>>;
        let ops: Vec<Op> = vec![
            Box::new(move |t| conv2d_depthwise(t, &wt, &g).unwrap()),
            Box::new(move |t| conv2d_pointwise(t, &pw, None).unwrap()),
            Box::new(|t| upsample_bilinear2(t).unwrap()),
        ];
        for op in &ops {
            let lhs = op(&combo);
            let rhs = op(&x).zip_map(&op(&y), |p, q| a * p + b * q).unwrap();
            for (u, v) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((u - v).abs() <= 1e-5 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn backward_is_the_adjoint((n, c, h, w) in shape_strategy(), seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5]), d in 1usize..4, stride in 1usize..3) {
        let s = Shape::new(n, c, h, w);
        let x = tensor_in(s, seed, -1.0, 1.0);
        let adj = |lx: &Tensor<f64>, y: &Tensor<f64>, lty: &Tensor<f64>, x: &Tensor<f64>| {
            let (l, r) = (lx.dot(y).unwrap(), x.dot(lty).unwrap());
            (l - r).abs() <= 1e-10 * (1.0 + l.abs())
        };

        let wt = tensor_in(Shape::new(c, 1, k, k), seed ^ 1, -1.0, 1.0);
        let g = ConvGeometry { kernel: k, dilation: d, stride, padding: d * (k - 1) / 2 };
        let lx = conv2d_depthwise(&x, &wt, &g).unwrap();
        let y = tensor_in(lx.shape(), seed ^ 2, -1.0, 1.0);
        let (gx, gw) = conv2d_depthwise_backward(&x, &wt, &g, &y).unwrap();
        prop_assert!(adj(&lx, &y, &gx, &x));
        // the output is also linear in the weight
        prop_assert!(adj(&lx, &y, &gw, &wt));

        let pw = tensor_in(Shape::new(4, c, 1, 1), seed ^ 3, -1.0, 1.0);
        let lx = conv2d_pointwise(&x, &pw, None).unwrap();
        let y = tensor_in(lx.shape(), seed ^ 4, -1.0, 1.0);
        prop_assert!(adj(&lx, &y, &conv2d_pointwise_backward(&x, &pw, false, &y).unwrap().input, &x));

        let lx = upsample_bilinear2(&x).unwrap();
        let y = tensor_in(lx.shape(), seed ^ 5, -1.0, 1.0);
        prop_assert!(adj(&lx, &y, &upsample_bilinear2_backward(s, &y).unwrap(), &x));

        let lx = global_avg_pool(&x);
        let y = tensor_in(lx.shape(), seed ^ 6, -1.0, 1.0);
        prop_assert!(adj(&lx, &y, &global_avg_pool_backward(s, &y).unwrap(), &x));
    }

    #[test]
    fn random_geometry_gradchecks(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5]), d in 1usize..4, h in 2usize..6, w in 2usize..6) {
        let g = ConvGeometry::same(k, d);
        let x = tensor_in(Shape::new(1, 2, h, w), seed, -1.0, 1.0);
        let wt = tensor_in(Shape::new(2, 1, k, k), seed ^ 1, -1.0, 1.0);
        let report = check_op(
            &["x", "w"],
            &[x, wt],
            |t| conv2d_depthwise(&t[0], &t[1], &g),
            |t, r| {
                let (gx, gw) = conv2d_depthwise_backward(&t[0], &t[1], &g, r)?;
                Ok(vec![gx, gw])
            },
        );
        prop_assert!(report.passed(TOL), "{:?}", report);
    }
}
