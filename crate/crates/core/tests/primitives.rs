mod common;

use common::{max_abs_diff, random};
use detailnet::tensor::ops::{self, BnAffine};
use detailnet::{Backend, Eager, Error, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(dims.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn global_avg_pool_examples() {
    let c = ops::global_avg_pool(&Tensor::full([2, 3, 4, 5], 1.75f64)).unwrap();
    assert_eq!(c.dims(), [2, 3, 1, 1]);
    assert!(c.data().iter().all(|&v| v == 1.75));
    let m = ops::global_avg_pool(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    assert_eq!(m.data(), &[2.5]);
    let g = ops::global_avg_pool_backward::<f64>(&[1, 2, 3, 4], &Tensor::ones([1, 2, 1, 1])).unwrap();
    assert!(g.data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
}

#[test]
fn global_avg_pool_gradient_by_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[1, 2, 3, 3], &mut rng);
    let analytic = ops::global_avg_pool_backward::<f64>(x.dims(), &Tensor::ones([1, 2, 1, 1])).unwrap();
    let eps = 1e-3;
    for i in 0..x.len() {
        let mut hi = x.clone();
        hi.data_mut()[i] += eps;
        let mut lo = x.clone();
        lo.data_mut()[i] -= eps;
        let f = |t: &Tensor<f64>| ops::global_avg_pool(t).unwrap().sum();
        let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
        assert!((fd - analytic.data()[i]).abs() < 1e-10);
    }
}

#[test]
fn bilinear_upsample_examples() {
    let mut b = Eager::<f64>::new();
    let c = b.constant(Tensor::full([1, 2, 3, 4], -0.5));
    let up = b.upsample_bilinear(&c, 2).unwrap();
    assert_eq!(up.dims(), [1, 2, 6, 8]);
    assert!(up.data().iter().all(|&v| v == -0.5));
    let one = b.constant(t(&[1, 1, 1, 1], &[3.25]));
    assert_eq!(b.upsample_bilinear(&one, 2).unwrap().data(), &[3.25; 4]);
    let x = b.constant(t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    assert!(b.upsample_bilinear(&x, 1).unwrap().bitwise_eq(&b.value(&x).clone()));
    assert!(matches!(b.upsample_bilinear(&x, 0), Err(Error::Config(_))));
}

/// Half-pixel centres: output column j samples source position
/// (j + 0.5)/f − 0.5, clamped to the edge samples.
#[test]
fn bilinear_ramp_matches_closed_form() {
    let w = 7;
    let ramp = Tensor::from_fn([1, 1, 3, w], |i| 0.3 + 1.7 * (i % w) as f64);
    for f in [2usize, 3] {
        let up = ops::resize_bilinear(&ramp, 3 * f, w * f).unwrap();
        for (i, &v) in up.data().iter().enumerate() {
            let j = i % (w * f);
            let src = ((j as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let expect = 0.3 + 1.7 * src;
            assert!((v - expect).abs() <= 1e-6, "f={f} j={j}: {v} vs {expect}");
        }
    }
}

#[test]
fn pointwise_examples() {
    let x = t(&[2], &[-1.0, 2.5]);
    assert_eq!(ops::relu(&x).data(), &[0.0, 2.5]);
    assert_eq!(ops::sigmoid(&t(&[1], &[0.0])).data(), &[0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = random(&[2, 3, 4, 4], &mut rng);
    assert!(ops::channel_scale(&map, &Tensor::ones([2, 3, 1, 1]))
        .unwrap()
        .bitwise_eq(&map));
    let sp = ops::softplus(&t(&[3], &[-30.0, 0.0, 30.0]));
    assert!(sp.data().iter().all(|&v| v > 0.0));
}

#[test]
fn elementwise_shape_errors() {
    let a = Tensor::<f64>::zeros([1, 2, 3, 3]);
    assert!(matches!(
        ops::add(&a, &Tensor::zeros([1, 2, 3, 4])),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        ops::concat_channels(&a, &Tensor::zeros([1, 2, 4, 3])),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        ops::channel_scale(&a, &Tensor::zeros([1, 3, 1, 1])),
        Err(Error::Shape(_))
    ));
    let cat = ops::concat_channels(&a, &Tensor::ones([1, 5, 3, 3])).unwrap();
    assert_eq!(cat.dims(), [1, 7, 3, 3]);
    assert_eq!(cat.sum(), 45.0);
}

#[test]
fn frozen_batchnorm_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 4, 4], &mut rng);
    let eps = 1e-5;
    let identity = BnAffine::from_stats(
        &Tensor::ones([3]),
        &Tensor::zeros([3]),
        &Tensor::zeros([3]),
        &Tensor::full([3], 1.0 - eps),
        eps,
    )
    .unwrap();
    assert!(max_abs_diff(&identity.apply(&x).unwrap(), &x) < 1e-15);

    let beta = t(&[3], &[0.5, -1.0, 2.0]);
    let zero = BnAffine::from_stats(
        &Tensor::zeros([3]),
        &beta,
        &random(&[3], &mut rng),
        &Tensor::ones([3]),
        eps,
    )
    .unwrap();
    for (i, &v) in zero.apply(&x).unwrap().data().iter().enumerate() {
        assert_eq!(v, beta.data()[(i / 16) % 3]);
    }

    let (g, b, m) = (random(&[3], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng));
    let var = random(&[3], &mut rng).map(|v| v.abs() + 0.1);
    let y = BnAffine::from_stats(&g, &b, &m, &var, eps).unwrap().apply(&x).unwrap();
    for (i, &v) in y.data().iter().enumerate() {
        let c = (i / 16) % 3;
        let expect = (x.data()[i] - m.data()[c]) / (var.data()[c] + eps).sqrt() * g.data()[c] + b.data()[c];
        assert!((v - expect).abs() <= 1e-6);
    }

    let negative = BnAffine::from_stats(&g, &b, &m, &t(&[3], &[1.0, -0.1, 1.0]), eps);
    assert!(matches!(negative, Err(Error::Data(_))));
}

#[test]
fn relu_derivative_on_positive_side() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1], &[3.0]));
    let y = g.relu(&x).unwrap();
    let s = g.sum(&y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.of(x).unwrap().data(), &[1.0]);
}

#[test]
fn backward_usage_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::ones([2]));
    assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::ones([2]));
    let s = g.sum(&x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Usage(_))));
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let a = g.parameter("a", &Tensor::full([2], 2.0), true);
    let b = g.parameter("b", &Tensor::full([2], 3.0), false);
    let p = g.mul(&a, &b).unwrap();
    let s = g.sum(&p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.named("a").unwrap().data(), &[3.0, 3.0]);
    assert!(grads.named("b").is_none());
}

/// A value used twice receives the sum of both paths' gradients.
#[test]
fn fan_out_accumulates() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.5, -2.0]));
    let y = g.mul(&x, &x).unwrap();
    let z = g.add(&y, &x).unwrap();
    let s = g.sum(&z).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.of(x).unwrap().data(), &[4.0, -3.0]);
}

#[test]
fn log_l1_examples() {
    let truth = t(&[1, 1, 2, 2], &[1.0, 2.0, 0.5, 3.0]);
    let all = [true; 4];
    assert_eq!(ops::log_l1_loss(&truth, &truth, &all).unwrap().loss, 0.0);
    let e = t(&[1], &[std::f64::consts::E - 1.0]);
    let l = ops::log_l1_loss(&t(&[1], &[0.0]), &e, &[true]).unwrap().loss;
    assert!((l - 1.0).abs() < 1e-15);

    let pred = t(&[1, 1, 2, 2], &[1.0, 2.0, 9.0, 3.0]);
    let masked = ops::log_l1_loss(&pred, &truth, &[true, true, false, true])
        .unwrap()
        .loss;
    assert_eq!(masked, 0.0);
    assert!(matches!(
        ops::log_l1_loss(&pred, &truth, &[false; 4]),
        Err(Error::Data(_))
    ));
    let negative = t(&[1, 1, 2, 2], &[1.0, -2.0, 0.5, 3.0]);
    assert!(matches!(ops::log_l1_loss(&pred, &negative, &all), Err(Error::Data(_))));
}

#[test]
fn log_l1_positive_unless_equal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let truth = random(&[1, 1, 3, 3], &mut rng).map(|v| v.abs() * 4.0);
        let mut pred = truth.clone();
        let i = (truth.data()[0] * 1000.0) as usize % 9;
        pred.data_mut()[i] += 0.01;
        assert!(ops::log_l1_loss(&pred, &truth, &[true; 9]).unwrap().loss > 0.0);
    }
}

#[test]
fn max_pool_shapes_and_values() {
    let x = Tensor::from_fn([1, 1, 4, 4], |i| i as f64);
    let y = ops::max_pool2d(&x, 3, 2).unwrap();
    assert_eq!(y.dims(), [1, 1, 2, 2]);
    // Same padding puts the odd padding row and column at the bottom and right.
    assert_eq!(y.data(), &[10.0, 11.0, 14.0, 15.0]);
}

#[test]
fn deterministic_flag_gives_identical_bits() {
    detailnet::tensor::exec::set_deterministic(true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 8, 16, 16], &mut rng);
    let w = random(&[8, 8, 3, 3], &mut rng);
    let spec = detailnet::ConvSpec::new(8, 8, 3).with_dilation(2);
    let a = ops::relu(&detailnet::tensor::conv::conv2d(&x, &w, &Tensor::zeros([8]), &spec).unwrap());
    let b = ops::relu(&detailnet::tensor::conv::conv2d(&x, &w, &Tensor::zeros([8]), &spec).unwrap());
    detailnet::tensor::exec::set_deterministic(false);
    assert!(a.bitwise_eq(&b));
}
