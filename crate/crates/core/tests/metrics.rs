use detailnet::metrics::{compute_metrics, Aggregation, MetricsAccumulator, THRESHOLDS};
use detailnet::{Error, Tensor};
use proptest::prelude::*;

fn map(h: usize, w: usize, v: Vec<f64>) -> Tensor<f64> {
    Tensor::new([h, w], v).unwrap()
}

#[test]
fn perfect_prediction() {
    let t = map(2, 3, vec![0.5, 1.0, 2.0, 3.0, 4.0, 9.5]);
    let r = compute_metrics(&t, &t, &[true; 6]).unwrap();
    assert_eq!((r.rel, r.rms, r.log10), (0.0, 0.0, 0.0));
    assert_eq!(r.deltas(), [1.0; 3]);
    assert_eq!(r.pixel_count, 6);
}

#[test]
fn single_pixel_closed_forms() {
    let r = compute_metrics(&map(1, 1, vec![1.0]), &map(1, 1, vec![2.0]), &[true]).unwrap();
    assert_eq!((r.rel, r.rms, r.log10), (0.5, 1.0, 2f64.log10()));
    // 1.25³ = 1.953125 < 2, so even the widest threshold fails.
    assert_eq!(r.deltas(), [0.0; 3]);

    let r = compute_metrics(&map(1, 1, vec![6.0]), &map(1, 1, vec![5.0]), &[true]).unwrap();
    assert_eq!((r.rel, r.delta1), (0.2, 1.0));
    assert_eq!(THRESHOLDS, [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25]);
}

#[test]
fn threshold_is_strict() {
    let r = compute_metrics(&map(1, 1, vec![1.25]), &map(1, 1, vec![1.0]), &[true]).unwrap();
    assert_eq!(r.deltas(), [0.0, 1.0, 1.0]);
}

#[test]
fn masked_pixels_are_ignored() {
    let pred = map(1, 2, vec![1.0, 100.0]);
    let truth = map(1, 2, vec![1.0, 0.0]);
    let r = compute_metrics(&pred, &truth, &[true, false]).unwrap();
    assert_eq!((r.rel, r.pixel_count), (0.0, 1));
}

#[test]
fn errors() {
    let one = map(1, 1, vec![1.0]);
    assert!(matches!(compute_metrics(&one, &one, &[false]), Err(Error::Data(_))));
    assert!(matches!(
        compute_metrics(&map(1, 1, vec![0.0]), &one, &[true]),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        compute_metrics(&one, &one, &[true, true]),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        MetricsAccumulator::new(Aggregation::Pixel).finish(),
        Err(Error::Data(_))
    ));
    assert!("median".parse::<Aggregation>().is_err());
}

#[test]
fn aggregation_oracles() {
    let p1 = map(1, 2, vec![1.0, 3.0]);
    let t1 = map(1, 2, vec![2.0, 3.0]);
    let p2 = map(1, 1, vec![4.0]);
    let t2 = map(1, 1, vec![5.0]);
    let single = compute_metrics(&p1, &t1, &[true; 2]).unwrap();

    let mut acc = MetricsAccumulator::new(Aggregation::Pixel);
    acc.add(&p1, &t1, &[true; 2]).unwrap();
    assert_eq!(acc.finish().unwrap(), single);
    acc.add(&p1, &t1, &[true; 2]).unwrap();
    let dup = acc.finish().unwrap();
    assert!((dup.rel - single.rel).abs() < 1e-15 && (dup.rms - single.rms).abs() < 1e-15);
    assert_eq!(dup.deltas(), single.deltas());

    // Three pixels, weighted equally: rel = (1/2 + 0 + 1/5) / 3.
    let mut acc = MetricsAccumulator::new(Aggregation::Pixel);
    acc.add(&p1, &t1, &[true; 2]).unwrap();
    acc.add(&p2, &t2, &[true]).unwrap();
    let r = acc.finish().unwrap();
    assert!((r.rel - 0.7 / 3.0).abs() < 1e-15);
    assert!((r.rms - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert!((r.log10 - (2f64.log10() + (5f64 / 4.0).log10()) / 3.0).abs() < 1e-15);
    assert_eq!(r.deltas(), [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
    assert_eq!(r.pixel_count, 3);

    let mut img = MetricsAccumulator::new(Aggregation::Image);
    img.add(&p1, &t1, &[true; 2]).unwrap();
    img.add(&p2, &t2, &[true]).unwrap();
    let r = img.finish().unwrap();
    assert!((r.rel - (0.25 + 0.2) / 2.0).abs() < 1e-15);
}

#[test]
fn prediction_is_resized_to_truth() {
    let pred = Tensor::<f64>::full([1, 1, 2, 2], 3.0);
    let truth = map(4, 4, vec![3.0; 16]);
    let r = compute_metrics(&pred, &truth, &[true; 16]).unwrap();
    assert_eq!((r.rel, r.pixel_count), (0.0, 16));
}

#[test]
fn scaling_up_increases_rel() {
    let truth = map(2, 2, vec![0.7, 1.5, 2.0, 3.3]);
    let mut prev = 0.0;
    for c in [1.01, 1.1, 1.5, 3.0] {
        let pred = truth.map(|v| v * c);
        let rel = compute_metrics(&pred, &truth, &[true; 4]).unwrap().rel;
        assert!(rel > prev);
        prev = rel;
    }
}

fn flip(t: &Tensor<f64>) -> Tensor<f64> {
    let [h, w] = *t.dims() else { unreachable!() };
    let v = (0..h * w).map(|i| t.data()[i / w * w + (w - 1 - i % w)]).collect();
    map(h, w, v)
}

fn pair() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>, Vec<bool>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
        let n = h * w;
        (
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(prop::bool::weighted(0.8), n),
        )
            .prop_map(move |(p, t, mut m)| {
                m[0] = true;
                (map(h, w, p), map(h, w, t), m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flip_equivariance((pred, truth, mask) in pair()) {
        let [h, w] = *truth.dims() else { unreachable!() };
        let fmask: Vec<bool> = (0..h * w).map(|i| mask[i / w * w + (w - 1 - i % w)]).collect();
        let a = compute_metrics(&pred, &truth, &mask).unwrap();
        let b = compute_metrics(&flip(&pred), &flip(&truth), &fmask).unwrap();
        prop_assert_eq!(a.pixel_count, b.pixel_count);
        prop_assert_eq!(a.deltas(), b.deltas());
        for (x, y) in [(a.rel, b.rel), (a.rms, b.rms), (a.log10, b.log10)] {
            prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn thresholds_nest((pred, truth, mask) in pair()) {
        let r = compute_metrics(&pred, &truth, &mask).unwrap();
        prop_assert!(0.0 <= r.delta1 && r.delta1 <= r.delta2 && r.delta2 <= r.delta3 && r.delta3 <= 1.0);
        prop_assert!(r.rel >= 0.0 && r.rms >= 0.0 && r.log10 >= 0.0);
    }
}
