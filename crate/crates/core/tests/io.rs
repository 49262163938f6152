use detailnet::io::netpbm::{self, Pnm, PnmKind};
use detailnet::io::{
    depth_from_pnm, generate_scenes, generate_synthetic, load_dataset, load_sample, parse_config_str, parse_meta,
    sample_paths, save_sample, CameraIntrinsics, RgbImage, RgbdSample, SynthSceneConfig, Texture,
};
use detailnet::net::NetworkConfig;
use detailnet::{Error, Tensor};
use proptest::prelude::*;

#[test]
fn pnm_round_trip_and_errors() {
    let img = Pnm {
        kind: PnmKind::Gray,
        width: 3,
        height: 2,
        maxval: 65535,
        samples: vec![0, 1, 256, 1500, 40000, 65535],
    };
    let bytes = netpbm::encode(&img);
    assert!(bytes.starts_with(b"P5"));
    assert_eq!(netpbm::decode(&bytes, PnmKind::Gray).unwrap(), img);
    assert!(matches!(netpbm::decode(&bytes, PnmKind::Rgb), Err(Error::Format(_))));
    assert!(matches!(
        netpbm::decode(&bytes[..bytes.len() - 1], PnmKind::Gray),
        Err(Error::Format(_))
    ));

    let commented = b"P6\n# made by hand\n2 1\n255\n\x00\x80\xff\x01\x02\x03";
    let rgb = netpbm::decode(commented, PnmKind::Rgb).unwrap();
    assert_eq!((rgb.width, rgb.height, rgb.maxval), (2, 1, 255));
    assert_eq!(rgb.samples, vec![0, 128, 255, 1, 2, 3]);
}

#[test]
fn millimetres_become_metres() {
    let img = Pnm {
        kind: PnmKind::Gray,
        width: 2,
        height: 1,
        maxval: 65535,
        samples: vec![1500, 0],
    };
    let (depth, mask) = depth_from_pnm(&img, 0.001).unwrap();
    assert_eq!(depth.data(), &[1.5, 0.0]);
    assert_eq!(mask, vec![true, false]);
}

#[test]
fn meta_parsing() {
    let m = parse_meta("# kinect\nfx=518.8\nfy = 519.4\ncx=325.5\ncy=253.7\n", "m").unwrap();
    assert_eq!(m.intrinsics.fy, 519.4);
    assert_eq!(m.depth_unit, 0.001);
    assert!(matches!(
        parse_meta("fx=1\nfy=1\ncx=1\n", "m"),
        Err(Error::Parse { .. })
    ));
    match parse_meta("fx=1\nfy=abc\n", "m") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

fn write_pair(dir: &std::path::Path, w: usize, h: usize) {
    let (rgb, depth, meta) = sample_paths(dir, "kinect");
    let colour: Vec<f32> = (0..w * h * 3).map(|i| ((i * 7) % 256) as f32 / 255.0).collect();
    RgbImage::new(w, h, colour).unwrap().write_ppm(&rgb).unwrap();
    let samples = (0..w * h)
        .map(|i| if i % 97 == 0 { 0 } else { 500 + (i % 3000) as u16 })
        .collect();
    let pgm = Pnm {
        kind: PnmKind::Gray,
        width: w,
        height: h,
        maxval: 65535,
        samples,
    };
    netpbm::write(&depth, &pgm).unwrap();
    let (f, cx, cy) = (0.8 * w as f64, w as f64 / 2.0, h as f64 / 2.0);
    std::fs::write(&meta, format!("fx={f}\nfy={f}\ncx={cx}\ncy={cy}\n")).unwrap();
}

#[test]
fn nyu_preprocessing_yields_240_by_320() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 640, 480);
    let (rgb, depth, meta) = sample_paths(dir.path(), "kinect");
    let s = load_sample(&rgb, &depth, &meta, true).unwrap();
    assert_eq!((s.height(), s.width()), (240, 320));
    assert_eq!(s.depth.dims(), &[240, 320]);
    assert_eq!(s.mask.len(), 240 * 320);
    assert!(s.intrinsics.fx < 0.8 * 640.0);
    let raw = load_sample(&rgb, &depth, &meta, false).unwrap();
    assert_eq!((raw.height(), raw.width()), (480, 640));
    assert_eq!(raw.id, "kinect");
}

#[test]
fn mismatched_planes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), 8, 4);
    let (rgb, depth, meta) = sample_paths(dir.path(), "kinect");
    RgbImage::filled(4, 4, [0.0; 3]).write_ppm(&rgb).unwrap();
    assert!(matches!(load_sample(&rgb, &depth, &meta, false), Err(Error::Format(_))));
    std::fs::write(&rgb, b"P3\n1 1\n255\n0 0 0\n").unwrap();
    assert!(matches!(load_sample(&rgb, &depth, &meta, false), Err(Error::Format(_))));
}

fn assert_quantized_equal(a: &RgbdSample, b: &RgbdSample) {
    assert_eq!(a.id, b.id);
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.intrinsics, b.intrinsics);
    for (x, y) in a.rgb.data.iter().zip(&b.rgb.data) {
        assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6, "{x} vs {y}");
    }
    for ((x, y), m) in a.depth.data().iter().zip(b.depth.data()).zip(&a.mask) {
        if *m {
            assert!((x - y).abs() <= 0.0005 + 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn synthetic_dataset_round_trips_through_files() {
    let cfg = SynthSceneConfig {
        seed: 12,
        height: 16,
        width: 24,
        ..SynthSceneConfig::default()
    };
    let data = generate_synthetic(&cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for s in &data {
        save_sample(s, dir.path()).unwrap();
    }
    let back = load_dataset(dir.path(), false).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in data.iter().zip(&back) {
        assert_quantized_equal(a, b);
    }
}

#[test]
fn synthetic_generation_contract() {
    let cfg = SynthSceneConfig::default();
    assert_eq!(
        generate_synthetic(&cfg, 4).unwrap(),
        generate_synthetic(&cfg, 4).unwrap()
    );
    let other = SynthSceneConfig { seed: 1, ..cfg.clone() };
    assert_ne!(
        generate_synthetic(&cfg, 2).unwrap(),
        generate_synthetic(&other, 2).unwrap()
    );

    for scene in generate_scenes(&cfg, 10).unwrap() {
        let s = &scene.sample;
        assert!(s.mask.iter().all(|m| *m));
        for (i, &d) in s.depth.data().iter().enumerate() {
            assert!((cfg.d_min as f32..=cfg.d_max as f32).contains(&d));
            assert_eq!(d, scene.label_depths[scene.labels[i] as usize]);
        }
    }

    let empty = SynthSceneConfig {
        min_objects: 0,
        max_objects: 0,
        ..cfg.clone()
    };
    for s in generate_synthetic(&empty, 3).unwrap() {
        assert!(s.depth.data().iter().all(|&d| d == 5.0));
    }
}

#[test]
fn flat_texture_colour_follows_labels() {
    let cfg = SynthSceneConfig {
        texture: Texture::Flat,
        seed: 3,
        ..SynthSceneConfig::default()
    };
    for scene in generate_scenes(&cfg, 6).unwrap() {
        let mut colour_of = std::collections::HashMap::new();
        let w = scene.sample.width();
        for (i, &label) in scene.labels.iter().enumerate() {
            let px = scene.sample.rgb.pixel(i % w, i / w).map(f32::to_bits);
            assert_eq!(*colour_of.entry(label).or_insert(px), px, "label {label}");
        }
    }
}

#[test]
fn synthetic_config_validation() {
    let bad = |cfg: SynthSceneConfig| matches!(generate_synthetic(&cfg, 1), Err(Error::Config(_)));
    let base = SynthSceneConfig::default();
    assert!(bad(SynthSceneConfig {
        d_min: 5.0,
        ..base.clone()
    }));
    assert!(bad(SynthSceneConfig {
        height: 30,
        ..base.clone()
    }));
    assert!(bad(SynthSceneConfig {
        min_objects: 3,
        max_objects: 2,
        ..base
    }));
}

#[test]
fn config_defaults_and_overrides() {
    let cfg = parse_config_str("", "empty").unwrap();
    assert_eq!(cfg.train.batch_size, 3);
    assert_eq!(cfg.train.dfe_lr[0], 1e-5);
    assert_eq!(cfg.augment.flip_probability, 0.5);
    assert_eq!(cfg.network, NetworkConfig::full());

    let cfg = parse_config_str("# comment\nbatch_size=7  # trailing\n", "c").unwrap();
    assert_eq!(cfg.train.batch_size, 7);
    let cfg = parse_config_str("reduced_channels=32\npreset=toy\n", "c").unwrap();
    assert_eq!(cfg.network.reduced_channels, 32);
    assert_eq!(cfg.network.stage_channels, NetworkConfig::toy().stage_channels);

    match parse_config_str("steps=10\nbatch_size=zero\n", "c.cfg") {
        Err(Error::Parse { path, line, .. }) => assert_eq!((path.as_str(), line), ("c.cfg", 2)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_config_str("colour=blue\n", "c"),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(matches!(
        parse_config_str("no equals sign\n", "c"),
        Err(Error::Parse { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_samples_round_trip(
        (w, h, rgb, depth, mask) in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| (
            Just(w),
            Just(h),
            prop::collection::vec(0.0f32..=1.0, w * h * 3),
            prop::collection::vec(0.001f32..60.0, w * h),
            prop::collection::vec(any::<bool>(), w * h),
        ))
    ) {
        let sample = RgbdSample {
            id: "p".into(),
            rgb: RgbImage::new(w, h, rgb).unwrap(),
            depth: Tensor::new([h, w], depth).unwrap(),
            mask,
            intrinsics: CameraIntrinsics { fx: 2.0, fy: 3.0, cx: (w - 1) as f64 / 2.0, cy: (h - 1) as f64 / 2.0 },
        };
        let dir = tempfile::tempdir().unwrap();
        save_sample(&sample, dir.path()).unwrap();
        let (r, d, m) = sample_paths(dir.path(), "p");
        let back = load_sample(&r, &d, &m, false).unwrap();
        assert_quantized_equal(&sample, &back);
    }
}
