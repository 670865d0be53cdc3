use bridge_mtl::datamodel::{
    augment, merge_labels, split_merged, synthetic, AugmentationConfig, Sample,
};
use bridge_mtl::losses::{cross_entropy, uncertainty_loss, UncertaintyParams};
use bridge_mtl::metrics::{accumulate_confusion, class_metrics, ConfusionMatrix};
use bridge_mtl::network::config::ProjectionMode;
use bridge_mtl::network::{
    build_model, load_checkpoint, project, save_checkpoint, CrossTalkState, Dims, ModelConfig,
    ProjectionParams,
};
use bridge_mtl::tensor::Tensor;
use bridge_mtl::training::{lr_at, TrainConfig};
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;

fn label_map(side: u32, classes: u8) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0..classes, (side * side) as usize)
        .prop_map(move |v| GrayImage::from_raw(side, side, v).unwrap())
}

fn rgb(side: u32) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(any::<u8>(), (side * side * 3) as usize)
        .prop_map(move |v| RgbImage::from_raw(side, side, v).unwrap())
}

fn sample(side: u32) -> impl Strategy<Value = Sample> {
    (rgb(side), label_map(side, 7), label_map(side, 2)).prop_map(
        |(image, element_map, defect_map)| Sample {
            id: "p".into(),
            image,
            element_map,
            defect_map,
        },
    )
}

fn values(m: &GrayImage) -> std::collections::BTreeSet<u8> {
    m.as_raw().iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resizing_never_invents_label_values(s in sample(12), size in 4u32..40) {
        let (e, d) = (values(&s.element_map), values(&s.defect_map));
        let out = s.resized(size);
        prop_assert_eq!(out.dimensions(), (size, size));
        prop_assert!(values(&out.element_map).is_subset(&e));
        prop_assert!(values(&out.defect_map).is_subset(&d));
    }

    #[test]
    fn identity_augmentation_returns_input(s in sample(10), seed in any::<u64>(), epoch in 0u64..50) {
        let cfg = AugmentationConfig { seed, ..AugmentationConfig::identity() };
        let out = augment(&s, &cfg, &mut cfg.rng_for(&s.id, epoch)).unwrap();
        prop_assert_eq!(out, s);
    }

    #[test]
    fn augmented_labels_stay_aligned(seed in any::<u64>(), epoch in 0u64..1000, mx in 12u32..20, my in 12u32..20) {
        let n = 32;
        let mut s = Sample {
            id: "m".into(),
            image: RgbImage::new(n, n),
            element_map: GrayImage::new(n, n),
            defect_map: GrayImage::new(n, n),
        };
        for y in my..my + 4 {
            for x in mx..mx + 4 {
                s.image.put_pixel(x, y, Rgb([255, 255, 255]));
                s.element_map.put_pixel(x, y, Luma([5]));
                s.defect_map.put_pixel(x, y, Luma([1]));
            }
        }
        let cfg = AugmentationConfig { noise_kernel: 1, hsv_jitter: [0.0; 3], seed, ..Default::default() };
        let out = augment(&s, &cfg, &mut cfg.rng_for("m", epoch)).unwrap();
        prop_assert!(values(&out.element_map).is_subset(&[0, 5].into()));
        for (x, y, p) in out.element_map.enumerate_pixels() {
            let marked = p[0] == 5;
            prop_assert_eq!(marked, out.defect_map.get_pixel(x, y)[0] == 1);
            if marked {
                prop_assert!(out.image.get_pixel(x, y)[0] > 0, "label marker over a dark pixel at ({}, {})", x, y);
            }
        }
    }

    #[test]
    fn merged_labels_round_trip(e in label_map(9, 7), d in label_map(9, 2)) {
        let merged = merge_labels(&e, &d).unwrap();
        prop_assert!(merged.as_raw().iter().all(|&v| v < 14));
        let (e2, d2) = split_merged(&merged).unwrap();
        prop_assert_eq!(e2, e);
        prop_assert_eq!(d2, d);
    }

    #[test]
    fn cross_entropy_is_non_negative(
        logits in prop::collection::vec(-30.0f64..30.0, 3 * 4 * 4),
        labels in prop::collection::vec(0u8..3, 16),
    ) {
        let t = Tensor::from_vec(&[3, 4, 4], logits).unwrap();
        let l = cross_entropy(&t, &labels).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn log_variance_sweep_bottoms_out_at_log_loss(le in 0.01f64..20.0, ld in 0.01f64..20.0) {
        let at = |s: f64| uncertainty_loss(le, ld, &UncertaintyParams { log_var_element: s, log_var_defect: ld.ln() });
        let best = le.ln();
        let f_best = at(best);
        for k in 1..=20 {
            let off = k as f64 * 0.1;
            prop_assert!(at(best - off) > f_best);
            prop_assert!(at(best + off) > f_best);
        }
    }

    #[test]
    fn metric_ordering(p in label_map(8, 7), g in label_map(8, 7)) {
        let mut cm = ConfusionMatrix::new(7);
        accumulate_confusion(&p, &g, &mut cm).unwrap();
        for c in class_metrics(&cm) {
            if let (Some(pr), Some(re), Some(f1), Some(iou)) = (c.precision, c.recall, c.f1, c.iou) {
                prop_assert!(iou <= f1 + 1e-15);
                prop_assert!(f1 <= pr.max(re) + 1e-15);
                prop_assert!((f1 - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relabeling_permutes_class_metrics(
        p in label_map(8, 7),
        g in label_map(8, 7),
        perm in Just((0u8..7).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let relabel = |m: &GrayImage| GrayImage::from_fn(8, 8, |x, y| Luma([perm[m.get_pixel(x, y)[0] as usize]]));
        let mut a = ConfusionMatrix::new(7);
        let mut b = ConfusionMatrix::new(7);
        accumulate_confusion(&p, &g, &mut a).unwrap();
        accumulate_confusion(&relabel(&p), &relabel(&g), &mut b).unwrap();
        let (ma, mb) = (class_metrics(&a), class_metrics(&b));
        for k in 0..7 {
            prop_assert_eq!(&ma[k], &mb[perm[k] as usize]);
        }
    }

    #[test]
    fn accumulation_is_additive_over_partitions(
        p in label_map(8, 7),
        g in label_map(8, 7),
        cut in 1u32..8,
    ) {
        let rows = |m: &GrayImage, lo: u32, hi: u32| {
            GrayImage::from_fn(8, hi - lo, |x, y| *m.get_pixel(x, y + lo))
        };
        let mut whole = ConfusionMatrix::new(7);
        accumulate_confusion(&p, &g, &mut whole).unwrap();
        let mut top = ConfusionMatrix::new(7);
        let mut bottom = ConfusionMatrix::new(7);
        accumulate_confusion(&rows(&p, 0, cut), &rows(&g, 0, cut), &mut top).unwrap();
        accumulate_confusion(&rows(&p, cut, 8), &rows(&g, cut, 8), &mut bottom).unwrap();
        top.merge(&bottom).unwrap();
        prop_assert_eq!(top, whole);
    }

    #[test]
    fn learning_rate_decays_monotonically(total in 1usize..5000, lr_init in 1e-4f64..1e-1, ratio in 1e-3f64..1.0) {
        let cfg = TrainConfig { total_steps: total, lr_init, lr_min: lr_init * ratio, ..TrainConfig::default() };
        prop_assert_eq!(lr_at(0, &cfg), lr_init);
        prop_assert_eq!(lr_at(total, &cfg), cfg.lr_min);
        prop_assert_eq!(lr_at(total + 7, &cfg), cfg.lr_min);
        let step_ratio = ratio.powf(1.0 / total as f64);
        let mut prev = lr_at(0, &cfg);
        for t in 1..=total.min(400) {
            let cur = lr_at(t, &cfg);
            prop_assert!(cur <= prev);
            prop_assert!((cur / prev - step_ratio).abs() < 1e-9);
            prev = cur;
        }
    }

    #[test]
    fn identity_projection_is_exact(
        data in prop::collection::vec(-1e6f64..1e6, 5 * 3 * 2),
        mode in prop::sample::select(vec![ProjectionMode::Scalar, ProjectionMode::Vector, ProjectionMode::Matrix]),
    ) {
        let f = Tensor::from_vec(&[5, 3, 2], data).unwrap();
        let out = project(&f, &ProjectionParams::identity(mode, 5)).unwrap();
        prop_assert!(out.bit_eq(&f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn forward_is_deterministic_and_checkpoints_round_trip(
        variant in prop::sample::select(vec!["MTL-A", "MTL-F", "MTL-L", "merged", "single-defect"]),
        seed in any::<u64>(),
        scene_seed in any::<u64>(),
    ) {
        let dims = Dims::square(16, 8);
        let model = build_model(ModelConfig::variant(variant, dims).unwrap().with_seed(seed)).unwrap();
        let image = synthetic::scene("s", 16, scene_seed).image;
        let a = model.predict(&image, &mut CrossTalkState::new()).unwrap();
        let b = model.predict(&image, &mut CrossTalkState::new()).unwrap();
        prop_assert_eq!(&a, &b);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        prop_assert_eq!(restored.params(), model.params());
        prop_assert_eq!(restored.predict(&image, &mut CrossTalkState::new()).unwrap(), a);
    }
}
