mod common;

use common::oracle_hull;
use hybdet::data::{
    augment, bilinear_resize, generate_synthetic, hflip, load_dir, parse_label_file, render_label_file,
    render_scene, rotate, rotated_hull, write_dir, zoom, AugmentPolicy, Rng, Sample, SceneSpec,
    MIN_KEPT_AREA_FRACTION,
};
use hybdet::{BBox, GroundTruth, Tensor};
use proptest::prelude::*;

/// Boxes on a 1/1024 lattice so `1 − (1 − x)` is exact.
fn dyadic_sample(seed: u64, size: usize) -> Sample {
    let mut rng = Rng::new(seed);
    let q = |rng: &mut Rng, lo: usize, hi: usize| rng.range_inclusive(lo, hi) as f64 / 1024.0;
    let labels = (0..rng.range_inclusive(0, 4))
        .map(|_| {
            let w = q(&mut rng, 64, 300);
            let h = q(&mut rng, 64, 300);
            GroundTruth {
                class_id: rng.range_inclusive(0, 2),
                bbox: BBox::new(q(&mut rng, 200, 824), q(&mut rng, 200, 824), w, h),
            }
        })
        .collect();
    Sample {
        image: Tensor::from_fn(&[3, size, size], |_| rng.next_f64()),
        labels,
        source: format!("s{seed}"),
    }
}

fn in_unit(b: &BBox) -> bool {
    let [x0, y0, x1, y1] = b.corners();
    let e = 1e-12;
    x0 >= -e && y0 >= -e && x1 <= 1.0 + e && y1 <= 1.0 + e && b.w > 0.0 && b.h > 0.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn double_flip_is_identity(seed in any::<u64>(), size in 1usize..=12) {
        let s = dyadic_sample(seed, size);
        prop_assert_eq!(hflip(&hflip(&s)), s);
    }

    #[test]
    fn flip_mirrors_pixels_and_centers(seed in any::<u64>(), size in 1usize..=9) {
        let s = dyadic_sample(seed, size);
        let f = hflip(&s);
        let n = size;
        for c in 0..3 {
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(f.image.data()[(c * n + i) * n + j], s.image.data()[(c * n + i) * n + n - 1 - j]);
                }
            }
        }
        for (a, b) in s.labels.iter().zip(&f.labels) {
            prop_assert_eq!(b.bbox.cx, 1.0 - a.bbox.cx);
            prop_assert_eq!((a.bbox.cy, a.bbox.w, a.bbox.h, a.class_id), (b.bbox.cy, b.bbox.w, b.bbox.h, b.class_id));
        }
    }

    #[test]
    fn augmented_boxes_stay_in_unit_square(seed in any::<u64>(), aug_seed in any::<u64>()) {
        let s = dyadic_sample(seed, 16);
        let policy = AugmentPolicy {
            flip_p: 1.0, rotate_p: 1.0, zoom_p: 1.0, brightness_p: 1.0, contrast_p: 1.0,
            max_rotation_deg: 45.0, zoom_range: (0.5, 1.8), ..AugmentPolicy::default()
        };
        let out = augment(&s, &policy, &mut Rng::new(aug_seed));
        prop_assert!(out.labels.len() <= s.labels.len());
        for g in &out.labels {
            prop_assert!(in_unit(&g.bbox), "{:?}", g.bbox);
        }
        prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out.image.shape(), s.image.shape());
    }

    #[test]
    fn disabled_policy_is_identity(seed in any::<u64>(), aug_seed in any::<u64>()) {
        let s = dyadic_sample(seed, 8);
        prop_assert_eq!(augment(&s, &AugmentPolicy::none(), &mut Rng::new(aug_seed)), s);
    }

    #[test]
    fn rotated_hull_matches_closed_form(
        cx in 0.05..0.95f64, cy in 0.05..0.95f64, w in 0.01..0.9f64, h in 0.01..0.9f64,
        deg in -180.0..180.0f64, width in 4usize..200, height in 4usize..200,
    ) {
        let b = BBox::new(cx, cy, w, h);
        let got = rotated_hull(&b, deg, width, height).corners();
        let want = oracle_hull(&b, deg, width as f64, height as f64);
        for k in 0..4 {
            prop_assert!((got[k] - want[k]).abs() <= 1e-9, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn rotation_drops_only_heavily_clipped_boxes(seed in any::<u64>(), deg in -45.0..45.0f64) {
        let s = dyadic_sample(seed, 16);
        let out = rotate(&s, deg);
        let kept: Vec<BBox> = s.labels.iter().filter_map(|g| {
            let hull = rotated_hull(&g.bbox, deg, 16, 16);
            (hull.clipped().area() >= MIN_KEPT_AREA_FRACTION * hull.area()).then(|| hull.clipped())
        }).collect();
        prop_assert_eq!(out.labels.len(), kept.len());
        for (g, k) in out.labels.iter().zip(&kept) {
            prop_assert!((g.bbox.cx - k.cx).abs() < 1e-12 && (g.bbox.w - k.w).abs() < 1e-12);
        }
    }

    #[test]
    fn zoom_scales_about_center(seed in any::<u64>(), f in 0.5..1.0f64) {
        // shrinking never clips, so every box survives
        let s = dyadic_sample(seed, 16);
        let out = zoom(&s, f);
        prop_assert_eq!(out.labels.len(), s.labels.len());
        for (a, b) in s.labels.iter().zip(&out.labels) {
            prop_assert!((b.bbox.cx - (0.5 + (a.bbox.cx - 0.5) * f)).abs() < 1e-12);
            prop_assert!((b.bbox.w - a.bbox.w * f).abs() < 1e-12);
        }
    }

    #[test]
    fn label_text_round_trip(labels in prop::collection::vec(
        (0usize..50, 0.0..=1.0f64, 0.0..=1.0f64, 1e-6..=1.0f64, 1e-6..=1.0f64), 0..20)) {
        let labels: Vec<GroundTruth> = labels.into_iter()
            .map(|(c, x, y, w, h)| GroundTruth { class_id: c, bbox: BBox::new(x, y, w, h) })
            .collect();
        prop_assert_eq!(parse_label_file(&render_label_file(&labels)).unwrap(), labels);
    }
}

#[test]
fn synthetic_labels_match_mask_extent() {
    let spec = SceneSpec { max_objects: 4, ..SceneSpec::default() };
    let n = spec.canvas;
    let mut rng = Rng::new(77);
    let mut checked = 0;
    for i in 0..100 {
        let scene = render_scene(&spec, &mut rng, format!("t{i}"));
        assert_eq!(scene.sample.labels.len(), scene.objects.len());
        for o in &scene.objects {
            let covered: Vec<(usize, usize)> = (0..n * n).filter(|&k| o.mask[k]).map(|k| (k % n, k / n)).collect();
            let x0 = covered.iter().map(|p| p.0).min().unwrap() as f64;
            let x1 = covered.iter().map(|p| p.0).max().unwrap() as f64 + 1.0;
            let y0 = covered.iter().map(|p| p.1).min().unwrap() as f64;
            let y1 = covered.iter().map(|p| p.1).max().unwrap() as f64 + 1.0;
            let c = o.label.bbox.corners();
            let want = [x0 / n as f64, y0 / n as f64, x1 / n as f64, y1 / n as f64];
            for k in 0..4 {
                assert!((c[k] - want[k]).abs() < 1e-12);
            }
            assert!(in_unit(&o.label.bbox));
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec { canvas: 24, radius_range: (3.0, 5.0), ..SceneSpec::default() };
    let data = generate_synthetic(5, 6, &spec);
    write_dir(dir.path(), &data).unwrap();
    let back = load_dir(dir.path(), 24).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.source, b.source);
        let worst = a.image.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
    let small = load_dir(dir.path(), 12).unwrap();
    assert_eq!(small[0].image.shape(), &[3, 12, 12]);
    assert_eq!(small[0].labels, data[0].labels);
}

#[test]
fn resize_preserves_constant_images() {
    let img = Tensor::from_fn(&[3, 7, 11], |i| [0.2, 0.5, 0.9][i / 77]);
    let out = bilinear_resize(&img, 5, 13).unwrap();
    for (i, v) in out.data().iter().enumerate() {
        assert!((v - [0.2, 0.5, 0.9][i / 65]).abs() < 1e-12);
    }
}
