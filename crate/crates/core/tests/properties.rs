use std::collections::HashSet;

use proptest::prelude::*;

use earpipe_core::alignment::{
    crop_and_resize, ellipse_mask, estimate_vertical_axis, normalize_angle, rotate_mask, rotate_upright, PadFill,
};
use earpipe_core::detection::{detect_accessories, filter_detections, DetectorConfig, NoopDetector};
use earpipe_core::embedding::{split_by_side, EmbedderBackend, MockEmbedder, MockSideClassifier};
use earpipe_core::manifest::{identity_key, DatasetManifest, ImageRecord};
use earpipe_core::masking::{dilate_mask, merge_masks, refine_mask};
use earpipe_core::restoration::{conform_mask, normalize_input, restore, BoundaryAverageInpainter};
use earpipe_core::verification::{compute_auc, cosine_similarity, enumerate_pairs, ScoreSet};
use earpipe_core::{BinaryMask, BoundingBox, Detection, DetectorSource, Embedding, RasterImage, Side, ALIGNED_SIZE};

fn mask_strategy(w: u32, h: u32) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
}

fn side_strategy() -> impl Strategy<Value = Side> {
    prop_oneof![Just(Side::Left), Just(Side::Right), Just(Side::Unknown)]
}

fn detection_strategy() -> impl Strategy<Value = Detection> {
    (0.0f32..90.0, 0.0f32..90.0, 1.0f32..60.0, 1.0f32..60.0, 0.0f32..=1.0, prop::option::of(0.0f32..=1.0)).prop_map(
        |(x, y, w, h, conf, text)| Detection {
            bbox: BoundingBox::new(x, y, (x + w).min(100.0), (y + h).min(100.0)).unwrap(),
            confidence: conf,
            text_alignment: text,
            source: if text.is_some() {
                DetectorSource::ZeroShot
            } else {
                DetectorSource::Supervised
            },
            label: "earring".into(),
        },
    )
}

fn brute_auc(s: &ScoreSet) -> f64 {
    let mut acc = 0.0;
    for g in &s.genuine {
        for i in &s.impostor {
            acc += if g > i {
                1.0
            } else if g == i {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / (s.genuine.len() * s.impostor.len()) as f64
}

fn angle_gap(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

proptest! {
    #[test]
    fn identity_keys_are_injective(
        pairs in prop::collection::vec(("[a-z/]{0,6}", side_strategy()), 1..30)
    ) {
        let mut seen = std::collections::HashMap::new();
        for (subject, side) in pairs {
            let key = identity_key(&subject, side, true);
            if let Some(prev) = seen.insert(key.clone(), (subject.clone(), side)) {
                prop_assert_eq!(prev, (subject, side), "collision on {}", key);
            }
        }
    }

    #[test]
    fn filtering_is_idempotent_and_a_subsequence(dets in prop::collection::vec(detection_strategy(), 0..20)) {
        let cfg = DetectorConfig::default();
        let once = filter_detections(&dets, &cfg, (100, 100));
        prop_assert_eq!(filter_detections(&once, &cfg, (100, 100)), once.clone());
        let mut it = dets.iter();
        for d in &once {
            prop_assert!(it.any(|x| x == d), "output is not a subsequence");
        }
    }

    #[test]
    fn merge_is_a_semilattice(a in mask_strategy(9, 7), b in mask_strategy(9, 7), c in mask_strategy(9, 7)) {
        let dims = (9, 7);
        let m = |xs: &[BinaryMask]| merge_masks(xs, dims).unwrap();
        prop_assert_eq!(m(&[a.clone(), b.clone()]), m(&[b.clone(), a.clone()]));
        prop_assert_eq!(m(&[m(&[a.clone(), b.clone()]), c.clone()]), m(&[a.clone(), m(&[b.clone(), c.clone()])]));
        prop_assert_eq!(m(&[a.clone(), a.clone()]), a.clone());
        prop_assert_eq!(m(&[a.clone(), BinaryMask::empty(9, 7)]), a.clone());
    }

    #[test]
    fn refinement_stays_within_median_reach(m in mask_strategy(16, 16)) {
        let refined = refine_mask(&m);
        let reach = dilate_mask(&m, 2);
        for (r, d) in refined.bits().iter().zip(reach.bits()) {
            prop_assert!(!r || *d);
        }
    }

    #[test]
    fn conformed_masks_stay_binary(m in mask_strategy(13, 11), tw in 1u32..40, th in 1u32..40) {
        let c = conform_mask(&m, (tw, th));
        prop_assert_eq!(c.dims(), (tw, th));
        prop_assert!(c.to_gray_bytes().iter().all(|&v| v == 0 || v == 255));
    }

    #[test]
    fn restore_never_touches_background(
        data in prop::collection::vec(any::<u8>(), 12 * 10),
        m in mask_strategy(12, 10),
    ) {
        let img = RasterImage::new(12, 10, 1, data).unwrap();
        let norm = normalize_input(&img).unwrap();
        let out = restore(&img, &m, &mut BoundaryAverageInpainter::default()).unwrap();
        for y in 0..10 {
            for x in 0..12 {
                if !m.get(x, y) {
                    prop_assert_eq!(out.pixel(x, y), norm.pixel(x, y));
                }
            }
        }
        let empty = restore(&img, &BinaryMask::empty(12, 10), &mut BoundaryAverageInpainter::default()).unwrap();
        prop_assert_eq!(empty, norm);
    }

    #[test]
    fn auc_matches_brute_force(
        g in prop::collection::vec(0i32..20, 1..60),
        i in prop::collection::vec(0i32..20, 1..60),
    ) {
        // small integer range forces ties
        let s = ScoreSet {
            genuine: g.iter().map(|&v| f64::from(v) / 10.0 - 1.0).collect(),
            impostor: i.iter().map(|&v| f64::from(v) / 10.0 - 1.0).collect(),
        };
        let auc = compute_auc(&s).unwrap();
        prop_assert!((auc - brute_auc(&s)).abs() <= 1e-9);
        let warped = ScoreSet {
            genuine: s.genuine.iter().map(|v| (3.0 * v).exp() + 7.0).collect(),
            impostor: s.impostor.iter().map(|v| (3.0 * v).exp() + 7.0).collect(),
        };
        prop_assert!((compute_auc(&warped).unwrap() - auc).abs() <= 1e-12);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_free(
        a in prop::collection::vec(-1.0f32..1.0, 512),
        b in prop::collection::vec(-1.0f32..1.0, 512),
        alpha in 0.01f32..100.0,
    ) {
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let ea = Embedding::new("a", a.clone()).unwrap();
        let eb = Embedding::new("b", b).unwrap();
        let scaled = Embedding::new("a", a.iter().map(|v| v * alpha).collect()).unwrap();
        let ab = cosine_similarity(&ea, &eb).unwrap();
        prop_assert_eq!(ab, cosine_similarity(&eb, &ea).unwrap());
        prop_assert!((ab - cosine_similarity(&scaled, &eb).unwrap()).abs() < 1e-6);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn pair_counts_match_listing(sizes in prop::collection::vec(1usize..=6, 2..=10)) {
        let records: Vec<ImageRecord> = sizes
            .iter()
            .enumerate()
            .flat_map(|(s, &m)| (0..m).map(move |j| ImageRecord::new(format!("s{s}"), Side::Left, format!("s{s}/{j}.png"))))
            .collect();
        let manifest = DatasetManifest::new("p", false, records.clone());
        let counts = enumerate_pairs(&manifest).unwrap().counts();
        let (mut genuine, mut impostor) = (0u64, 0u64);
        for a in 0..records.len() {
            for b in a + 1..records.len() {
                if records[a].subject_id == records[b].subject_id {
                    genuine += 1;
                } else {
                    impostor += 1;
                }
            }
        }
        prop_assert_eq!((counts.genuine, counts.impostor), (genuine, impostor));
    }

    #[test]
    fn crop_and_resize_hits_the_requested_size(
        m in mask_strategy(20, 15),
        ow in 1u32..80,
        oh in 1u32..80,
    ) {
        prop_assume!(!m.is_empty());
        let img = RasterImage::filled(20, 15, 3, 9).unwrap();
        prop_assert_eq!(crop_and_resize(&img, &m, (ow, oh)).unwrap().dims(), (ow, oh));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn upright_rotation_conserves_interior_mean(angle in -45.0f64..45.0, seed in any::<u64>()) {
        let (w, h) = (64u32, 48u32);
        let img = RasterImage::from_fn(w, h, 1, |x, y, _| {
            let n = earpipe_core::embedding::splitmix64(seed ^ u64::from(y * w + x)) % 40;
            (60 + x * 2 + y + n as u32) as u8
        })
        .unwrap();
        let rotated = rotate_upright(&img, angle, PadFill::Black);
        let disk_mean = |im: &RasterImage, r: f64| {
            let (cx, cy) = (f64::from(im.width()) / 2.0, f64::from(im.height()) / 2.0);
            let (mut s, mut n) = (0.0, 0.0);
            for y in 0..im.height() {
                for x in 0..im.width() {
                    let (dx, dy) = (f64::from(x) + 0.5 - cx, f64::from(y) + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        s += f64::from(im.get(x, y, 0));
                        n += 1.0;
                    }
                }
            }
            s / n
        };
        let before = disk_mean(&img, 16.0);
        let after = disk_mean(&rotated, 16.0);
        prop_assert!((after - before).abs() <= 0.01 * before, "{before} vs {after}");
    }

    #[test]
    fn axis_follows_mask_rotation(base in -60.0f64..60.0, idx in 0usize..4) {
        let theta = [-30.0, -15.0, 15.0, 30.0][idx];
        // aspect 4; at aspect 3 about 3% of rotations land 2-3.8° off
        let m = ellipse_mask(140, 140, (70.0, 70.0), 12.0, 48.0, base);
        let a0 = estimate_vertical_axis(&m, 5).unwrap().angle;
        let a1 = estimate_vertical_axis(&rotate_mask(&m, theta), 5).unwrap().angle;
        prop_assert!(angle_gap(a1, normalize_angle(a0 + theta)) <= 2.0, "{a0} + {theta} vs {a1}");
    }

    #[test]
    fn mock_embeddings_are_unit_and_deterministic(seed in any::<u64>(), fill in any::<u8>(), idx in 0usize..3) {
        let patch = [16, 28, 56][idx];
        let img = RasterImage::from_fn(ALIGNED_SIZE, ALIGNED_SIZE, 3, |x, y, c| {
            fill.wrapping_add((x * 3 + y * 5 + u32::from(c)) as u8)
        })
        .unwrap();
        let mut e = MockEmbedder::new(patch, seed).unwrap();
        let v = e.embed(&img).unwrap();
        prop_assert_eq!(v.len(), 512);
        let norm: f64 = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-5);
        prop_assert_eq!(MockEmbedder::new(patch, seed).unwrap().embed(&img).unwrap(), v);
    }
}

#[test]
fn noop_backends_detect_nothing() {
    let img = RasterImage::filled(30, 30, 3, 0).unwrap();
    let got = detect_accessories(&img, &mut NoopDetector, &mut NoopDetector, &DetectorConfig::default()).unwrap();
    assert!(got.is_empty());
}

#[test]
fn side_split_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    for (i, bright_left) in [true, false, true, false].into_iter().enumerate() {
        let img = RasterImage::from_fn(8, 8, 3, |x, _, _| if (x < 4) == bright_left { 200 } else { 10 }).unwrap();
        let path = dir.path().join(format!("{i}.png"));
        earpipe_core::io::save_image(&img, &path).unwrap();
        records.push(ImageRecord::new(format!("s{}", i / 2), Side::Unknown, path));
    }
    let m = DatasetManifest::new("d", false, records);
    let once = split_by_side(&m, &mut MockSideClassifier).unwrap();
    let twice = split_by_side(&once, &mut MockSideClassifier).unwrap();
    assert_eq!(once, twice);
    let ids: HashSet<_> = once.identities().into_keys().collect();
    assert_eq!(ids.len(), 4);
}
