use covidnet::metrics::{compute_metrics, confusion_matrix, ConfusionMatrix};
use covidnet::ops::{conv2d, ConvParams, Padding};
use covidnet::preprocess::{
    hu_window, resize_bilinear, validate_split, HuWindow, Manifest, Plane, SliceRecord,
};
use covidnet::{Label, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, seed: &[f32]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|i| seed[i % seed.len()] * ((i % 7) as f32 - 3.0)).collect())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_in_the_input(
        a in -2.0f32..2.0, b in -2.0f32..2.0,
        xs in prop::collection::vec(-1.0f32..1.0, 8),
        ys in prop::collection::vec(-1.0f32..1.0, 8),
        ks in prop::collection::vec(-1.0f32..1.0, 5),
        stride in 1usize..=2,
    ) {
        let x = tensor(vec![1, 2, 7, 7], &xs);
        let y = tensor(vec![1, 2, 7, 7], &ys);
        let params = ConvParams::new(tensor(vec![3, 2, 3, 3], &ks), Tensor::zeros(&[3]), stride, Padding::Same).unwrap();
        let lhs = conv2d(&x.scale(a).add(&y.scale(b)).unwrap(), &params).unwrap();
        let rhs = conv2d(&x, &params).unwrap().scale(a).add(&conv2d(&y, &params).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-4);
    }

    #[test]
    fn valid_conv_commutes_with_translation(
        xs in prop::collection::vec(-1.0f32..1.0, 11),
        ks in prop::collection::vec(-1.0f32..1.0, 4),
        dy in 0usize..3, dx in 0usize..3,
    ) {
        // Shifting the window of a valid convolution shifts its output.
        let big = tensor(vec![1, 1, 12, 12], &xs);
        let params = ConvParams::new(tensor(vec![2, 1, 3, 3], &ks), Tensor::full(&[2], 0.25), 1, Padding::Valid).unwrap();
        let full = conv2d(&big, &params).unwrap();
        let window = Tensor::from_fn(&[1, 1, 9, 9], |i| big.data()[(i / 9 + dy) * 12 + i % 9 + dx]);
        let shifted = conv2d(&window, &params).unwrap();
        for c in 0..2 {
            for y in 0..7 {
                for x in 0..7 {
                    let a = shifted.data()[c * 49 + y * 7 + x];
                    let b = full.data()[c * 100 + (y + dy) * 10 + x + dx];
                    prop_assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn hu_window_is_monotone(a in any::<i16>(), b in any::<i16>(), c in -2000i32..2000, w in 1i32..4000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(hu_window(lo, c, w) <= hu_window(hi, c, w));
    }

    #[test]
    fn resize_keeps_constants(v in 0.0f32..255.0, h in 1usize..20, w in 1usize..20, oh in 1usize..40, ow in 1usize..40) {
        let p = Plane::filled(h, w, v);
        prop_assert!(resize_bilinear(&p, oh, ow).data.iter().all(|&x| x == v));
    }

    #[test]
    fn metric_invariants(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200), k in 1u64..5) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let cm = confusion_matrix(&t, &p).unwrap();
        prop_assert_eq!(cm.total(), t.len() as u64);
        for c in 0..3 {
            prop_assert_eq!(cm.binarize(c).iter().sum::<u64>(), cm.total());
        }
        let r = compute_metrics(&cm).unwrap();
        let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count();
        prop_assert_eq!(r.accuracy, hits as f64 / t.len() as f64);
        let mut scaled = cm;
        scaled.counts.iter_mut().flatten().for_each(|v| *v *= k);
        let s = compute_metrics(&scaled).unwrap();
        prop_assert!((s.accuracy - r.accuracy).abs() < 1e-12);
        for (x, y) in [(r.sensitivity, s.sensitivity), (r.ppv, s.ppv), (r.specificity, s.specificity), (r.npv, s.npv)] {
            for c in 0..3 {
                match (x[c], y[c]) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12 && (0.0..=1.0).contains(&a)),
                    (None, None) => {}
                    other => prop_assert!(false, "definedness changed: {:?}", other),
                }
            }
        }
    }

    #[test]
    fn split_passes_iff_disjoint(ids in prop::collection::vec((0usize..3, 0u8..12), 0..40)) {
        let mut parts: [Vec<SliceRecord>; 3] = Default::default();
        for (i, &(split, pid)) in ids.iter().enumerate() {
            parts[split].push(SliceRecord {
                image_path: format!("{i}.png"),
                label: Label::from_index(i % 3).unwrap(),
                patient_id: format!("p{pid}"),
                crop: None,
            });
        }
        let m: Vec<Manifest> = parts.into_iter().map(|r| Manifest::new(None, r)).collect();
        let report = validate_split(&m[0], &m[1], &m[2]);
        let sets: Vec<std::collections::HashSet<u8>> = (0..3)
            .map(|s| ids.iter().filter(|(sp, _)| *sp == s).map(|(_, p)| *p).collect())
            .collect();
        let disjoint = sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]);
        prop_assert_eq!(report.passed(), disjoint);
        // Counts agree with a direct recount.
        for (s, split) in covidnet::preprocess::Split::ALL.iter().enumerate() {
            let c = &report.counts[split];
            for l in 0..3 {
                let slices = ids.iter().enumerate().filter(|(i, (sp, _))| *sp == s && i % 3 == l).count();
                prop_assert_eq!(c.slices[l], slices);
            }
            prop_assert_eq!(c.total_patients, sets[s].len());
        }
    }
}

#[test]
fn hu_window_full_domain_is_monotone_and_spans_the_range() {
    let w = HuWindow::LUNG;
    let mut prev = 0u8;
    for v in i16::MIN..=i16::MAX {
        let out = w.apply(v);
        assert!(out >= prev, "not monotone at {v}");
        prev = out;
    }
    assert_eq!((w.apply(i16::MIN), w.apply(i16::MAX)), (0, 255));
}

#[test]
fn confusion_matches_brute_force_tally() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let t: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..3)).collect();
    let p: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..3)).collect();
    let cm = confusion_matrix(&t, &p).unwrap();
    let mut tally = [[0u64; 3]; 3];
    for (a, row) in tally.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = t.iter().zip(&p).filter(|&(&x, &y)| x == a && y == b).count() as u64;
        }
    }
    assert_eq!(cm, ConfusionMatrix::from_counts(tally));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_is_a_pure_function_of_the_seed(global in any::<u64>(), epoch in 0u64..50, idx in 0u64..1000) {
        use covidnet::preprocess::{apply_augmentation, sample_seed, AugmentWarnings, AugmentationRanges, CropBox};
        let image = Plane::new(40, 48, (0..40 * 48).map(|i| ((i * 37) % 256) as f32).collect()).unwrap();
        let bx = CropBox { xmin: 4, ymin: 2, xmax: 44, ymax: 38 };
        let ranges = AugmentationRanges::default();
        let seed = sample_seed(global, epoch, idx);
        prop_assert_eq!(seed, sample_seed(global, epoch, idx));
        let p = ranges.sample(seed);
        prop_assert_eq!(&p, &ranges.sample(seed));
        let mut w = AugmentWarnings::default();
        let a = apply_augmentation(&image, bx, &p, 32, &mut w).unwrap();
        let b = apply_augmentation(&image, bx, &p, 32, &mut w).unwrap();
        prop_assert_eq!(a.data, b.data);
    }
}
