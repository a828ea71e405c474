use std::collections::HashSet;

use paclab_core::augment::{
    apply_jitter, apply_op, perturb, rotate90, sample_jitter, AugOp, JitterStrengths, PerturbationSpec,
    RotationLabel, MAX_MAGNITUDE,
};
use paclab_core::data::{make_synthetic_domain_pair, sample_nshot_split, BatchSampler, DomainShift, SyntheticDomainSpec};
use paclab_core::model::softmax_rows;
use paclab_core::objectives::{consistency_loss, consistency_mask, cross_entropy, entropy, kl_divergence};
use paclab_core::pretrain::build_rotation_batch;
use paclab_core::{lr_at_step, Dataset, Domain, Image, ImageExample, Matrix, ScheduleParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(channels: usize, side: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f32..=1.0, channels * side * side)
        .prop_map(move |data| Image::new(channels, side, side, data).unwrap())
}

fn square_rgb() -> impl Strategy<Value = Image> {
    (1usize..12).prop_flat_map(|side| image(3, side))
}

fn prob_vector(k: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

/// A target dataset with `per_class[c]` examples of class `c` and a
/// one-example-per-class source.
fn datasets(per_class: &[usize]) -> (Dataset, Dataset) {
    let k = per_class.len();
    let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
    let px = Image::filled(3, 2, 2, 0.5);
    let src = (0..k)
        .map(|c| ImageExample {
            pixels: px.clone(),
            label: Some(c),
            domain: Domain::Source,
            id: c as u64,
        })
        .collect();
    let mut tgt = Vec::new();
    for (c, &n) in per_class.iter().enumerate() {
        for _ in 0..n {
            let id = 1000 + tgt.len() as u64;
            tgt.push(ImageExample {
                pixels: px.clone(),
                label: Some(c),
                domain: Domain::Target,
                id,
            });
        }
    }
    (
        Dataset::new("s", Domain::Source, names.clone(), src).unwrap(),
        Dataset::new("t", Domain::Target, names, tgt).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn four_quarter_turns_are_identity(img in square_rgb(), r in 0u8..4) {
        let r = RotationLabel::new(r).unwrap();
        let mut x = img.clone();
        for _ in 0..4 {
            x = rotate90(&x, r).unwrap();
        }
        prop_assert_eq!(&x, &img);
        let back = rotate90(&rotate90(&img, r).unwrap(), r.inverse()).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn rotation_preserves_pixel_multiset(img in square_rgb(), r in 0u8..4) {
        let out = rotate90(&img, RotationLabel::new(r).unwrap()).unwrap();
        let mut a = img.data.clone();
        let mut b = out.data.clone();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn every_op_keeps_shape_and_unit_range(
        img in square_rgb(),
        op in 0usize..AugOp::ALL.len(),
        level in 0.0f32..=1.0,
        negate: bool,
    ) {
        let out = apply_op(&img, AugOp::ALL[op], level, negate);
        prop_assert!(out.same_shape(&img));
        prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn perturbation_keeps_shape_and_unit_range(
        img in square_rgb(),
        n in 1usize..4,
        m in 0u32..=MAX_MAGNITUDE,
        seed: u64,
        ra: bool,
        cj: bool,
    ) {
        let spec = PerturbationSpec {
            use_randaugment: ra,
            randaugment_n: n,
            randaugment_magnitude: m,
            use_color_jitter: cj,
            ..PerturbationSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = perturb(&img, &spec, &mut rng).unwrap();
        prop_assert!(out.same_shape(&img));
        prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_jitter_is_identity(img in square_rgb(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (factors, order) = sample_jitter(&JitterStrengths::ZERO, &mut rng);
        let out = apply_jitter(&img, &factors, &order).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn identity_spec_is_identity(img in square_rgb(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(perturb(&img, &PerturbationSpec::identity(), &mut rng).unwrap(), img);
    }

    #[test]
    fn rotation_batch_is_balanced(imgs in proptest::collection::vec(image(3, 4), 1..6)) {
        let refs: Vec<&Image> = imgs.iter().collect();
        let (out, labels) = build_rotation_batch(&refs).unwrap();
        prop_assert_eq!(out.len(), 4 * imgs.len());
        prop_assert_eq!(labels.len(), out.len());
        for r in RotationLabel::ALL {
            prop_assert_eq!(labels.iter().filter(|&&l| l == r).count(), imgs.len());
        }
        for (x, r) in out.iter().zip(&labels) {
            let undone = rotate90(x, r.inverse()).unwrap();
            prop_assert!(imgs.contains(&undone));
        }
    }

    #[test]
    fn split_pools_are_disjoint_with_exact_counts(
        per_class in proptest::collection::vec(4usize..12, 2..6),
        shots in 0usize..3,
        n_val in 0usize..2,
        seed: u64,
    ) {
        let (src, tgt) = datasets(&per_class);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = sample_nshot_split(&src, &tgt, shots, n_val, &mut rng).unwrap();
        split.check_invariants().unwrap();
        let k = per_class.len();
        let total: usize = per_class.iter().sum();
        prop_assert_eq!(split.labeled_target.len(), k * shots);
        prop_assert_eq!(split.validation.len(), k * n_val);
        prop_assert_eq!(split.unlabeled_target.len(), total - k * (shots + n_val));
        prop_assert_eq!(split.source.len(), src.len());
        let mut seen = HashSet::new();
        for pool in [&split.labeled_target, &split.unlabeled_target, &split.validation] {
            for id in pool.ids() {
                prop_assert!(seen.insert(id));
            }
        }
        prop_assert_eq!(seen.len(), total);
        let mut val_counts = vec![0usize; k];
        for y in split.validation.evaluation_labels() {
            val_counts[y.unwrap()] += 1;
        }
        prop_assert!(val_counts.iter().all(|&c| c == n_val));
    }

    #[test]
    fn batches_have_s_s_2s_in_range(
        per_class in proptest::collection::vec(4usize..9, 2..5),
        s in 1usize..6,
        seed: u64,
        steps in 1usize..6,
        source_free: bool,
    ) {
        let (src, tgt) = datasets(&per_class);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = sample_nshot_split(&src, &tgt, 1, 1, &mut rng).unwrap();
        let mut sampler = BatchSampler::new(&split, s, seed, !source_free).unwrap();
        for _ in 0..steps {
            let b = sampler.next_batch();
            prop_assert_eq!(b.source.len(), if source_free { 0 } else { s });
            prop_assert_eq!(b.labeled_target.len(), s);
            prop_assert_eq!(b.unlabeled.len(), 2 * s);
            prop_assert!(b.source.iter().all(|&i| i < split.source.len()));
            prop_assert!(b.labeled_target.iter().all(|&i| i < split.labeled_target.len()));
            prop_assert!(b.unlabeled.iter().all(|&i| i < split.unlabeled_target.len()));
        }
        prop_assert_eq!(split.unlabeled_target.label_reads(), 0);
    }

    #[test]
    fn gibbs_inequality(p in prob_vector(5), q in prob_vector(5)) {
        let kl = kl_divergence(&p, &q).unwrap();
        prop_assert!(kl >= -1e-12);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!((cross_entropy(&p, &p).unwrap() - entropy(&p)).abs() < 1e-12);
        prop_assert!(entropy(&p) <= (5f64).ln() + 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(v in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let m = Matrix::from_vec(3, 4, v).unwrap();
        let p = softmax_rows(&m);
        for row in p.rows_iter() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn mask_is_monotone_in_tau(
        logits in proptest::collection::vec(-5.0f64..5.0, 24),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let p = softmax_rows(&Matrix::from_vec(6, 4, logits).unwrap());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m_lo = consistency_mask(&p, lo).unwrap();
        let m_hi = consistency_mask(&p, hi).unwrap();
        for (l, h) in m_lo.iter().zip(&m_hi) {
            prop_assert!(*l || !*h);
        }
        prop_assert!(consistency_mask(&p, 0.0).unwrap().iter().all(|&m| m));
    }

    #[test]
    fn consistency_is_zero_above_every_confidence(
        clean in proptest::collection::vec(-5.0f64..5.0, 12),
        pert in proptest::collection::vec(-5.0f64..5.0, 12),
    ) {
        let p = softmax_rows(&Matrix::from_vec(3, 4, clean).unwrap());
        let q = Matrix::from_vec(3, 4, pert).unwrap();
        let out = consistency_loss(&p, &q, 1.0).unwrap();
        // A softmax over finite logits never reaches exactly 1 unless it saturates.
        if out.mask.iter().all(|&m| !m) {
            prop_assert_eq!(out.loss, 0.0);
            prop_assert!(out.dlogits.data.iter().all(|&g| g == 0.0));
        }
        let full = consistency_loss(&p, &q, 0.0).unwrap();
        prop_assert!(full.loss >= 0.0);
        prop_assert_eq!(full.frac_above_threshold, 1.0);
    }

    #[test]
    fn lr_schedule_is_positive_and_non_increasing(eta0 in 1e-5f64..1.0, i in 0u64..1_000_000) {
        let s = ScheduleParams::new(eta0);
        let a = lr_at_step(&s, i);
        let b = lr_at_step(&s, i + 1);
        prop_assert!(a > 0.0 && b <= a);
        prop_assert_eq!(lr_at_step(&s, 0), eta0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_pairs_are_seed_deterministic(seed: u64, invert: bool) {
        let spec = SyntheticDomainSpec {
            num_classes: 3,
            n_per_class_per_domain: 2,
            image_size: 16,
            shift: DomainShift { invert, noise: 0.1, stroke_delta: 0.05 },
            seed,
        };
        let (s1, t1) = make_synthetic_domain_pair(&spec).unwrap();
        let (s2, t2) = make_synthetic_domain_pair(&spec).unwrap();
        prop_assert_eq!(s1.content_hash(), s2.content_hash());
        prop_assert_eq!(t1.content_hash(), t2.content_hash());
        prop_assert_eq!(s1.len(), 6);
        for e in s1.examples().iter().chain(t1.examples()) {
            prop_assert!(e.pixels.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
