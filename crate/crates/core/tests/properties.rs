mod common;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lesionsynth::flm::{clamp_to_plausible, simulate_prior, FlmConfig};
use lesionsynth::infer::fuse_modalities;
use lesionsynth::metrics::evaluate_case;
use lesionsynth::morphology::{dilate, erode};
use lesionsynth::rng::RngStream;
use lesionsynth::stats::{bh_adjust, bland_altman, midranks, wilcoxon_rank_sum};
use lesionsynth::volume::{read_nifti_bytes, write_nifti_bytes, Geometry, LabelVolume, LesionMask, Volume};

fn mask_strategy(dims: [usize; 3]) -> impl Strategy<Value = LesionMask> {
    (any::<u64>(), 1usize..5, 1usize..7).prop_map(move |(seed, boxes, side)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        common::random_boxes(&Geometry::isotropic(dims), boxes, side, &mut rng)
    })
}

fn subset(a: &LesionMask, b: &LesionMask) -> bool {
    a.data().iter().zip(b.data()).all(|(&x, &y)| !x || y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn overlap_and_distance_metrics_are_symmetric(a in mask_strategy([12, 12, 12]), b in mask_strategy([12, 12, 12])) {
        let ab = evaluate_case(&a, &b).unwrap();
        let ba = evaluate_case(&b, &a).unwrap();
        prop_assert_eq!(ab.dsc, ba.dsc);
        prop_assert_eq!(ab.lesional_dsc, ba.lesional_dsc);
        prop_assert_eq!(ab.hd95_mm, ba.hd95_mm);
        assert_relative_eq!(ab.assd_mm.unwrap(), ba.assd_mm.unwrap(), max_relative = 1e-12);
        for v in [ab.dsc, ab.lesional_dsc, ab.ppv, ab.fpr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn erosion_shrinks_and_dilation_grows(a in mask_strategy([10, 10, 10]), k in 1usize..4) {
        prop_assert!(subset(&erode(&a, k), &a));
        prop_assert!(subset(&a, &dilate(&a, k)));
        prop_assert!(subset(&erode(&a, k), &erode(&a, k - 1)));
    }

    #[test]
    fn realistic_prior_stays_within_one_dilation(a in mask_strategy([16, 16, 16]), seed in any::<u64>()) {
        let prior = simulate_prior(&a, &FlmConfig::realistic(), &RngStream::new(seed));
        prop_assert!(subset(&prior, &dilate(&a, 1)));
        let again = simulate_prior(&a, &FlmConfig::realistic(), &RngStream::new(seed));
        prop_assert_eq!(prior, again);
        prop_assert_eq!(simulate_prior(&a, &FlmConfig::identity(), &RngStream::new(seed)), a);
    }

    #[test]
    fn clamping_removes_only_forbidden_voxels(a in mask_strategy([12, 12, 12]), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = Volume::from_fn(a.geom().clone(), |_| rand::Rng::gen_range(&mut rng, 0..4u16));
        let parc = LabelVolume::with_k(labels, 4).unwrap();
        let out = clamp_to_plausible(&a, &parc, &[0, 2]).unwrap();
        for ((&m, &o), &l) in a.data().iter().zip(out.data()).zip(parc.data()) {
            prop_assert_eq!(o, m && l != 0 && l != 2);
        }
    }

    #[test]
    fn bh_is_bounded_and_order_preserving(p in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let q = bh_adjust(&p).unwrap();
        for i in 0..p.len() {
            prop_assert!(q[i] >= p[i] && q[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] < p[j] {
                    prop_assert!(q[i] <= q[j]);
                }
            }
        }
    }

    #[test]
    fn rank_sum_is_symmetric_and_bounded(
        x in prop::collection::vec(-50i32..50, 1..20),
        y in prop::collection::vec(-50i32..50, 1..20),
    ) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let a = wilcoxon_rank_sum(&x, &y).unwrap();
        let b = wilcoxon_rank_sum(&y, &x).unwrap();
        prop_assert!(a.p_two_sided > 0.0 && a.p_two_sided <= 1.0);
        assert_relative_eq!(a.p_two_sided, b.p_two_sided, max_relative = 1e-12);
        let pooled: Vec<f64> = x.iter().chain(&y).copied().collect();
        let n = pooled.len() as f64;
        assert_relative_eq!(midranks(&pooled).iter().sum::<f64>(), n * (n + 1.0) / 2.0);
    }

    #[test]
    fn bland_altman_ignores_case_order(
        pairs in prop::collection::vec((0.0f64..5000.0, 0.0f64..5000.0), 2..30),
        rot in any::<usize>(),
    ) {
        let (gt, pred): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let (gt2, pred2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let a = bland_altman(&gt, &pred).unwrap();
        let b = bland_altman(&gt2, &pred2).unwrap();
        prop_assert_eq!((a.bias, a.sd), (b.bias, b.sd));
    }

    #[test]
    fn fusion_ignores_weight_scale(
        probs in prop::collection::vec(0.0f64..=1.0, 2..5),
        weights in prop::collection::vec(0.1f64..10.0, 5),
        scale in 0.01f64..100.0,
    ) {
        let g = Geometry::isotropic([2, 2, 2]);
        let vols: Vec<Volume<f64>> = probs.iter().map(|&p| Volume::filled(g.clone(), p)).collect();
        let w = &weights[..vols.len()];
        let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let a = fuse_modalities(&vols, Some(w)).unwrap();
        let b = fuse_modalities(&vols, Some(&scaled)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(x));
        }
    }

    #[test]
    fn label_volumes_round_trip(seed in any::<u64>(), dims in (1usize..8, 1usize..8, 1usize..8), gzip in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::from_spacing([dims.0, dims.1, dims.2], [0.7, 1.0, 2.5]).unwrap();
        let labels = LabelVolume::from_labels(Volume::from_fn(g, |_| rand::Rng::gen_range(&mut rng, 0..300u16))).unwrap();
        let back = read_nifti_bytes(&write_nifti_bytes(&labels, gzip).unwrap()).unwrap().into_labels().unwrap();
        prop_assert_eq!(back.data(), labels.data());
        prop_assert!(back.geom().approx_eq(labels.geom(), 1e-6));
    }

    #[test]
    fn rng_streams_depend_only_on_seed_and_path(seed in any::<u64>(), path in prop::collection::vec(0u64..100, 0..5)) {
        use rand::RngCore;
        let a = RngStream::new(seed).descend(&path);
        let mut b = RngStream::new(seed);
        for &i in &path {
            b = b.child(i);
        }
        prop_assert_eq!(a.rng().next_u64(), b.rng().next_u64());
        prop_assert_ne!(a.child(0).rng().next_u64(), a.child(1).rng().next_u64());
    }
}
