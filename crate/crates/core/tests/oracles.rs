mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use lesionsynth::flm::{apply_transform, LesionTransform};
use lesionsynth::morphology::{connected_components, dilate, erode, Connectivity};
use lesionsynth::stats::{bh_adjust, bland_altman, quantile, wilcoxon_rank_sum, TestMethod};
use lesionsynth::synthgen::spatial::{composition_residual, sample_velocity};
use lesionsynth::synthgen::{integrate_velocity, sample_gmm_image, AffineParams, GmmParams};
use lesionsynth::volume::{Geometry, LabelVolume, LesionMask, Volume};

fn sorted_partition(mut comps: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for c in &mut comps {
        c.sort_unstable();
    }
    comps.sort();
    comps
}

#[test]
fn components_match_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Geometry::isotropic([14, 11, 9]);
    for _ in 0..50 {
        let p = rng.gen_range(0.05..0.35);
        let mask: LesionMask = Volume::from_fn(g.clone(), |_| rng.gen_bool(p));
        let cm = connected_components(&mask, Connectivity::TwentySix);
        assert_eq!(sorted_partition(cm.members()), sorted_partition(common::bfs_components(&mask)));
        let firsts: Vec<usize> = cm.members().iter().map(|c| *c.iter().min().unwrap()).collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]), "components not numbered by first voxel");
    }
}

fn brute_morph(mask: &LesionMask, erode_op: bool) -> Vec<bool> {
    let [nx, ny, nz] = mask.dims();
    let at = |x: i64, y: i64, z: i64| -> Option<bool> {
        (x >= 0 && y >= 0 && z >= 0 && x < nx as i64 && y < ny as i64 && z < nz as i64)
            .then(|| *mask.get(x as usize, y as usize, z as usize))
    };
    let mut out = Vec::with_capacity(mask.data().len());
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let own = at(x, y, z).unwrap();
                let nb = [
                    at(x - 1, y, z),
                    at(x + 1, y, z),
                    at(x, y - 1, z),
                    at(x, y + 1, z),
                    at(x, y, z - 1),
                    at(x, y, z + 1),
                ];
                out.push(if erode_op {
                    own && nb.iter().all(|n| *n == Some(true))
                } else {
                    own || nb.contains(&Some(true))
                });
            }
        }
    }
    out
}

#[test]
fn erosion_and_dilation_match_cross_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Geometry::isotropic([10, 9, 8]);
    for _ in 0..30 {
        let mask = common::random_boxes(&g, 4, 7, &mut rng);
        assert_eq!(erode(&mask, 1).data(), brute_morph(&mask, true).as_slice());
        assert_eq!(dilate(&mask, 1).data(), brute_morph(&mask, false).as_slice());
        let twice = Volume::new(g.clone(), brute_morph(&mask, false)).unwrap();
        assert_eq!(dilate(&mask, 2).data(), brute_morph(&twice, false).as_slice());
    }
}

#[test]
fn cropped_transform_matches_full_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Geometry::isotropic([16, 16, 16]);
    for _ in 0..40 {
        let mask = common::random_boxes(&g, 1, 8, &mut rng);
        let voxels: Vec<usize> = (0..mask.data().len()).filter(|&i| mask.data()[i]).collect();
        for k in 1..=3u8 {
            for (t, full) in [
                (LesionTransform::Erode(k), erode(&mask, k as usize)),
                (LesionTransform::Dilate(k), dilate(&mask, k as usize)),
            ] {
                let mut got = apply_transform(&g, &voxels, t);
                got.sort_unstable();
                let want: Vec<usize> = (0..full.data().len()).filter(|&i| full.data()[i]).collect();
                assert_eq!(got, want, "{t}");
            }
        }
    }
}

#[test]
fn exact_rank_sum_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=6);
        // integer values force ties
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.gen_range(0..6) as f64).collect();
        let r = wilcoxon_rank_sum(&x, &y).unwrap();
        assert_eq!(r.method, TestMethod::Exact);
        let oracle = common::enumerate_rank_sum_p(&x, &y);
        assert!((r.p_two_sided - oracle).abs() < 1e-12, "{x:?} {y:?}: {} vs {oracle}", r.p_two_sided);
    }
}

#[test]
fn normal_approximation_matches_hand_formula() {
    let x: Vec<f64> = (1..=13).map(f64::from).collect();
    let y: Vec<f64> = (14..=26).map(f64::from).collect();
    let r = wilcoxon_rank_sum(&x, &y).unwrap();
    assert_eq!(r.method, TestMethod::NormalApprox);
    assert_eq!(r.statistic, 91.0);
    // mean 175.5, variance 13·13·27/12 = 380.25, sd 19.5
    let z = (175.5f64 - 91.0 - 0.5) / 19.5;
    let p = erfc(z / 2f64.sqrt());
    assert!((r.p_two_sided - p).abs() < 1e-14, "{} vs {p}", r.p_two_sided);

    // two tied values in each sample
    let x: Vec<f64> = [1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0].to_vec();
    let y: Vec<f64> = x.iter().map(|v| v + 2.5).collect();
    let r = wilcoxon_rank_sum(&x, &y).unwrap();
    let pooled: Vec<f64> = x.iter().chain(&y).copied().collect();
    let ranks = lesionsynth::stats::midranks(&pooled);
    let w: f64 = ranks[..13].iter().sum();
    let mut ties = std::collections::BTreeMap::new();
    for v in &pooled {
        *ties.entry(v.to_bits()).or_insert(0.0f64) += 1.0;
    }
    let tie_term: f64 = ties.values().map(|t| t * t * t - t).sum();
    let big_n = 26.0f64;
    let var = 13.0 * 13.0 / 12.0 * (big_n + 1.0 - tie_term / (big_n * (big_n - 1.0)));
    let z = ((w - 13.0 * 27.0 / 2.0).abs() - 0.5) / var.sqrt();
    let p = 2.0 * Normal::standard().sf(z);
    assert!((r.p_two_sided - p).abs() < 1e-14);
}

#[test]
fn bh_matches_min_over_larger_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(1..30);
        let p: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.05 } else { rng.gen::<f64>() })
            .collect();
        let q = bh_adjust(&p).unwrap();
        let mut sorted = p.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        for (i, &pi) in p.iter().enumerate() {
            // q_i = min over ranks j ≥ rank(p_i) of p_(j) · n / j
            let rank = sorted.iter().position(|&s| s == pi).unwrap() + 1;
            let want = (rank..=n)
                .map(|j| (sorted[j - 1] * n as f64 / j as f64).min(1.0))
                .fold(f64::INFINITY, f64::min);
            assert!((q[i] - want).abs() <= 1e-15 * want.max(1.0), "{} vs {want}", q[i]);
        }
    }
}

#[test]
fn quantile_matches_linear_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let mut v: Vec<f64> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        let q = rng.gen::<f64>();
        let h = (v.len() - 1) as f64 * q;
        let (lo, frac) = (h.floor() as usize, h.fract());
        let want = if lo + 1 < v.len() { v[lo] * (1.0 - frac) + v[lo + 1] * frac } else { v[lo] };
        assert!((quantile(&v, q) - want).abs() < 1e-12);
    }
}

#[test]
fn bland_altman_matches_direct_formulas() {
    let gt = [120.0, 340.5, 80.0, 15.0, 990.0, 410.0];
    let pred = [100.0, 360.0, 70.5, 20.0, 900.0, 400.0];
    let d: Vec<f64> = gt.iter().zip(&pred).map(|(g, p)| g - p).collect();
    let bias = d.iter().sum::<f64>() / 6.0;
    let sd = (d.iter().map(|x| (x - bias).powi(2)).sum::<f64>() / 5.0).sqrt();
    let ba = bland_altman(&gt, &pred).unwrap();
    assert!((ba.bias - bias).abs() < 1e-12);
    assert!((ba.sd - sd).abs() < 1e-12);
    assert!((ba.loa_low - (bias - 1.96 * sd)).abs() < 1e-12);
    assert!((ba.loa_high - (bias + 1.96 * sd)).abs() < 1e-12);
    assert_eq!(ba.points[1], ((340.5 + 360.0) / 2.0, -19.5));
}

/// Gram-Schmidt QR of the linear part recovers the rotation and the
/// scale·shear factor.
#[test]
fn affine_linear_part_factorizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let p = AffineParams {
            rotation_deg: [0, 1, 2].map(|_| rng.gen_range(-20.0..20.0)),
            scale: [0, 1, 2].map(|_| rng.gen_range(0.8..1.2)),
            shear: [0, 1, 2].map(|_| rng.gen_range(-0.05..0.05)),
        };
        let l = p.linear();
        let col = |j: usize| [l[0][j], l[1][j], l[2][j]];
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let mut q: Vec<[f64; 3]> = Vec::new();
        let mut r = [[0.0f64; 3]; 3];
        for j in 0..3 {
            let mut v = col(j);
            for (i, qi) in q.iter().enumerate() {
                r[i][j] = dot(*qi, col(j));
                for k in 0..3 {
                    v[k] -= r[i][j] * qi[k];
                }
            }
            r[j][j] = dot(v, v).sqrt();
            q.push(v.map(|c| c / r[j][j]));
        }
        for a in 0..3 {
            assert!((r[a][a] - p.scale[a]).abs() < 1e-12);
        }
        assert!((r[0][1] - p.scale[0] * p.shear[0]).abs() < 1e-12);
        assert!((r[0][2] - p.scale[0] * p.shear[1]).abs() < 1e-12);
        assert!((r[1][2] - p.scale[1] * p.shear[2]).abs() < 1e-12);
        let det = dot(q[0], [q[1][1] * q[2][2] - q[1][2] * q[2][1], q[1][2] * q[2][0] - q[1][0] * q[2][2], q[1][0] * q[2][1] - q[1][1] * q[2][0]]);
        assert!((det - 1.0).abs() < 1e-12, "rotation determinant {det}");
    }
}

#[test]
fn svf_of_negated_velocity_inverts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Geometry::isotropic([24, 24, 24]);
    let v = sample_velocity(&g, 2.0, [4, 4, 4], &mut rng);
    let neg: Vec<[f64; 3]> = v.iter().map(|x| x.map(|c| -c)).collect();
    let fwd = integrate_velocity(&g, &v, 7);
    let inv = integrate_velocity(&g, &neg, 7);
    let res = composition_residual(&fwd, &inv);
    let interior: Vec<f64> = (0..g.n_voxels())
        .filter(|&i| g.coords(i).iter().all(|&c| (4..20).contains(&c)))
        .map(|i| res[i])
        .collect();
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    assert!(fwd.mean_magnitude_mm() > 0.5, "field too small to be meaningful");
    assert!(mean < 0.05, "mean interior inverse residual {mean} voxels");
}

/// Kolmogorov-Smirnov statistic of a single-class GMM image against its
/// configured normal, at the 1% critical value.
#[test]
fn gmm_intensities_follow_configured_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = Geometry::isotropic([30, 30, 30]);
    let parc = LabelVolume::with_k(Volume::filled(g, 1u16), 2).unwrap();
    let params = GmmParams {
        means: vec![0.0, 87.5],
        stds: vec![1.0, 12.25],
    };
    let img = sample_gmm_image(&parc, &params, &mut rng).unwrap();
    let mut v: Vec<f64> = img.data().iter().map(|&x| x as f64).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let dist = Normal::new(87.5, 12.25).unwrap();
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = dist.cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");

    // the same test detects a shifted sample
    let shifted = NormalDist::new(88.5, 12.25).unwrap();
    let mut w: Vec<f64> = (0..v.len()).map(|_| shifted.sample(&mut rng)).collect();
    w.sort_by(|a, b| a.total_cmp(b));
    let dw = w
        .iter()
        .enumerate()
        .map(|(i, &x)| (dist.cdf(x) - (i + 1) as f64 / n).abs())
        .fold(0.0, f64::max);
    assert!(dw > 1.628 / n.sqrt());
}
