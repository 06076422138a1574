use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use refsr_core::degrade::{downsample_in_plane, downsample_through_plane, upsample_to_grid, DegradeConfig, SliceMode};
use refsr_core::dtfit::{fractional_anisotropy_of, mean_diffusivity, symmetric_eigen, Mat3};
use refsr_core::metrics::{psnr, ssim, SsimParams};
use refsr_core::selfcheck::{random_rotation, rotate};
use refsr_core::train::split_cases;
use refsr_core::volume::{decode_volume, encode_volume, percentile, Volume};

fn volume(dims: [usize; 3], data: Vec<f64>) -> Volume {
    Volume::new(dims, data, [1.5, 1.0, 1.0], 1.0).unwrap()
}

fn spd(l: [f64; 3], seed: u64) -> Mat3 {
    let diag = [[l[0], 0.0, 0.0], [0.0, l[1], 0.0], [0.0, 0.0, l[2]]];
    rotate(&diag, &random_rotation(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rvol_round_trip_is_exact_for_f32_values(
        data in prop::collection::vec(-1e3f32..1e3, 2 * 3 * 4),
        scale in 0.1f32..10.0,
    ) {
        let v = Volume::new([2, 3, 4], data.iter().map(|&x| x as f64).collect(), [1.5, 0.5, 0.5], scale as f64).unwrap();
        let back = decode_volume(&encode_volume(&v).unwrap()).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn psnr_is_symmetric_and_finite_off_diagonal(
        a in prop::collection::vec(0.0f64..1.0, 64),
        b in prop::collection::vec(0.0f64..1.0, 64),
    ) {
        let ab = psnr(&a, &b, 1.0).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, 1.0).unwrap());
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        if a != b {
            prop_assert!(ab.is_finite());
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(
        a in prop::collection::vec(0.0f64..1.0, 16 * 16),
        b in prop::collection::vec(0.0f64..1.0, 16 * 16),
    ) {
        let p = SsimParams::default();
        let ab = ssim(&a, &b, 16, 16, &p).unwrap();
        prop_assert!((ab - ssim(&b, &a, 16, 16, &p).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(ssim(&a, &a, 16, 16, &p).unwrap(), 1.0);
    }

    #[test]
    fn degradation_is_linear(
        v in prop::collection::vec(-1.0f64..1.0, 8 * 8 * 8),
        w in prop::collection::vec(-1.0f64..1.0, 8 * 8 * 8),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        sliding in any::<bool>(),
    ) {
        let dims = [8, 8, 8];
        let cfg = DegradeConfig {
            slice_mode: if sliding { SliceMode::Sliding } else { SliceMode::Block },
            through_plane_factor: 2,
            in_plane_factor: 2,
            ..Default::default()
        };
        let op = |x: &Volume| {
            let t = downsample_through_plane(x, &cfg).unwrap();
            let i = downsample_in_plane(&t, 2).unwrap();
            upsample_to_grid(&i, dims).unwrap()
        };
        let mix: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let lhs = op(&volume(dims, mix));
        let (ov, ow) = (op(&volume(dims, v)), op(&volume(dims, w)));
        for ((l, x), y) in lhs.data().iter().zip(ov.data()).zip(ow.data()) {
            prop_assert!((l - (a * x + b * y)).abs() < 1e-9);
        }
    }

    #[test]
    fn md_and_fa_are_rotation_invariant(
        l in prop::array::uniform3(1e-4f64..3e-3),
        s1 in any::<u64>(),
        s2 in any::<u64>(),
    ) {
        let (d1, d2) = (spd(l, s1), spd(l, s2));
        let mean = (l[0] + l[1] + l[2]) / 3.0;
        prop_assert!((mean_diffusivity(&d1) - mean).abs() < 1e-15);
        prop_assert!((mean_diffusivity(&d1) - mean_diffusivity(&d2)).abs() < 1e-15);
        let (f1, f2) = (
            fractional_anisotropy_of(symmetric_eigen(&d1).0),
            fractional_anisotropy_of(symmetric_eigen(&d2).0),
        );
        prop_assert!((f1 - fractional_anisotropy_of(l)).abs() < 1e-9);
        prop_assert!((f1 - f2).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn percentile_is_monotone_and_bounded(
        values in prop::collection::vec(-10.0f64..10.0, 1..50),
        p in 0.0f64..100.0,
        q in 0.0f64..100.0,
    ) {
        let (lo, hi) = (p.min(q), p.max(q));
        let (a, b) = (percentile(&values, lo), percentile(&values, hi));
        prop_assert!(a <= b);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= a && b <= max);
        prop_assert_eq!(percentile(&values, 100.0), max);
    }

    #[test]
    fn split_partitions_every_case_once(n in 3usize..40, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("case-{i:02}")).collect();
        let s = split_cases(&ids, [5, 2, 3], seed).unwrap();
        prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
        let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        prop_assert_eq!(all, ids.clone());
        prop_assert_eq!(split_cases(&ids, [5, 2, 3], seed).unwrap(), s);
    }
}
