use std::f64::consts::PI;

use prisma::field::{fft, sample_grf, Field, GrfSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(batch: usize, channels: usize, n: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..batch * channels * n * n).map(|_| rng.random_range(-5.0..5.0)).collect();
    Field::new(batch, channels, n, data).unwrap()
}

#[test]
fn grf_pointwise_mean_vanishes() {
    for spec in [GrfSpec::rbf(0.05), GrfSpec::inverse_laplacian_squared(9.0)] {
        let f = sample_grf(&spec, 10_000, 1, 8, 11).unwrap();
        let plane = 64;
        let mut mean = vec![0.0; plane];
        let mut sq = vec![0.0; plane];
        for b in 0..10_000 {
            for (p, v) in f.plane(b, 0).iter().enumerate() {
                mean[p] += v / 10_000.0;
                sq[p] += v * v / 10_000.0;
            }
        }
        for p in 0..plane {
            let std = (sq[p] - mean[p] * mean[p]).sqrt();
            assert!(mean[p].abs() < 0.05 * std, "{spec:?} pixel {p}: {} vs {std}", mean[p]);
        }
    }
}

#[test]
fn grf_periodogram_matches_density() {
    let n = 16;
    let shift = 9.0;
    let samples = 10_000;
    let f = sample_grf(&GrfSpec::inverse_laplacian_squared(shift), samples, 1, n, 12).unwrap();
    let spec = f.fft2();
    let wh = n / 2 + 1;
    let mut power = vec![0.0; n * wh];
    for b in 0..samples {
        for (acc, z) in power.iter_mut().zip(spec.plane(b, 0)) {
            *acc += z.norm_sqr() / samples as f64;
        }
    }
    let density = |i: usize, j: usize| {
        let (ky, kx) = (fft::wavenumber(i, n) as f64, j as f64);
        (4.0 * PI * PI * (kx * kx + ky * ky) + shift).powi(-2)
    };
    let scale = power[1] / density(0, 1);
    for i in 0..n {
        for j in 0..wh {
            let ratio = power[i * wh + j] / (scale * density(i, j));
            assert!((ratio - 1.0).abs() < 0.1, "mode ({i},{j}): {ratio}");
        }
    }
}

#[test]
fn constant_resampling_round_trip() {
    let c = Field::constant(2, 3, 16, 3.5).unwrap();
    for factor in [1, 2, 4, 8] {
        assert!(c.downsample(factor).unwrap().data().iter().all(|&v| v == 3.5));
        assert!(c.upsample(factor).unwrap().data().iter().all(|&v| (v - 3.5).abs() < 1e-15));
        assert_eq!(c.upsample(factor).unwrap().downsample(factor).unwrap(), c);
    }
}

#[test]
fn hand_computed_pooling() {
    let f = Field::new(1, 1, 4, (0..16).map(f64::from).collect()).unwrap();
    assert_eq!(f.downsample(2).unwrap().data(), &[2.5, 4.5, 10.5, 12.5]);
    assert!(f.downsample(3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_round_trip(log_n in 1u32..7, seed in any::<u64>()) {
        let f = random_field(2, 2, 1 << log_n, seed);
        let back = f.fft2().ifft2();
        let err = back.zip_map(&f, |a, b| a - b).unwrap().max_abs();
        prop_assert!(err < 1e-12 * f.max_abs());
    }

    #[test]
    fn parseval(log_n in 1u32..7, seed in any::<u64>()) {
        let f = random_field(1, 1, 1 << log_n, seed);
        let lhs = f.data().iter().map(|v| v * v).sum::<f64>() * f.plane_len() as f64;
        let rhs = f.fft2().energy();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs);
    }

    #[test]
    fn pooling_partitions_the_sum(log_n in 1u32..7, log_factor in 0u32..7, seed in any::<u64>()) {
        prop_assume!(log_factor <= log_n);
        let factor = 1usize << log_factor;
        let f = random_field(1, 2, 1 << log_n, seed);
        let pooled = f.downsample(factor).unwrap();
        let lhs = pooled.sum() * (factor * factor) as f64;
        prop_assert!((lhs - f.sum()).abs() <= 1e-9 * f.data().iter().map(|v| v.abs()).sum::<f64>());
    }

    #[test]
    fn grf_is_a_pure_function(seed in any::<u64>(), log_n in 2u32..6) {
        let spec = GrfSpec::rbf(0.05);
        let a = sample_grf(&spec, 1, 2, 1 << log_n, seed).unwrap();
        let b = sample_grf(&spec, 1, 2, 1 << log_n, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
