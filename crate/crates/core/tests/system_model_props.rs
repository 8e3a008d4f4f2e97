mod common;

use common::*;
use mimo_balance::linalg::CMatrix;
use mimo_balance::system_model::{
    generate_iid_channel, generate_structured_channel, user_rates, ChannelSet, SystemConfig,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn random_filter(seed: u64, m: usize, nd: usize) -> CMatrix {
    let mut r = rng(seed);
    CMatrix::from_fn(m, nd, |_, _| cn(&mut r) * 0.4)
}

/// Rate of user `k` as a sum of log eigenvalues of `I + N^-1 S`, with `S`
/// the user's own received covariance and `N` noise plus interference.
fn eigen_rate(channel: &ChannelSet, filter: &CMatrix, streams: &[usize], sigma2: f64, k: usize) -> f64 {
    let h = channel.user(k);
    let start: usize = streams[..k].iter().sum();
    let own = filter.columns(start, streams[k]).into_owned();
    let s = h * &own * own.adjoint() * h.adjoint();
    let total = h * filter * filter.adjoint() * h.adjoint();
    let n = &total - &s + CMatrix::identity(h.nrows(), h.nrows()) * Complex64::new(sigma2, 0.0);
    // whiten with the Cholesky factor to get a Hermitian matrix argument
    let l = n.cholesky().unwrap().l();
    let li = l.clone().try_inverse().unwrap();
    let arg = &li * s * li.adjoint();
    let herm = (&arg + arg.adjoint()).map(|z| z * 0.5);
    herm.symmetric_eigenvalues().iter().map(|&e| (1.0 + e).ln()).sum()
}

#[test]
fn rates_match_eigenvalue_oracle() {
    let scalar = SystemConfig::symmetric(2, 2, 1, 1, 1.0, 0.3).unwrap();
    let mimo = SystemConfig::symmetric(6, 3, 2, 2, 1.0, 0.3).unwrap();
    for config in [scalar, mimo] {
        for seed in 0..20 {
            let channel = generate_iid_channel(&config, seed).unwrap();
            let filter = random_filter(seed + 7, config.num_tx_antennas, config.total_streams());
            let rates = user_rates(&channel, &filter, &config.streams, 0.3).unwrap();
            for k in 0..config.num_users() {
                let want = eigen_rate(&channel, &filter, &config.streams, 0.3, k);
                assert!((rates[k] - want).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn entries_have_unit_mean_power() {
    let config = SystemConfig::symmetric(6, 3, 2, 2, 1.0, 1.0).unwrap();
    let (mut acc, mut n) = (0.0, 0usize);
    for seed in 0..3000 {
        let ch = generate_iid_channel(&config, seed).unwrap();
        acc += ch.stacked().iter().map(|z| z.norm_sqr()).sum::<f64>();
        n += ch.stacked().len();
    }
    assert!(n >= 100_000);
    assert!((acc / n as f64 - 1.0).abs() < 0.02);
}

#[test]
fn vanishing_alpha_collapses_user_rank() {
    let config = SystemConfig::symmetric(6, 3, 2, 2, 1.0, 1.0).unwrap();
    let mut ratios = Vec::new();
    for seed in 0..200 {
        let ch = generate_structured_channel(&config, 1e-6, seed).unwrap();
        for h in ch.users() {
            let sv = h.singular_values();
            let (hi, lo) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
            ratios.push(lo / hi);
        }
    }
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[ratios.len() / 2] < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rates_ignore_per_user_unitary_rotation(seed in any::<u64>(), theta in 0.0f64..std::f64::consts::TAU, phi in 0.0f64..std::f64::consts::TAU) {
        let config = SystemConfig::symmetric(6, 3, 2, 2, 1.0, 0.5).unwrap();
        let channel = generate_structured_channel(&config, 0.3, seed).unwrap();
        let filter = random_filter(seed ^ 1, 6, 6);
        let base = user_rates(&channel, &filter, &config.streams, 0.5).unwrap();
        let (c, s) = (theta.cos(), theta.sin());
        let e = Complex64::from_polar(1.0, phi);
        let u = CMatrix::from_row_slice(2, 2, &[
            Complex64::new(c, 0.0), -e.conj() * s,
            e * s, Complex64::new(c, 0.0),
        ]);
        let mut rotated = filter.clone();
        let block = filter.columns(2, 2) * &u;
        rotated.columns_mut(2, 2).copy_from(&block);
        let after = user_rates(&channel, &rotated, &config.streams, 0.5).unwrap();
        for (a, b) in after.iter().zip(&base) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_user_rate_grows_with_power(seed in any::<u64>(), scale in 1.0f64..10.0) {
        let config = SystemConfig::symmetric(4, 1, 2, 2, 1.0, 0.5).unwrap();
        let channel = generate_iid_channel(&config, seed).unwrap();
        let filter = random_filter(seed, 4, 2);
        let low = user_rates(&channel, &filter, &config.streams, 0.5).unwrap()[0];
        let hi = user_rates(&channel, &(filter * Complex64::new(scale.sqrt(), 0.0)), &config.streams, 0.5).unwrap()[0];
        prop_assert!(hi >= low - 1e-12);
    }

    #[test]
    fn structured_draws_are_reproducible(seed in any::<u64>(), alpha in 0.01f64..1.0) {
        let config = SystemConfig::symmetric(4, 2, 2, 2, 1.0, 1.0).unwrap();
        let a = generate_structured_channel(&config, alpha, seed).unwrap();
        let b = generate_structured_channel(&config, alpha, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
