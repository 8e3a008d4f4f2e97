mod common;

use common::*;
use mimo_balance::duality::{
    dl_mmse_receiver, dl_power_from_mse, dl_stream_mse, dl_user_mse_matrix, duality_couplings,
    ul_mmse_receiver, ul_power_from_mse, ul_stream_mse, ul_user_mse_matrix, StreamMseVector,
};
use mimo_balance::linalg::CMatrix;
use mimo_balance::system_model::{ChannelSet, SystemConfig};
use num_complex::Complex64;
use proptest::prelude::*;

#[test]
fn dl_mse_matches_straight_line_evaluation() {
    for seed in 0..20 {
        let (config, channel, state) = random_instance(seed, 0.3);
        let h = channel.stacked();
        let nd = state.num_streams();
        let rx: Vec<_> = (0..nd).map(|i| column(&state.rx_beamformer, i)).collect();
        let tx: Vec<_> = (0..nd).map(|i| column(&state.tx_beamformer, i)).collect();
        let eps = dl_stream_mse(&state, &channel, config.noise_variance).unwrap();
        for i in 0..nd {
            let want = straight_line_mse(h, &rx, &tx, &state.beta, &state.dl_powers, 0.3, i);
            assert!((eps.eps[i] - want).abs() < 1e-12, "stream {i}: {} vs {want}", eps.eps[i]);
        }
    }
}

#[test]
fn ul_mse_is_dl_mse_of_role_swapped_system() {
    for seed in 0..20 {
        let (_, channel, state) = random_instance(seed, 0.7);
        let h_up = channel.stacked().adjoint();
        let nd = state.num_streams();
        // base station receives with g, users transmit with f over H^H
        let rx: Vec<_> = (0..nd).map(|i| column(&state.tx_beamformer, i)).collect();
        let tx: Vec<_> = (0..nd).map(|i| column(&state.rx_beamformer, i)).collect();
        let eps = ul_stream_mse(&state, &channel, 0.7).unwrap();
        for i in 0..nd {
            let want = straight_line_mse(&h_up, &rx, &tx, &state.beta, &state.ul_powers, 0.7, i);
            assert!((eps.eps[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn psi_entries_are_squared_cross_gains() {
    let config = SystemConfig::symmetric(4, 2, 2, 2, 1.0, 0.5).unwrap();
    let channel = mimo_balance::system_model::generate_iid_channel(&config, 3).unwrap();
    let state = random_state(&config, &mut rng(3));
    let cpl = duality_couplings(&state, &channel);
    let h = channel.stacked();
    for i in 0..4 {
        let gi = column(&state.tx_beamformer, i);
        for j in 0..4 {
            let fj = column(&state.rx_beamformer, j);
            let want = if i == j { 0.0 } else { bilinear(&fj, h, &gi).norm_sqr() };
            assert!((cpl.psi[i][j] - want).abs() < 1e-13);
        }
        let fi = column(&state.rx_beamformer, i);
        let x = bilinear(&fi, h, &gi);
        let b = state.beta[i];
        let want_d = b * b * x.norm_sqr() - 2.0 * b * x.re + 1.0;
        assert!((cpl.d[i] - want_d).abs() < 1e-13);
    }
}

#[test]
fn dl_power_round_trip() {
    for seed in 0..50 {
        let (_, channel, state) = random_instance(seed, 0.4);
        let eps = dl_stream_mse(&state, &channel, 0.4).unwrap();
        let cpl = duality_couplings(&state, &channel);
        let p = dl_power_from_mse(&eps, &cpl, &state.beta, 0.4).unwrap();
        for (a, b) in p.iter().zip(&state.dl_powers) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn ul_targets_map_to_dl_with_equal_sum_power() {
    for seed in 0..50 {
        let (_, channel, state) = random_instance(seed, 0.4);
        let eps = ul_stream_mse(&state, &channel, 0.4).unwrap();
        let cpl = duality_couplings(&state, &channel);
        let p = dl_power_from_mse(&eps, &cpl, &state.beta, 0.4).unwrap();
        let (sp, sq): (f64, f64) = (p.iter().sum(), state.ul_powers.iter().sum());
        assert!((sp - sq).abs() < 1e-9);
        let mut dl = state.clone();
        dl.dl_powers = p;
        assert!(dl_stream_mse(&dl, &channel, 0.4).unwrap().max_abs_diff(&eps) < 1e-9);
    }
}

#[test]
fn symmetric_psi_gives_equal_powers() {
    let cpl = mimo_balance::duality::DualityCouplings {
        d: vec![0.1, 0.2],
        psi: vec![vec![0.0, 0.3], vec![0.3, 0.0]],
    };
    let eps = StreamMseVector::new(vec![0.6, 0.6]);
    let beta = [1.0, 0.8];
    let p = dl_power_from_mse(&eps, &cpl, &beta, 0.2).unwrap();
    let q = ul_power_from_mse(&eps, &cpl, &beta, 0.2).unwrap();
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn user_matrix_diagonals_match_stream_mses() {
    for seed in 0..20 {
        let (config, channel, state) = random_instance(seed, 0.25);
        let dl = dl_stream_mse(&state, &channel, 0.25).unwrap();
        let ul = ul_stream_mse(&state, &channel, 0.25).unwrap();
        let layout = config.layout();
        for k in 0..3 {
            let edl = dl_user_mse_matrix(&state, &channel, 0.25, k).unwrap();
            let eul = ul_user_mse_matrix(&state, &channel, 0.25, k).unwrap();
            for (local, i) in layout.streams_of(k).enumerate() {
                assert!((edl[(local, local)].re - dl.eps[i]).abs() < 1e-12);
                assert!((eul[(local, local)].re - ul.eps[i]).abs() < 1e-12);
            }
            let trace: f64 = layout.streams_of(k).map(|i| ul.eps[i]).sum();
            assert!((eul.trace().re - trace).abs() < 1e-12);
            for e in [&edl, &eul] {
                assert!((e - e.adjoint()).norm() < 1e-12);
                let herm = (e + e.adjoint()).map(|z| z * 0.5);
                assert!(herm.symmetric_eigenvalues().iter().all(|&v| v > 0.0));
            }
        }
    }
}

#[test]
fn perfect_interference_free_link_has_vanishing_mse_matrix() {
    // two single-antenna users on orthogonal transmit directions
    let config = SystemConfig::symmetric(2, 2, 1, 1, 1.0, 1e-12).unwrap();
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let channel = ChannelSet::new(vec![
        CMatrix::from_row_slice(1, 2, &[one, zero]),
        CMatrix::from_row_slice(1, 2, &[zero, one]),
    ])
    .unwrap();
    let state = mimo_balance::duality::TransceiverState {
        layout: config.layout(),
        tx_beamformer: CMatrix::identity(2, 2),
        rx_beamformer: CMatrix::identity(2, 2),
        beta: vec![1.0, 1.0],
        dl_powers: vec![0.5, 0.5],
        ul_powers: vec![0.5, 0.5],
    };
    for k in 0..2 {
        assert!(dl_user_mse_matrix(&state, &channel, 1e-12, k).unwrap().norm() < 1e-9);
    }
}

/// Minimum over `beta` of the uplink MSE of stream `i` with receive vector `g`.
fn ul_mse_best_beta(channel: &ChannelSet, f: &CMatrix, q: &[f64], sigma2: f64, g: &[Complex64], i: usize) -> f64 {
    let h = channel.stacked().adjoint();
    let mut a = sigma2;
    for j in 0..q.len() {
        a += q[j] * bilinear(g, &h, &column(f, j)).norm_sqr();
    }
    let x = bilinear(g, &h, &column(f, i)).re;
    if x <= 0.0 {
        return 1.0;
    }
    1.0 - q[i] * x * x / a
}

#[test]
fn ul_mmse_receiver_beats_random_perturbations() {
    let (_, channel, state) = random_instance(11, 0.2);
    let (g, beta) = ul_mmse_receiver(&channel, &state.rx_beamformer, &state.ul_powers, 0.2).unwrap();
    let mut tuned = state.clone();
    tuned.tx_beamformer = g.clone();
    tuned.beta = beta;
    let best = ul_stream_mse(&tuned, &channel, 0.2).unwrap();
    let mut r = rng(99);
    for trial in 0..100 {
        let i = trial % state.num_streams();
        let mut pert: Vec<Complex64> = column(&g, i)
            .into_iter()
            .map(|z| z + cn(&mut r) * 0.1)
            .collect();
        let n = pert.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        pert.iter_mut().for_each(|z| *z /= n);
        let other = ul_mse_best_beta(&channel, &state.rx_beamformer, &state.ul_powers, 0.2, &pert, i);
        assert!(best.eps[i] <= other + 1e-12, "trial {trial}: {} > {other}", best.eps[i]);
    }
}

#[test]
fn ul_receiver_tends_to_matched_filter_at_high_noise() {
    let (_, channel, state) = random_instance(4, 1.0);
    let (g, _) = ul_mmse_receiver(&channel, &state.rx_beamformer, &state.ul_powers, 1e9).unwrap();
    let sig = channel.stacked().adjoint() * &state.rx_beamformer;
    for i in 0..state.num_streams() {
        let s = sig.column(i);
        let cos = g.column(i).dotc(&s).norm() / s.norm();
        assert!((cos - 1.0).abs() < 1e-6);
    }
}

#[test]
fn dl_mmse_update_never_raises_stream_mse() {
    for seed in 0..30 {
        let (config, channel, state) = random_instance(seed, 0.3);
        let before = dl_stream_mse(&state, &channel, 0.3).unwrap();
        let (f, beta) = dl_mmse_receiver(
            &channel,
            &config.layout(),
            &state.tx_beamformer,
            &state.dl_powers,
            0.3,
        )
        .unwrap();
        let mut after_state = state.clone();
        after_state.rx_beamformer = f;
        after_state.beta = beta;
        after_state.validate(&channel, 1.0 + 1e-12).unwrap();
        let after = dl_stream_mse(&after_state, &channel, 0.3).unwrap();
        for (a, b) in after.eps.iter().zip(&before.eps) {
            assert!(a <= &(b + 1e-12));
            assert!(*a > 0.0 && *a <= 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn duality_preserves_mses_and_sum_power(seed in any::<u64>(), sigma2 in 0.01f64..2.0) {
        let (_, channel, state) = random_instance(seed, sigma2);
        let eps = dl_stream_mse(&state, &channel, sigma2).unwrap();
        let cpl = duality_couplings(&state, &channel);
        let q = ul_power_from_mse(&eps, &cpl, &state.beta, sigma2).unwrap();
        prop_assert!(q.iter().all(|&v| v > 0.0));
        let total: f64 = q.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let mut ul = state.clone();
        ul.ul_powers = q;
        prop_assert!(ul_stream_mse(&ul, &channel, sigma2).unwrap().max_abs_diff(&eps) < 1e-9);
    }

    #[test]
    fn zero_beta_streams_have_unit_mse(seed in any::<u64>(), mask in prop::collection::vec(any::<bool>(), 6)) {
        let (_, channel, mut state) = random_instance(seed, 0.5);
        for (b, &off) in state.beta.iter_mut().zip(&mask) {
            if off { *b = 0.0; }
        }
        let dl = dl_stream_mse(&state, &channel, 0.5).unwrap();
        let ul = ul_stream_mse(&state, &channel, 0.5).unwrap();
        for (i, &off) in mask.iter().enumerate() {
            if off {
                prop_assert_eq!(dl.eps[i], 1.0);
                prop_assert_eq!(ul.eps[i], 1.0);
            }
        }
    }
}

#[test]
fn random_helper_states_are_valid() {
    let mut r = rng(1);
    let config = duality_config(0.1);
    let channel = mimo_balance::system_model::generate_iid_channel(&config, 1).unwrap();
    for _ in 0..10 {
        let s = random_state(&config, &mut r);
        s.validate(&channel, 1.0 + 1e-12).unwrap();
    }
}
