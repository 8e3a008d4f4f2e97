//! Double-loop user-rate balancing.
//!
//! The inner loop balances `tr(W_k E_k) / xi_k` by alternating MMSE receiver
//! updates in the dual uplink and the downlink, carrying the per-stream MSEs
//! across links through the duality power maps and re-solving the user power
//! split as a Perron eigenproblem. The outer loop resets `W_k = E_k^-1`,
//! rescales the rate targets by `t = min_k r_k / r_k^o` and moves the WMSE
//! targets to `xi_k = d_k + r_k - r_k^o`.

use serde::{Deserialize, Serialize};

use crate::duality::{
    self, IDLE_POWER, dl_mmse_receiver, dl_power_from_mse, dl_stream_mse, duality_couplings,
    ul_mmse_receiver, ul_power_from_mse, ul_stream_mse, StreamMseVector, TransceiverState,
};
use crate::error::{Error, InnerStep, Result};
use crate::linalg::{self, c, CMatrix};
use crate::system_model::{user_rates, ChannelSet, SystemConfig};
use crate::wmse::{
    build_coupling_matrix, perron_solve, power_shapes, user_wmse, wmse_coefficients,
    WeightState,
};

/// Iteration caps and stopping tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancerParams {
    /// Inner iterations per outer iteration.
    pub n_max: usize,
    pub m_max: usize,
    /// Relative change of `Delta` that ends the inner loop.
    pub inner_tol: f64,
    /// Bound on `|t - 1|` that ends the outer loop.
    pub outer_tol: f64,
    /// Rotate each user's streams into the eigenbasis of its new weight
    /// matrix at every outer update, so `W_k` is diagonal inside the inner
    /// loop. Rotations leave every user rate unchanged.
    #[serde(default = "default_true")]
    pub diagonalize_weights: bool,
}

fn default_true() -> bool {
    true
}

impl Default for BalancerParams {
    fn default() -> Self {
        BalancerParams {
            n_max: 20,
            m_max: 100,
            inner_tol: 1e-6,
            outer_tol: 1e-4,
            diagonalize_weights: true,
        }
    }
}

impl BalancerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 || self.m_max == 0 {
            return Err(Error::InvalidConfig("iteration caps must be at least 1".into()));
        }
        if !(self.inner_tol > 0.0) || !(self.outer_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one inner iteration.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub state: TransceiverState,
    pub delta: f64,
    pub ul_mse: StreamMseVector,
    pub dl_mse: StreamMseVector,
}

/// Per-outer-iteration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// `Delta` after each inner iteration.
    pub deltas: Vec<f64>,
    /// `ln det W_k` from the uplink MSE matrices after the inner loop.
    pub ul_rates: Vec<f64>,
    /// Exact downlink rates of the equivalent downlink state.
    pub dl_rates: Vec<f64>,
    pub scale: f64,
    pub rate_targets: Vec<f64>,
}

/// Everything a balancing run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancerReport {
    /// Exact user rates (nats) of the final downlink state.
    pub rates: Vec<f64>,
    /// `ln det W_k` of the final weights.
    pub weight_rates: Vec<f64>,
    pub balanced_level: f64,
    pub scale_trace: Vec<f64>,
    pub rate_trace: Vec<Vec<f64>>,
    pub outer: Vec<OuterRecord>,
    pub inner_iterations_used: Vec<usize>,
    pub converged: bool,
    /// Largest increase of `Delta` between consecutive inner iterations.
    pub max_delta_increase: f64,
    pub final_state: TransceiverState,
    pub final_weights: WeightState,
}

impl BalancerReport {
    pub fn outer_iterations(&self) -> usize {
        self.outer.len()
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sum_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

/// A failed run: the error plus whatever trace was accumulated.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct BalanceFailure {
    pub error: Error,
    pub outer: Vec<OuterRecord>,
}

impl From<Error> for BalanceFailure {
    fn from(error: Error) -> Self {
        BalanceFailure {
            error,
            outer: Vec::new(),
        }
    }
}

/// Builds the starting point: `F_k^H = (I : 0)`, uniform uplink powers,
/// MMSE uplink receivers, `W_k = I`, `xi_k = d_k` and the Perron user split.
pub fn initialize(
    config: &SystemConfig,
    channel: &ChannelSet,
    params: &BalancerParams,
) -> Result<(TransceiverState, WeightState)> {
    config.validate()?;
    params.validate()?;
    channel.check_against(config)?;
    let layout = config.layout();
    let nd = config.total_streams();
    let sigma2 = config.noise_variance;
    let mut f = CMatrix::zeros(layout.total_rx(), nd);
    for k in 0..layout.num_users() {
        for (l, i) in layout.streams_of(k).enumerate() {
            f[(layout.rx_offsets[k] + l, i)] = c(1.0);
        }
    }
    let q = vec![config.max_power / nd as f64; nd];
    let (g, beta) = ul_mmse_receiver(channel, &f, &q, sigma2)?;
    let mut state = TransceiverState {
        layout,
        tx_beamformer: g,
        rx_beamformer: f,
        beta,
        dl_powers: q.clone(),
        ul_powers: q,
    };
    let weights = WeightState::identity(&config.streams, config.rate_priorities.clone());
    let (shapes, _) = power_shapes(&state.ul_powers, &state.layout)?;
    reallocate_users(&mut state, channel, &weights, &shapes, config)?;
    Ok((state, weights))
}

/// Solves the Perron problem for fixed shapes and writes `Q_k = q_k Qbar_k`.
fn reallocate_users(
    state: &mut TransceiverState,
    channel: &ChannelSet,
    weights: &WeightState,
    shapes: &[Vec<f64>],
    config: &SystemConfig,
) -> Result<f64> {
    let system = wmse_coefficients(state, channel, &weights.weights, shapes)?;
    let lambda = build_coupling_matrix(
        &system.a,
        &system.c,
        &weights.xi,
        config.noise_variance,
        config.max_power,
    )?;
    let sol = perron_solve(&lambda, config.max_power)?;
    for k in 0..state.layout.num_users() {
        for (i, &s) in state.layout.streams_of(k).zip(&shapes[k]) {
            state.ul_powers[i] = sol.user_powers[k] * s;
        }
    }
    Ok(sol.delta)
}

/// One pass of the inner loop.
pub fn inner_iteration(
    state: &TransceiverState,
    weights: &WeightState,
    config: &SystemConfig,
    channel: &ChannelSet,
) -> Result<InnerOutcome> {
    let sigma2 = config.noise_variance;
    let mut next = state.clone();

    let (g, beta) = ul_mmse_receiver(channel, &next.rx_beamformer, &next.ul_powers, sigma2)
        .map_err(Error::at(InnerStep::UplinkReceiver))?;
    next.tx_beamformer = g;
    next.beta = beta;
    let ul_mse = ul_stream_mse(&next, channel, sigma2).map_err(Error::at(InnerStep::UplinkMse))?;

    let cpl = duality_couplings(&next, channel);
    next.dl_powers = dl_power_from_mse(&ul_mse, &cpl, &next.beta, sigma2)
        .map_err(Error::at(InnerStep::DownlinkPower))?;
    let p = next.dl_powers.clone();
    next.idle_streams_from(&p);

    let (f, beta) = dl_mmse_receiver(
        channel,
        &next.layout,
        &next.tx_beamformer,
        &next.dl_powers,
        sigma2,
    )
    .map_err(Error::at(InnerStep::DownlinkReceiver))?;
    next.rx_beamformer = f;
    next.beta = beta;
    let dl_mse = dl_stream_mse(&next, channel, sigma2).map_err(Error::at(InnerStep::DownlinkMse))?;

    let cpl = duality_couplings(&next, channel);
    next.ul_powers = ul_power_from_mse(&dl_mse, &cpl, &next.beta, sigma2)
        .map_err(Error::at(InnerStep::UplinkPower))?;
    let q = next.ul_powers.clone();
    next.idle_streams_from(&q);

    let (shapes, _) =
        power_shapes(&next.ul_powers, &next.layout).map_err(Error::at(InnerStep::PowerShape))?;
    let delta = reallocate_users(&mut next, channel, weights, &shapes, config)
        .map_err(Error::at(InnerStep::PerronSolve))?;

    Ok(InnerOutcome {
        state: next,
        delta,
        ul_mse,
        dl_mse,
    })
}

/// Uplink MSE matrices of every user.
pub fn ul_mse_matrices(
    state: &TransceiverState,
    channel: &ChannelSet,
    sigma2: f64,
) -> Result<Vec<CMatrix>> {
    (0..state.layout.num_users())
        .map(|k| duality::ul_user_mse_matrix(state, channel, sigma2, k))
        .collect()
}

/// Outer update: `W_k = E_k^-1`, `r_k = ln det W_k`, `t = min_k r_k / r_k^o`,
/// `r_k^o <- t r_k^o`, `xi_k = d_k + r_k - r_k^o`. Returns the new weights and `r`.
pub fn outer_update(
    weights: &WeightState,
    ul_mse_matrices: &[CMatrix],
) -> Result<(WeightState, Vec<f64>)> {
    let mut w = Vec::with_capacity(ul_mse_matrices.len());
    let mut rates = Vec::with_capacity(ul_mse_matrices.len());
    for e in ul_mse_matrices {
        let inv = linalg::hpd_inverse(e)?;
        rates.push(-linalg::hpd_logdet(e)?);
        w.push(inv);
    }
    let t = rates
        .iter()
        .zip(&weights.rate_targets)
        .map(|(r, r0)| r / r0)
        .fold(f64::INFINITY, f64::min);
    let rate_targets: Vec<f64> = weights.rate_targets.iter().map(|r0| t * r0).collect();
    let xi = ul_mse_matrices
        .iter()
        .zip(rates.iter().zip(&rate_targets))
        .map(|(e, (r, r0))| e.nrows() as f64 + r - r0)
        .collect();
    Ok((
        WeightState {
            weights: w,
            xi,
            rate_targets,
            scale: t,
        },
        rates,
    ))
}

/// Rotates each user's streams into the eigenbasis of its uplink MSE matrix.
/// The uplink transmit filter `F_k Q_k^{1/2}` and receive filter
/// `G_k beta_k Q_k^{-1/2}` are both multiplied by `U_k` and re-split into unit
/// columns, powers and scalings, so `E_k -> U_k^H E_k U_k` and `W_k` becomes
/// diagonal. Per-user covariances, and with them every rate, are unchanged.
pub fn rotate_to_weight_basis(
    state: &mut TransceiverState,
    weights: &mut WeightState,
    ul_mse: &[CMatrix],
) -> Result<()> {
    for (k, e) in ul_mse.iter().enumerate() {
        let eig = linalg::hermitian_part(e).symmetric_eigen();
        let u = &eig.eigenvectors;
        let streams = state.layout.streams_of(k);
        let rows = state.layout.rx_of(k);
        let mut tx = state
            .rx_beamformer
            .view((rows.start, streams.start), (rows.len(), streams.len()))
            .clone_owned();
        let mut rx = state.tx_beamformer.columns(streams.start, streams.len()).clone_owned();
        for (l, i) in streams.clone().enumerate() {
            let q = state.ul_powers[i];
            if q > 0.0 {
                tx.column_mut(l).scale_mut(q.sqrt());
                rx.column_mut(l).scale_mut(state.beta[i] / q.sqrt());
            } else {
                tx.column_mut(l).fill(c(0.0));
                rx.column_mut(l).fill(c(0.0));
            }
        }
        let tx = tx * u;
        let rx = rx * u;
        let floor = IDLE_POWER * state.ul_powers.iter().sum::<f64>();
        for (l, i) in streams.clone().enumerate() {
            let (tn, rn) = (tx.column(l).norm(), rx.column(l).norm());
            if tn * tn > floor && rn > 0.0 {
                state.ul_powers[i] = tn * tn;
                state.beta[i] = rn * tn;
                for (r, row) in rows.clone().enumerate() {
                    state.rx_beamformer[(row, i)] = tx[(r, l)] / tn;
                }
                state
                    .tx_beamformer
                    .column_mut(i)
                    .copy_from(&(rx.column(l) / c(rn)));
            } else {
                // idle: keep unit-norm filters, drop power and scaling
                state.ul_powers[i] = 0.0;
                state.beta[i] = 0.0;
                if tn > 0.0 {
                    for (r, row) in rows.clone().enumerate() {
                        state.rx_beamformer[(row, i)] = tx[(r, l)] / tn;
                    }
                }
            }
        }
        weights.weights[k] = CMatrix::from_diagonal(&eig.eigenvalues.map(|v| c(1.0 / v)));
    }
    Ok(())
}

/// Downlink powers reproducing the current uplink per-stream MSEs, and the
/// resulting exact rates.
fn equivalent_downlink(
    state: &TransceiverState,
    channel: &ChannelSet,
    config: &SystemConfig,
) -> Result<(TransceiverState, Vec<f64>)> {
    let sigma2 = config.noise_variance;
    let mut dl = state.clone();
    let eps = ul_stream_mse(state, channel, sigma2)?;
    let cpl = duality_couplings(state, channel);
    dl.dl_powers = dl_power_from_mse(&eps, &cpl, &state.beta, sigma2)?;
    let rates = user_rates(channel, &dl.dl_tx_filter(), &config.streams, sigma2)?;
    Ok((dl, rates))
}

/// Runs inner iterations until `Delta` settles or `cap` is reached.
fn inner_loop(
    state: &mut TransceiverState,
    weights: &WeightState,
    config: &SystemConfig,
    channel: &ChannelSet,
    cap: usize,
    tol: f64,
    max_increase: &mut f64,
) -> Result<(Vec<f64>, bool)> {
    let mut deltas: Vec<f64> = Vec::new();
    let mut settled = false;
    for _ in 0..cap {
        let out = inner_iteration(state, weights, config, channel)?;
        *state = out.state;
        if let Some(&prev) = deltas.last() {
            *max_increase = max_increase.max(out.delta - prev);
            deltas.push(out.delta);
            if (out.delta - prev).abs() <= tol * out.delta {
                settled = true;
                break;
            }
        } else {
            deltas.push(out.delta);
        }
    }
    Ok((deltas, settled))
}

/// Max-min weighted user-rate balancing.
pub fn balance_rates(
    config: &SystemConfig,
    channel: &ChannelSet,
    params: &BalancerParams,
) -> std::result::Result<BalancerReport, BalanceFailure> {
    let (mut state, mut weights) = initialize(config, channel, params)?;
    let sigma2 = config.noise_variance;
    let mut outer: Vec<OuterRecord> = Vec::new();
    let mut inner_used = Vec::new();
    let mut max_increase = f64::NEG_INFINITY;
    let mut converged = false;
    let mut last_delta = f64::NAN;

    let fail = |error: Error, outer: &Vec<OuterRecord>| BalanceFailure {
        error,
        outer: outer.clone(),
    };

    for m in 1..=params.m_max {
        let (deltas, _) = inner_loop(
            &mut state,
            &weights,
            config,
            channel,
            params.n_max,
            params.inner_tol,
            &mut max_increase,
        )
        .map_err(|e| fail(e, &outer))?;
        inner_used.push(deltas.len());
        last_delta = *deltas.last().expect("at least one inner iteration");

        let ul = ul_mse_matrices(&state, channel, sigma2).map_err(|e| fail(e, &outer))?;
        let (_, dl_rates) =
            equivalent_downlink(&state, channel, config).map_err(|e| fail(e, &outer))?;
        let (mut next, ul_rates) = outer_update(&weights, &ul).map_err(|e| fail(e, &outer))?;
        if params.diagonalize_weights {
            rotate_to_weight_basis(&mut state, &mut next, &ul).map_err(|e| fail(e, &outer))?;
        }
        weights = next;
        outer.push(OuterRecord {
            deltas,
            ul_rates,
            dl_rates,
            scale: weights.scale,
            rate_targets: weights.rate_targets.clone(),
        });
        if m >= 2 && (weights.scale - 1.0).abs() <= params.outer_tol {
            converged = true;
            break;
        }
    }

    let (final_state, rates) =
        equivalent_downlink(&state, channel, config).map_err(|e| fail(e, &outer))?;
    let weight_rates = weights
        .weights
        .iter()
        .map(linalg::hpd_logdet)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| fail(e, &outer))?;
    Ok(BalancerReport {
        rates,
        weight_rates,
        balanced_level: last_delta,
        scale_trace: outer.iter().map(|o| o.scale).collect(),
        rate_trace: outer.iter().map(|o| o.ul_rates.clone()).collect(),
        inner_iterations_used: inner_used,
        outer,
        converged,
        max_delta_increase: max_increase,
        final_state,
        final_weights: weights,
    })
}

/// Unweighted user-MSE balancing baseline: the same inner loop with `W_k = I`
/// and `xi_k = d_k` held fixed, run for up to `n_max * m_max` iterations.
pub fn balance_mse_unweighted(
    config: &SystemConfig,
    channel: &ChannelSet,
    params: &BalancerParams,
) -> std::result::Result<BalancerReport, BalanceFailure> {
    let (mut state, weights) = initialize(config, channel, params)?;
    let mut max_increase = f64::NEG_INFINITY;
    let (deltas, settled) = inner_loop(
        &mut state,
        &weights,
        config,
        channel,
        params.n_max * params.m_max,
        params.inner_tol,
        &mut max_increase,
    )?;
    let (final_state, rates) = equivalent_downlink(&state, channel, config)?;
    let ul = ul_mse_matrices(&state, channel, config.noise_variance)?;
    let ul_rates = ul
        .iter()
        .map(|e| linalg::hpd_logdet(e).map(|v| -v))
        .collect::<Result<Vec<_>>>()?;
    let record = OuterRecord {
        deltas: deltas.clone(),
        ul_rates: ul_rates.clone(),
        dl_rates: rates.clone(),
        scale: 1.0,
        rate_targets: weights.rate_targets.clone(),
    };
    Ok(BalancerReport {
        rates,
        weight_rates: vec![0.0; config.num_users()],
        balanced_level: *deltas.last().expect("at least one inner iteration"),
        scale_trace: vec![1.0],
        rate_trace: vec![ul_rates],
        outer: vec![record],
        inner_iterations_used: vec![deltas.len()],
        converged: settled,
        max_delta_increase: max_increase,
        final_state,
        final_weights: weights,
    })
}

/// `tr(W_k E_k) / xi_k` for every user, from the uplink MSE matrices.
pub fn balance_ratios(
    state: &TransceiverState,
    weights: &WeightState,
    channel: &ChannelSet,
    sigma2: f64,
) -> Result<Vec<f64>> {
    let ul = ul_mse_matrices(state, channel, sigma2)?;
    Ok(ul
        .iter()
        .zip(&weights.weights)
        .zip(&weights.xi)
        .map(|((e, w), xi)| user_wmse(w, e) / xi)
        .collect())
}
