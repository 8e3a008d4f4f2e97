//! Per-stream MSEs in both links, the uplink/downlink power mappings that
//! reproduce a given MSE vector, MMSE receiver updates and user MSE matrices.
//!
//! Filters are stored with unit-norm columns; all scaling lives in `beta`
//! and the per-stream powers. With `X = F^H H G` (the cross gains between
//! every receive and transmit direction) the per-stream MSEs are
//!
//! ```text
//! dl: e_i = beta_i^2 / p_i * (sum_j p_j |X_ij|^2 + s2) - 2 beta_i Re X_ii + 1
//! ul: e_i = beta_i^2 / q_i * (sum_j q_j |X_ji|^2 + s2) - 2 beta_i Re X_ii + 1
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, cmatrix_serde, CMatrix};
use crate::system_model::{ChannelSet, StreamLayout};

/// Unit-norm transmit/receive filters plus scaling and powers of both links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransceiverState {
    pub layout: StreamLayout,
    /// `G`, `M x N_d`.
    #[serde(with = "cmatrix_serde")]
    pub tx_beamformer: CMatrix,
    /// `F`, block diagonal `(sum N_k) x N_d`.
    #[serde(with = "cmatrix_serde")]
    pub rx_beamformer: CMatrix,
    pub beta: Vec<f64>,
    pub dl_powers: Vec<f64>,
    pub ul_powers: Vec<f64>,
}

const UNIT_NORM_TOL: f64 = 1e-10;

/// Relative power below which a stream is treated as switched off.
pub const IDLE_POWER: f64 = 1e-12;

impl TransceiverState {
    pub fn num_streams(&self) -> usize {
        self.beta.len()
    }

    /// `F^H H G`, entry `(i, j)` is `f_i^H H g_j`.
    pub fn cross_gains(&self, channel: &ChannelSet) -> CMatrix {
        self.rx_beamformer.adjoint() * channel.stacked() * &self.tx_beamformer
    }

    /// `G diag(sqrt(p))`, the downlink transmit filter.
    pub fn dl_tx_filter(&self) -> CMatrix {
        let mut g = self.tx_beamformer.clone();
        for (j, &p) in self.dl_powers.iter().enumerate() {
            g.column_mut(j).scale_mut(p.max(0.0).sqrt());
        }
        g
    }

    /// Sets `beta_i = 0` for every stream with zero power in `powers`.
    pub fn idle_streams_from(&mut self, powers: &[f64]) {
        for (b, &p) in self.beta.iter_mut().zip(powers) {
            if p == 0.0 {
                *b = 0.0;
            }
        }
    }

    pub fn validate(&self, channel: &ChannelSet, max_power: f64) -> Result<()> {
        let nd = self.layout.total_streams();
        let (m, nrx) = (channel.num_tx_antennas(), channel.stacked().nrows());
        if self.tx_beamformer.shape() != (m, nd)
            || self.rx_beamformer.shape() != (nrx, nd)
            || self.beta.len() != nd
            || self.dl_powers.len() != nd
            || self.ul_powers.len() != nd
        {
            return Err(Error::Dimension("transceiver state shapes disagree".into()));
        }
        for i in 0..nd {
            for (name, mat) in [("G", &self.tx_beamformer), ("F", &self.rx_beamformer)] {
                let norm = linalg::column_norm(mat, i);
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Dimension(format!(
                        "column {i} of {name} has norm {norm}"
                    )));
                }
            }
            let k = self.layout.user_of_stream(i);
            let rows = self.layout.rx_of(k);
            if (0..nrx).any(|r| !rows.contains(&r) && self.rx_beamformer[(r, i)].norm() != 0.0) {
                return Err(Error::Dimension(format!(
                    "receive column {i} leaves its user block"
                )));
            }
        }
        let tol = 1e-9 * max_power;
        for (name, v) in [("p", &self.dl_powers), ("q", &self.ul_powers)] {
            if v.iter().any(|&x| x < 0.0 || !x.is_finite()) || v.iter().sum::<f64>() > max_power + tol
            {
                return Err(Error::Dimension(format!(
                    "{name} must be nonnegative with sum at most {max_power}"
                )));
            }
        }
        if self.beta.iter().any(|&b| b < 0.0 || !b.is_finite()) {
            return Err(Error::Dimension("beta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One MSE value per stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMseVector {
    pub eps: Vec<f64>,
}

impl StreamMseVector {
    pub fn new(eps: Vec<f64>) -> Self {
        StreamMseVector { eps }
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn max_abs_diff(&self, other: &StreamMseVector) -> f64 {
        self.eps
            .iter()
            .zip(&other.eps)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Diagonal self-terms `D` and cross-coupling `Psi` shared by both power maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityCouplings {
    pub d: Vec<f64>,
    /// Row-major `N_d x N_d`, `psi[i][j] = |f_j^H H g_i|^2`, zero diagonal.
    pub psi: Vec<Vec<f64>>,
}

impl DualityCouplings {
    pub fn psi_matrix(&self) -> DMatrix<f64> {
        let n = self.d.len();
        DMatrix::from_fn(n, n, |i, j| self.psi[i][j])
    }
}

fn stream_mse(
    x: &CMatrix,
    beta: &[f64],
    powers: &[f64],
    sigma2: f64,
    transpose: bool,
) -> Result<StreamMseVector> {
    let n = beta.len();
    let mut eps = Vec::with_capacity(n);
    for i in 0..n {
        if beta[i] == 0.0 {
            eps.push(1.0);
            continue;
        }
        if powers[i] <= 0.0 {
            return Err(Error::DegeneratePower { stream: i });
        }
        let received: f64 = (0..n)
            .map(|j| {
                let gain = if transpose { x[(j, i)] } else { x[(i, j)] };
                powers[j] * gain.norm_sqr()
            })
            .sum();
        let b = beta[i];
        eps.push(b * b / powers[i] * (received + sigma2) - 2.0 * b * x[(i, i)].re + 1.0);
    }
    Ok(StreamMseVector { eps })
}

/// Downlink per-stream MSEs.
pub fn dl_stream_mse(
    state: &TransceiverState,
    channel: &ChannelSet,
    sigma2: f64,
) -> Result<StreamMseVector> {
    let x = state.cross_gains(channel);
    stream_mse(&x, &state.beta, &state.dl_powers, sigma2, false)
}

/// Uplink per-stream MSEs of the dual channel (roles of `f` and `g` swapped).
pub fn ul_stream_mse(
    state: &TransceiverState,
    channel: &ChannelSet,
    sigma2: f64,
) -> Result<StreamMseVector> {
    let x = state.cross_gains(channel);
    stream_mse(&x, &state.beta, &state.ul_powers, sigma2, true)
}

pub fn duality_couplings(state: &TransceiverState, channel: &ChannelSet) -> DualityCouplings {
    let x = state.cross_gains(channel);
    let n = state.num_streams();
    let d = (0..n)
        .map(|i| {
            let b = state.beta[i];
            b * b * x[(i, i)].norm_sqr() - 2.0 * b * x[(i, i)].re + 1.0
        })
        .collect();
    let psi = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { x[(j, i)].norm_sqr() })
                .collect()
        })
        .collect();
    DualityCouplings { d, psi }
}

fn power_from_mse(
    target: &StreamMseVector,
    couplings: &DualityCouplings,
    beta: &[f64],
    sigma2: f64,
    transpose: bool,
) -> Result<Vec<f64>> {
    let n = beta.len();
    if target.len() != n || couplings.d.len() != n {
        return Err(Error::Dimension("mse target and couplings disagree".into()));
    }
    // streams with beta = 0 carry no power and drop out of the system
    let active: Vec<usize> = (0..n).filter(|&i| beta[i] > 0.0).collect();
    let m = active.len();
    let a = DMatrix::from_fn(m, m, |r, s| {
        let (i, j) = (active[r], active[s]);
        let b2 = beta[i] * beta[i];
        let psi = if transpose {
            couplings.psi[j][i]
        } else {
            couplings.psi[i][j]
        };
        let diag = if i == j {
            target.eps[i] - couplings.d[i]
        } else {
            0.0
        };
        diag - b2 * psi
    });
    let rhs = DVector::from_iterator(m, active.iter().map(|&i| sigma2 * beta[i] * beta[i]));
    let sol = linalg::solve_real(a, &rhs)?;
    let floor = IDLE_POWER * sol.iter().map(|v| v.abs()).sum::<f64>();
    let mut powers = vec![0.0; n];
    for (r, &i) in active.iter().enumerate() {
        if sol[r] < -floor || sol[r].is_nan() {
            return Err(Error::InfeasibleMseTarget {
                stream: i,
                value: sol[r],
            });
        }
        // streams at rounding level of the total go idle
        if sol[r] > floor {
            powers[i] = sol[r];
        }
    }
    Ok(powers)
}

/// Downlink powers achieving `target` with the current filters.
pub fn dl_power_from_mse(
    target: &StreamMseVector,
    couplings: &DualityCouplings,
    beta: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>> {
    power_from_mse(target, couplings, beta, sigma2, true)
}

/// Uplink powers achieving `target` with the current filters.
pub fn ul_power_from_mse(
    target: &StreamMseVector,
    couplings: &DualityCouplings,
    beta: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>> {
    power_from_mse(target, couplings, beta, sigma2, false)
}

/// Raw MMSE direction `u` normalized into a unit column and a scaling
/// `beta = |u| * power` (so that `g beta / sqrt(power) = u sqrt(power)`).
fn split_receiver(u: CVectorView<'_>, power: f64, stream: usize) -> Result<(Vec<num_complex::Complex64>, f64)> {
    let norm = u.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateReceiver { stream });
    }
    Ok((u.iter().map(|z| z / norm).collect(), norm * power))
}

type CVectorView<'a> = nalgebra::DVectorView<'a, num_complex::Complex64>;

/// Uplink MMSE receiver at the base station for the transmit filters
/// `F diag(sqrt(q))`. Returns unit-column `G` and `beta`.
pub fn ul_mmse_receiver(
    channel: &ChannelSet,
    rx_beamformer: &CMatrix,
    ul_powers: &[f64],
    sigma2: f64,
) -> Result<(CMatrix, Vec<f64>)> {
    let h = channel.stacked();
    let m = channel.num_tx_antennas();
    let nd = ul_powers.len();
    // columns of H^H F carry each stream's uplink signature
    let sig = h.adjoint() * rx_beamformer;
    let mut weighted = sig.clone();
    for (j, &q) in ul_powers.iter().enumerate() {
        weighted.column_mut(j).scale_mut(q);
    }
    let cov = &weighted * sig.adjoint() + CMatrix::identity(m, m) * c(sigma2);
    let u = linalg::solve(&cov, &sig)?;
    let mut g = CMatrix::zeros(m, nd);
    let mut beta = vec![0.0; nd];
    for i in 0..nd {
        let (col, b) = split_receiver(u.column(i), ul_powers[i], i)?;
        g.column_mut(i).copy_from_slice(&col);
        beta[i] = b;
    }
    Ok((g, beta))
}

/// Downlink per-user MMSE receivers for the transmit filter `G diag(sqrt(p))`.
/// Returns block-diagonal unit-column `F` and `beta`.
pub fn dl_mmse_receiver(
    channel: &ChannelSet,
    layout: &StreamLayout,
    tx_beamformer: &CMatrix,
    dl_powers: &[f64],
    sigma2: f64,
) -> Result<(CMatrix, Vec<f64>)> {
    let nd = dl_powers.len();
    let mut f = CMatrix::zeros(layout.total_rx(), nd);
    let mut beta = vec![0.0; nd];
    let mut scaled = tx_beamformer.clone();
    for (j, &p) in dl_powers.iter().enumerate() {
        scaled.column_mut(j).scale_mut(p.max(0.0).sqrt());
    }
    for k in 0..layout.num_users() {
        let hk = channel.user(k);
        let n = hk.nrows();
        let hs = hk * &scaled;
        let cov = &hs * hs.adjoint() + CMatrix::identity(n, n) * c(sigma2);
        let streams = layout.streams_of(k);
        let sig = hk * tx_beamformer.columns(streams.start, streams.len());
        let u = linalg::solve(&cov, &sig)?;
        let rows = layout.rx_of(k);
        for (local, i) in streams.enumerate() {
            let (col, b) = split_receiver(u.column(local), dl_powers[i], i)?;
            for (r, z) in rows.clone().zip(col) {
                f[(r, i)] = z;
            }
            beta[i] = b;
        }
    }
    Ok((f, beta))
}

fn scaling(beta: &[f64], powers: &[f64]) -> Result<Vec<f64>> {
    beta.iter()
        .zip(powers)
        .enumerate()
        .map(|(i, (&b, &p))| {
            if b == 0.0 {
                Ok(0.0)
            } else if p <= 0.0 {
                Err(Error::DegeneratePower { stream: i })
            } else {
                Ok(b / p.sqrt())
            }
        })
        .collect()
}

/// Error covariance of all streams given the end-to-end map `Y` (row `i`
/// is stream `i`'s decision variable as a combination of all symbols) and
/// the receive-filter noise Gram matrix; returns the `k`th diagonal block.
fn user_block(y: &CMatrix, noise: &CMatrix, layout: &StreamLayout, k: usize) -> CMatrix {
    let nd = y.nrows();
    let r = layout.streams_of(k);
    let eye = CMatrix::identity(nd, nd);
    let rows = (eye - y).rows(r.start, r.len()).clone_owned();
    let e = &rows * rows.adjoint() + noise.view((r.start, r.start), (r.len(), r.len()));
    linalg::hermitian_part(&e)
}

/// `d_k x d_k` downlink MSE matrix of user `k`. Interference reaches user `k`
/// through its own channel `H_k`.
pub fn dl_user_mse_matrix(
    state: &TransceiverState,
    channel: &ChannelSet,
    sigma2: f64,
    k: usize,
) -> Result<CMatrix> {
    let x = state.cross_gains(channel);
    let s = scaling(&state.beta, &state.dl_powers)?;
    let nd = state.num_streams();
    let y = CMatrix::from_fn(nd, nd, |i, l| x[(i, l)] * c(s[i] * state.dl_powers[l].sqrt()));
    let gram = state.rx_beamformer.adjoint() * &state.rx_beamformer;
    let noise = CMatrix::from_fn(nd, nd, |i, l| gram[(i, l)] * c(sigma2 * s[i] * s[l]));
    Ok(user_block(&y, &noise, &state.layout, k))
}

/// `d_k x d_k` uplink MSE matrix of user `k` with receive chain
/// `Q_k^{-1/2} beta_k G_k^H`.
pub fn ul_user_mse_matrix(
    state: &TransceiverState,
    channel: &ChannelSet,
    sigma2: f64,
    k: usize,
) -> Result<CMatrix> {
    let x = state.cross_gains(channel);
    let s = scaling(&state.beta, &state.ul_powers)?;
    let nd = state.num_streams();
    let y = CMatrix::from_fn(nd, nd, |i, l| {
        x[(l, i)].conj() * c(s[i] * state.ul_powers[l].sqrt())
    });
    let gram = state.tx_beamformer.adjoint() * &state.tx_beamformer;
    let noise = CMatrix::from_fn(nd, nd, |i, l| gram[(i, l)] * c(sigma2 * s[i] * s[l]));
    Ok(user_block(&y, &noise, &state.layout, k))
}
