//! User-level weighted-MSE coupling system and its Perron solution.
//!
//! With user powers split as `Q_k = q_k * Qbar_k` (`tr Qbar_k = 1`) the uplink
//! weighted MSE of user `k` is affine in the other users' powers:
//!
//! ```text
//! e_w,k = a_k + (1/q_k) sum_{j != k} q_j b_kj + (1/q_k) c_k s2
//! ```
//!
//! Balancing `e_w,k / xi_k` under `sum q_k = P` is the eigenproblem
//! `Lambda q = Delta q` with `Lambda = xi^-1 A + (s2/P) xi^-1 C 1 1^T`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::duality::TransceiverState;
use crate::error::{Error, Result};
use crate::linalg::{self, cmatrix_vec_serde, CMatrix};
use crate::system_model::{ChannelSet, StreamLayout};

/// Weight matrices, WMSE targets, current rate targets and the last scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    #[serde(with = "cmatrix_vec_serde")]
    pub weights: Vec<CMatrix>,
    pub xi: Vec<f64>,
    pub rate_targets: Vec<f64>,
    pub scale: f64,
}

impl WeightState {
    /// `W_k = I`, `xi_k = d_k`.
    pub fn identity(streams: &[usize], rate_targets: Vec<f64>) -> Self {
        WeightState {
            weights: streams
                .iter()
                .map(|&d| CMatrix::identity(d, d))
                .collect(),
            xi: streams.iter().map(|&d| d as f64).collect(),
            rate_targets,
            scale: 1.0,
        }
    }
}

/// Coupling coefficients `A` (diagonal `a_k`, off-diagonal `b_kj`) and `c_k`,
/// computed for fixed per-user power shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSystem {
    pub a: DMatrix<f64>,
    pub c: Vec<f64>,
    /// Diagonal of each `Qbar_k`, unit trace.
    pub shapes: Vec<Vec<f64>>,
}

impl CouplingSystem {
    /// Reconstructs every `e_w,k` for user powers `qtilde`.
    pub fn user_wmse(&self, qtilde: &[f64], sigma2: f64) -> Vec<f64> {
        let k = self.c.len();
        (0..k)
            .map(|u| {
                let cross: f64 = (0..k)
                    .filter(|&j| j != u)
                    .map(|j| qtilde[j] * self.a[(u, j)])
                    .sum();
                self.a[(u, u)] + (cross + self.c[u] * sigma2) / qtilde[u]
            })
            .collect()
    }
}

/// Perron eigenpair of the coupling matrix with the eigenvector scaled to the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronSolution {
    pub delta: f64,
    pub user_powers: Vec<f64>,
    pub iterations: usize,
}

/// `tr(W_k E_k)`.
pub fn user_wmse(weight: &CMatrix, mse: &CMatrix) -> f64 {
    linalg::trace_product(weight, mse).re
}

/// Splits per-stream powers into unit-trace user shapes and user totals.
pub fn power_shapes(powers: &[f64], layout: &StreamLayout) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut shapes = Vec::with_capacity(layout.num_users());
    let mut totals = Vec::with_capacity(layout.num_users());
    for k in 0..layout.num_users() {
        let block = &powers[layout.streams_of(k)];
        let total: f64 = block.iter().sum();
        if !(total > 0.0) || block.iter().any(|&q| !(q >= 0.0)) {
            return Err(Error::DegenerateShape { user: k });
        }
        shapes.push(block.iter().map(|q| q / total).collect());
        totals.push(total);
    }
    Ok((shapes, totals))
}

/// Coefficients `a_k`, `b_kj`, `c_k` for the state's filters, `beta` and the
/// given unit-trace shapes.
///
/// Every power-shape factor comes from `Qbar`; the user power enters only
/// through the explicit `q_k^-1`, `q_j` factors of the affine model. With
/// `s_i = beta_i / sqrt(qbar_i)` and `X = F^H H G`:
///
/// ```text
/// a_k  = tr W + tr(W T_kk) - 2 Re tr(W M_k)
/// b_kj = tr(W T_kj),  c_k = tr(W N_k)
/// T_kj[i,i'] = s_i s_i' sum_{l in j} qbar_l conj(X_li) X_li'
/// M_k[i,l]   = s_i conj(X_li) sqrt(qbar_l)                (l in k)
/// N_k[i,i']  = s_i s_i' (G^H G)_ii'
/// ```
pub fn wmse_coefficients(
    state: &TransceiverState,
    channel: &ChannelSet,
    weights: &[CMatrix],
    shapes: &[Vec<f64>],
) -> Result<CouplingSystem> {
    let layout = &state.layout;
    let nusers = layout.num_users();
    if weights.len() != nusers || shapes.len() != nusers {
        return Err(Error::Dimension("weights/shapes need one entry per user".into()));
    }
    let nd = state.num_streams();
    let mut qbar = vec![0.0; nd];
    for k in 0..nusers {
        let r = layout.streams_of(k);
        if shapes[k].len() != r.len() || weights[k].shape() != (r.len(), r.len()) {
            return Err(Error::Dimension(format!("user {k}: shape/weight size")));
        }
        for (i, &s) in r.zip(&shapes[k]) {
            // an idle stream (beta = 0) may carry a zero share
            if !(s > 0.0) && !(s == 0.0 && state.beta[i] == 0.0) {
                return Err(Error::DegenerateShape { user: k });
            }
            qbar[i] = s;
        }
    }
    let x = state.cross_gains(channel);
    let gram = state.tx_beamformer.adjoint() * &state.tx_beamformer;
    let s: Vec<f64> = (0..nd)
        .map(|i| {
            if state.beta[i] == 0.0 {
                0.0
            } else {
                state.beta[i] / qbar[i].sqrt()
            }
        })
        .collect();

    let mut a = DMatrix::zeros(nusers, nusers);
    let mut c = vec![0.0; nusers];
    for k in 0..nusers {
        let w = &weights[k];
        let rk = layout.streams_of(k);
        let dk = rk.len();
        for j in 0..nusers {
            let rj = layout.streams_of(j);
            let t = CMatrix::from_fn(dk, dk, |a_, b_| {
                let (i, ip) = (rk.start + a_, rk.start + b_);
                let acc: num_complex::Complex64 = rj
                    .clone()
                    .map(|l| x[(l, i)].conj() * x[(l, ip)] * qbar[l])
                    .sum();
                acc * s[i] * s[ip]
            });
            a[(k, j)] = user_wmse(w, &t);
        }
        let m = CMatrix::from_fn(dk, dk, |a_, b_| {
            let (i, l) = (rk.start + a_, rk.start + b_);
            x[(l, i)].conj() * (s[i] * qbar[l].sqrt())
        });
        let trace_w: f64 = (0..dk).map(|i| w[(i, i)].re).sum();
        a[(k, k)] += trace_w - 2.0 * linalg::trace_product(w, &m).re;
        let n = CMatrix::from_fn(dk, dk, |a_, b_| {
            let (i, ip) = (rk.start + a_, rk.start + b_);
            gram[(i, ip)] * (s[i] * s[ip])
        });
        c[k] = user_wmse(w, &n);
    }
    Ok(CouplingSystem {
        a,
        c,
        shapes: shapes.to_vec(),
    })
}

/// `Lambda = xi^-1 A + (s2 / P) xi^-1 C 1 1^T`.
pub fn build_coupling_matrix(
    a: &DMatrix<f64>,
    c: &[f64],
    xi: &[f64],
    sigma2: f64,
    max_power: f64,
) -> Result<DMatrix<f64>> {
    let k = xi.len();
    if a.shape() != (k, k) || c.len() != k {
        return Err(Error::Dimension("coupling inputs disagree in size".into()));
    }
    if let Some((user, &value)) = xi.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::InvalidTarget { user, value });
    }
    Ok(DMatrix::from_fn(k, k, |i, j| {
        (a[(i, j)] + sigma2 / max_power * c[i]) / xi[i]
    }))
}

pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITER: usize = 100_000;
/// Relative size below which a Perron vector entry counts as vanished.
const VANISHING: f64 = 1e-15;

/// Spectral radius and positive principal eigenvector of a nonnegative
/// matrix by normalized power iteration from the uniform vector.
///
/// Stops once the Collatz-Wielandt bounds `min_k (Lx)_k/x_k <= rho <=
/// max_k (Lx)_k/x_k` pinch to `PERRON_TOL` relative. The eigenvector is
/// scaled to sum to `max_power`.
pub fn perron_solve(lambda: &DMatrix<f64>, max_power: f64) -> Result<PerronSolution> {
    let k = lambda.nrows();
    if k == 0 || lambda.ncols() != k {
        return Err(Error::Dimension("coupling matrix must be square".into()));
    }
    let scale = lambda.amax();
    if lambda.iter().any(|v| !v.is_finite()) || lambda.iter().any(|&v| v < -1e-12 * scale) {
        return Err(Error::Numerical(
            "coupling matrix must be finite and nonnegative".into(),
        ));
    }
    if !(scale > 0.0) {
        return Err(Error::DegenerateCoupling);
    }
    let l = lambda.map(|v| v.max(0.0));
    let mut x = nalgebra::DVector::from_element(k, 1.0 / k as f64);
    for iter in 1..=PERRON_MAX_ITER {
        let y = &l * &x;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..k {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let total = y.sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateCoupling);
        }
        let delta = total / x.sum();
        if hi - lo <= PERRON_TOL * hi {
            let norm = x.sum();
            return Ok(PerronSolution {
                delta,
                user_powers: x.iter().map(|v| max_power * v / norm).collect(),
                iterations: iter,
            });
        }
        x = y / total;
        if x.min() <= VANISHING * x.max() {
            return Err(Error::DegenerateCoupling);
        }
    }
    Err(Error::Numerical(format!(
        "perron iteration did not converge in {PERRON_MAX_ITER} steps"
    )))
}
