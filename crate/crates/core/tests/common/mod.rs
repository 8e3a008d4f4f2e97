#![allow(dead_code)]

use mimo_balance::duality::TransceiverState;
use mimo_balance::linalg::CMatrix;
use mimo_balance::system_model::{generate_iid_channel, ChannelSet, SystemConfig};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn cn(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im)
}

pub fn unit_column(rng: &mut impl Rng, len: usize) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..len).map(|_| cn(rng)).collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}

/// Positive entries summing to `total`, bounded away from zero.
pub fn positive_split(rng: &mut impl Rng, len: usize, total: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v * total / s).collect()
}

/// Random valid state: unit-norm `G`, block-diagonal unit-norm `F`,
/// positive `beta`, and positive `p`, `q` each summing to `max_power`.
pub fn random_state(config: &SystemConfig, rng: &mut impl Rng) -> TransceiverState {
    let layout = config.layout();
    let nd = layout.total_streams();
    let m = config.num_tx_antennas;
    let mut g = CMatrix::zeros(m, nd);
    for i in 0..nd {
        g.column_mut(i).copy_from_slice(&unit_column(rng, m));
    }
    let mut f = CMatrix::zeros(layout.total_rx(), nd);
    for k in 0..layout.num_users() {
        let rows = layout.rx_of(k);
        for i in layout.streams_of(k) {
            let col = unit_column(rng, rows.len());
            for (r, z) in rows.clone().zip(col) {
                f[(r, i)] = z;
            }
        }
    }
    TransceiverState {
        layout,
        tx_beamformer: g,
        rx_beamformer: f,
        beta: (0..nd).map(|_| rng.random_range(0.2..1.5)).collect(),
        dl_powers: positive_split(rng, nd, config.max_power),
        ul_powers: positive_split(rng, nd, config.max_power),
    }
}

pub fn duality_config(sigma2: f64) -> SystemConfig {
    SystemConfig::symmetric(6, 3, 2, 2, 1.0, sigma2).unwrap()
}

pub fn random_instance(seed: u64, sigma2: f64) -> (SystemConfig, ChannelSet, TransceiverState) {
    let config = duality_config(sigma2);
    let channel = generate_iid_channel(&config, seed).unwrap();
    let mut r = rng(seed.wrapping_add(0x5eed));
    let state = random_state(&config, &mut r);
    (config, channel, state)
}

/// Full receive vector of stream `i` (zero outside its user's rows).
pub fn column(m: &CMatrix, i: usize) -> Vec<Complex64> {
    m.column(i).iter().cloned().collect()
}

/// `a^H B c` by explicit loops.
pub fn bilinear(a: &[Complex64], b: &CMatrix, c: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..b.nrows() {
        for s in 0..b.ncols() {
            acc += a[r].conj() * b[(r, s)] * c[s];
        }
    }
    acc
}

/// Link MSE of stream `i` written out term by term: receive vectors `rx`,
/// transmit vectors `tx`, channel `h` from transmitter to receiver.
pub fn straight_line_mse(
    h: &CMatrix,
    rx: &[Vec<Complex64>],
    tx: &[Vec<Complex64>],
    beta: &[f64],
    powers: &[f64],
    sigma2: f64,
    i: usize,
) -> f64 {
    if beta[i] == 0.0 {
        return 1.0;
    }
    let mut received = 0.0;
    for j in 0..tx.len() {
        received += powers[j] * bilinear(&rx[i], h, &tx[j]).norm_sqr();
    }
    let own = bilinear(&rx[i], h, &tx[i]).re;
    let rx_norm: f64 = rx[i].iter().map(|z| z.norm_sqr()).sum();
    beta[i] * beta[i] / powers[i] * received - 2.0 * beta[i] * own
        + sigma2 * beta[i] * beta[i] * rx_norm / powers[i]
        + 1.0
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Spectral radius and its eigenvector from a general dense eigensolver.
pub fn dense_perron(lam: &DMatrix<f64>, total: f64) -> (f64, Vec<f64>) {
    let rho = lam
        .complex_eigenvalues()
        .iter()
        .map(|z: &Complex64| z.norm())
        .fold(0.0, f64::max);
    let k = lam.nrows();
    let shifted = lam - DMatrix::identity(k, k) * rho;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.unwrap();
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v: Vec<f64> = vt.row(idx).iter().map(|x| x.abs()).collect();
    let s: f64 = v.iter().sum();
    (rho, v.into_iter().map(|x| x * total / s).collect())
}
