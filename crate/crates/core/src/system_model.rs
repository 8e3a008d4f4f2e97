//! System configuration, random channel draws and exact user-rate evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hpd_logdet, CMatrix, MatrixWire};
use num_complex::Complex64;

/// Antenna and stream dimensions, power budget, noise and rate priorities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_tx_antennas: usize,
    pub rx_antennas: Vec<usize>,
    pub streams: Vec<usize>,
    pub max_power: f64,
    pub noise_variance: f64,
    pub rate_priorities: Vec<f64>,
}

impl SystemConfig {
    /// `K` users with identical antenna and stream counts and equal priorities.
    pub fn symmetric(
        num_tx_antennas: usize,
        num_users: usize,
        rx_antennas: usize,
        streams: usize,
        max_power: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            num_tx_antennas,
            rx_antennas: vec![rx_antennas; num_users],
            streams: vec![streams; num_users],
            max_power,
            noise_variance,
            rate_priorities: vec![1.0; num_users],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_users(&self) -> usize {
        self.rx_antennas.len()
    }

    pub fn total_streams(&self) -> usize {
        self.streams.iter().sum()
    }

    pub fn total_rx_antennas(&self) -> usize {
        self.rx_antennas.iter().sum()
    }

    /// Same system at a different noise level.
    pub fn with_noise_variance(&self, noise_variance: f64) -> Self {
        SystemConfig {
            noise_variance,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.rx_antennas.len();
        if self.num_tx_antennas == 0 || k == 0 {
            return Err(Error::InvalidConfig(
                "need at least one transmit antenna and one user".into(),
            ));
        }
        if self.streams.len() != k || self.rate_priorities.len() != k {
            return Err(Error::InvalidConfig(format!(
                "per-user vectors disagree: {} rx counts, {} stream counts, {} priorities",
                k,
                self.streams.len(),
                self.rate_priorities.len()
            )));
        }
        for (user, (&n, &d)) in self.rx_antennas.iter().zip(&self.streams).enumerate() {
            if n == 0 || d == 0 {
                return Err(Error::InvalidConfig(format!(
                    "user {user} needs positive antenna and stream counts"
                )));
            }
            if d > n.min(self.num_tx_antennas) {
                return Err(Error::InvalidConfig(format!(
                    "user {user}: {d} streams exceed min(N_k = {n}, M = {})",
                    self.num_tx_antennas
                )));
            }
        }
        if !(self.max_power > 0.0 && self.max_power.is_finite()) {
            return Err(Error::InvalidConfig("max power must be positive".into()));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidConfig("noise variance must be positive".into()));
        }
        if self.rate_priorities.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("rate priorities must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> StreamLayout {
        StreamLayout::new(&self.rx_antennas, &self.streams)
    }
}

/// Offsets of each user's antennas and streams in the stacked matrices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamLayout {
    pub rx_offsets: Vec<usize>,
    pub rx_counts: Vec<usize>,
    pub stream_offsets: Vec<usize>,
    pub stream_counts: Vec<usize>,
}

impl StreamLayout {
    pub fn new(rx_antennas: &[usize], streams: &[usize]) -> Self {
        let offsets = |counts: &[usize]| {
            counts
                .iter()
                .scan(0, |acc, &n| {
                    let start = *acc;
                    *acc += n;
                    Some(start)
                })
                .collect::<Vec<_>>()
        };
        StreamLayout {
            rx_offsets: offsets(rx_antennas),
            rx_counts: rx_antennas.to_vec(),
            stream_offsets: offsets(streams),
            stream_counts: streams.to_vec(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.stream_counts.len()
    }

    pub fn total_streams(&self) -> usize {
        self.stream_counts.iter().sum()
    }

    pub fn total_rx(&self) -> usize {
        self.rx_counts.iter().sum()
    }

    pub fn streams_of(&self, user: usize) -> std::ops::Range<usize> {
        self.stream_offsets[user]..self.stream_offsets[user] + self.stream_counts[user]
    }

    pub fn rx_of(&self, user: usize) -> std::ops::Range<usize> {
        self.rx_offsets[user]..self.rx_offsets[user] + self.rx_counts[user]
    }

    pub fn user_of_stream(&self, stream: usize) -> usize {
        (0..self.num_users())
            .find(|&k| self.streams_of(k).contains(&stream))
            .expect("stream index out of range")
    }
}

/// Per-user downlink channels `H_k` (`N_k x M`) and their row stacking.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    users: Vec<CMatrix>,
    stacked: CMatrix,
}

impl ChannelSet {
    pub fn new(users: Vec<CMatrix>) -> Result<Self> {
        let m = users
            .first()
            .map(|h| h.ncols())
            .ok_or_else(|| Error::Dimension("channel set needs at least one user".into()))?;
        if users.iter().any(|h| h.ncols() != m || h.nrows() == 0) {
            return Err(Error::Dimension(
                "all user channels must be nonempty with the same column count".into(),
            ));
        }
        if users.iter().any(|h| h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Dimension("channel entries must be finite".into()));
        }
        let total: usize = users.iter().map(|h| h.nrows()).sum();
        let mut stacked = CMatrix::zeros(total, m);
        let mut row = 0;
        for h in &users {
            stacked.view_mut((row, 0), (h.nrows(), m)).copy_from(h);
            row += h.nrows();
        }
        Ok(ChannelSet { users, stacked })
    }

    pub fn user(&self, k: usize) -> &CMatrix {
        &self.users[k]
    }

    pub fn users(&self) -> &[CMatrix] {
        &self.users
    }

    pub fn stacked(&self) -> &CMatrix {
        &self.stacked
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_tx_antennas(&self) -> usize {
        self.stacked.ncols()
    }

    /// Checks the channel shapes against a configuration.
    pub fn check_against(&self, config: &SystemConfig) -> Result<()> {
        if self.num_users() != config.num_users()
            || self.num_tx_antennas() != config.num_tx_antennas
            || self
                .users
                .iter()
                .zip(&config.rx_antennas)
                .any(|(h, &n)| h.nrows() != n)
        {
            return Err(Error::Dimension(
                "channel shapes do not match the configuration".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ChannelWire::from(self)).expect("channel wire serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: ChannelWire = serde_json::from_str(text)
            .map_err(|e| Error::Dimension(format!("channel json: {e}")))?;
        ChannelSet::try_from(wire)
    }
}

/// JSON form of a channel set: one entry per user with shape and interleaved re/im.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWire {
    pub users: Vec<UserChannelWire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannelWire {
    pub user: usize,
    #[serde(flatten)]
    pub matrix: MatrixWire,
}

impl From<&ChannelSet> for ChannelWire {
    fn from(ch: &ChannelSet) -> Self {
        ChannelWire {
            users: ch
                .users
                .iter()
                .enumerate()
                .map(|(user, h)| UserChannelWire {
                    user,
                    matrix: MatrixWire::from(h),
                })
                .collect(),
        }
    }
}

impl TryFrom<ChannelWire> for ChannelSet {
    type Error = Error;

    fn try_from(mut wire: ChannelWire) -> Result<Self> {
        wire.users.sort_by_key(|u| u.user);
        if wire.users.iter().enumerate().any(|(i, u)| u.user != i) {
            return Err(Error::Dimension("user indices must be 0..K".into()));
        }
        let users = wire
            .users
            .into_iter()
            .map(|u| CMatrix::try_from(u.matrix))
            .collect::<Result<Vec<_>>>()?;
        ChannelSet::new(users)
    }
}

impl Serialize for ChannelSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChannelWire::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChannelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = ChannelWire::deserialize(d)?;
        ChannelSet::try_from(wire).map_err(serde::de::Error::custom)
    }
}

/// Seeded generator used for every channel draw.
pub fn channel_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// One `CN(0, 1)` sample: `(x + iy) / sqrt(2)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Diagonal of the rank-profile scaling `mu * diag(1, alpha, ..., alpha^(n-1))`
/// with `mu` chosen so the diagonal has unit trace before the square root,
/// i.e. `mu = (sum_i alpha^i)^(-1/2)`.
pub fn rank_profile(alpha: f64, n: usize) -> Vec<f64> {
    let powers: Vec<f64> = (0..n).map(|i| alpha.powi(i as i32)).collect();
    let mu = powers.iter().sum::<f64>().powf(-0.5);
    powers.into_iter().map(|a| mu * a).collect()
}

/// Draws `H_k^H = B_k U_k A_k` with i.i.d. `CN(0,1)` `B_k` (`M x N_k`) and
/// `A_k` (`N_k x N_k`), and the scaled rank profile `U_k`.
pub fn generate_structured_channel(
    config: &SystemConfig,
    alpha: f64,
    seed: u64,
) -> Result<ChannelSet> {
    config.validate()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let mut rng = channel_rng(seed);
    let m = config.num_tx_antennas;
    let users = config
        .rx_antennas
        .iter()
        .map(|&n| {
            let b = gaussian_matrix(&mut rng, m, n);
            let a = gaussian_matrix(&mut rng, n, n);
            let profile = rank_profile(alpha, n);
            let mut bu = b;
            for (j, &s) in profile.iter().enumerate() {
                bu.column_mut(j).scale_mut(s);
            }
            (bu * a).adjoint()
        })
        .collect();
    ChannelSet::new(users)
}

/// Draws `H_k^H = B_k` with i.i.d. `CN(0,1)` entries.
pub fn generate_iid_channel(config: &SystemConfig, seed: u64) -> Result<ChannelSet> {
    config.validate()?;
    let mut rng = channel_rng(seed);
    let m = config.num_tx_antennas;
    let users = config
        .rx_antennas
        .iter()
        .map(|&n| gaussian_matrix(&mut rng, m, n).adjoint())
        .collect();
    ChannelSet::new(users)
}

/// Treat-interference-as-noise user rates in nats for the downlink transmit
/// filter `tx_filter` (`M x N_d`, columns grouped by user as in `streams`).
pub fn user_rates(
    channel: &ChannelSet,
    tx_filter: &CMatrix,
    streams: &[usize],
    sigma2: f64,
) -> Result<Vec<f64>> {
    if streams.len() != channel.num_users()
        || tx_filter.ncols() != streams.iter().sum::<usize>()
        || tx_filter.nrows() != channel.num_tx_antennas()
    {
        return Err(Error::Dimension(
            "tx filter partition does not match the channel".into(),
        ));
    }
    let layout = StreamLayout::new(
        &channel.users().iter().map(|h| h.nrows()).collect::<Vec<_>>(),
        streams,
    );
    (0..channel.num_users())
        .map(|k| {
            let hk = channel.user(k);
            let n = hk.nrows();
            let mut interference = CMatrix::identity(n, n) * c(sigma2);
            let mut signal = CMatrix::zeros(n, n);
            for j in 0..channel.num_users() {
                let r = layout.streams_of(j);
                let hg = hk * tx_filter.columns(r.start, r.len());
                let cov = &hg * hg.adjoint();
                if j == k {
                    signal = cov;
                } else {
                    interference += cov;
                }
            }
            // ln det(I + S N^-1) = ln det(S + N) - ln det(N)
            let total = &signal + &interference;
            Ok(hpd_logdet(&total)? - hpd_logdet(&interference)?)
        })
        .collect()
}
