//! Max-min fair user-rate balancing for the multiuser MIMO downlink.
//!
//! The downlink rate-balancing problem is turned into a sequence of
//! matrix-weighted MSE balancing problems, each solved in the dual uplink
//! through per-stream MSE duality and a Perron eigenvector power split.

pub mod balancer;
pub mod duality;
pub mod error;
pub mod linalg;
pub mod simulator;
pub mod system_model;
pub mod wmse;

pub use balancer::{
    balance_mse_unweighted, balance_rates, BalanceFailure, BalancerParams, BalancerReport,
};
pub use duality::{DualityCouplings, StreamMseVector, TransceiverState};
pub use error::{Error, Result};
pub use system_model::{ChannelSet, SystemConfig};
pub use wmse::{CouplingSystem, PerronSolution, WeightState};
pub use simulator::{
    gain_ratio, run_experiment, ChannelModel, ExperimentResult, ExperimentSpec, Method,
};
