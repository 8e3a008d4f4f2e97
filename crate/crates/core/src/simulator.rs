//! Monte Carlo driver: SNR sweeps over seeded channel draws, aggregation and
//! result emission.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancer::{balance_mse_unweighted, balance_rates, BalancerParams};
use crate::error::{Error, Result};
use crate::system_model::{
    generate_iid_channel, generate_structured_channel, ChannelSet, SystemConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChannelModel {
    Structured { alpha: f64 },
    Iid,
}

impl ChannelModel {
    pub fn draw(&self, config: &SystemConfig, seed: u64) -> Result<ChannelSet> {
        match *self {
            ChannelModel::Structured { alpha } => generate_structured_channel(config, alpha, seed),
            ChannelModel::Iid => generate_iid_channel(config, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    WeightedRate,
    UnweightedMse,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::WeightedRate => "weighted_rate",
            Method::UnweightedMse => "unweighted_mse",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted_rate" | "weighted" => Ok(Method::WeightedRate),
            "unweighted_mse" | "unweighted" => Ok(Method::UnweightedMse),
            other => Err(Error::Spec(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Dimensions, budget and priorities; the noise variance is overridden
    /// per SNR point.
    pub config: SystemConfig,
    pub channel_model: ChannelModel,
    pub snr_grid_db: Vec<f64>,
    pub num_trials: usize,
    pub base_seed: u64,
    pub params: BalancerParams,
    pub methods: Vec<Method>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.params.validate()?;
        if self.num_trials == 0 {
            return Err(Error::Spec("num_trials must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Spec("snr grid must be nonempty and finite".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Spec("at least one method is required".into()));
        }
        if let ChannelModel::Structured { alpha } = self.channel_model {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::Spec(format!("alpha must lie in (0, 1], got {alpha}")));
            }
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed ^ trial as u64
    }

    /// `sigma2 = P_max / 10^(snr/10)`.
    pub fn noise_variance(&self, snr_db: f64) -> f64 {
        self.config.max_power / 10f64.powf(snr_db / 10.0)
    }
}

/// One method on one channel draw at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub snr_db: f64,
    /// Empty on failure.
    pub rates: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub balanced_level: f64,
    pub scale_trace: Vec<f64>,
    pub failure: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sum_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

/// Means over the successful trials of one `(method, snr)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub snr_db: f64,
    pub mean_min_rate: f64,
    pub mean_sum_rate: f64,
    pub mean_user_rates: Vec<f64>,
    pub failures: usize,
    pub mean_outer_iterations: f64,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub num_users: usize,
    pub aggregates: Vec<Aggregate>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentResult {
    pub fn aggregate(&self, method: Method, snr_db: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.snr_db == snr_db)
    }

    /// Recomputes the aggregates from the raw trial records.
    pub fn from_trials(num_users: usize, trials: Vec<TrialRecord>) -> Self {
        let mut cells: Vec<(Method, f64)> = Vec::new();
        for t in &trials {
            if !cells.iter().any(|&(m, s)| m == t.method && s == t.snr_db) {
                cells.push((t.method, t.snr_db));
            }
        }
        let aggregates = cells
            .into_iter()
            .map(|(method, snr_db)| {
                let cell: Vec<&TrialRecord> = trials
                    .iter()
                    .filter(|t| t.method == method && t.snr_db == snr_db)
                    .collect();
                let ok: Vec<&&TrialRecord> = cell.iter().filter(|t| !t.failed()).collect();
                let n = ok.len() as f64;
                let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
                    if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(|t| f(t)).sum::<f64>() / n
                    }
                };
                Aggregate {
                    method,
                    snr_db,
                    mean_min_rate: mean(&|t| t.min_rate()),
                    mean_sum_rate: mean(&|t| t.sum_rate()),
                    mean_user_rates: (0..num_users).map(|k| mean(&|t| t.rates[k])).collect(),
                    failures: cell.len() - ok.len(),
                    mean_outer_iterations: mean(&|t| t.outer_iterations as f64),
                    successes: ok.len(),
                }
            })
            .collect();
        ExperimentResult {
            num_users,
            aggregates,
            trials,
        }
    }
}

fn run_trial(
    spec: &ExperimentSpec,
    channel: &ChannelSet,
    trial: usize,
    method: Method,
    snr_db: f64,
) -> TrialRecord {
    let config = spec.config.with_noise_variance(spec.noise_variance(snr_db));
    let outcome = match method {
        Method::WeightedRate => balance_rates(&config, channel, &spec.params),
        Method::UnweightedMse => balance_mse_unweighted(&config, channel, &spec.params),
    };
    let seed = spec.trial_seed(trial);
    match outcome {
        Ok(report) => TrialRecord {
            trial,
            seed,
            method,
            snr_db,
            outer_iterations: report.outer_iterations(),
            converged: report.converged,
            balanced_level: report.balanced_level,
            scale_trace: report.scale_trace,
            rates: report.rates,
            failure: None,
        },
        Err(fail) => TrialRecord {
            trial,
            seed,
            method,
            snr_db,
            rates: Vec::new(),
            outer_iterations: fail.outer.len(),
            converged: false,
            balanced_level: f64::NAN,
            scale_trace: fail.outer.iter().map(|o| o.scale).collect(),
            failure: Some(fail.error.to_string()),
        },
    }
}

/// Runs every method at every SNR on `num_trials` seeded channel draws.
/// Trial `i` uses seed `base_seed ^ i`; all methods and SNR points of a
/// trial share its channel. Fails only when more than half the runs fail.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let per_trial: Vec<Vec<TrialRecord>> = (0..spec.num_trials)
        .into_par_iter()
        .map(|trial| {
            let channel = spec.channel_model.draw(&spec.config, spec.trial_seed(trial))?;
            let mut records = Vec::new();
            for &method in &spec.methods {
                for &snr in &spec.snr_grid_db {
                    records.push(run_trial(spec, &channel, trial, method, snr));
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    let mut trials: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    trials.sort_by(|a, b| {
        (a.method, a.trial)
            .cmp(&(b.method, b.trial))
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
    let failures = trials.iter().filter(|t| t.failed()).count();
    if 2 * failures > trials.len() {
        return Err(Error::ExperimentFailure {
            failures,
            trials: trials.len(),
        });
    }
    let mut result = ExperimentResult::from_trials(spec.config.num_users(), trials);
    result.aggregates.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
    Ok(result)
}

/// Mean min-rate of `numerator` over that of `denominator` at `snr_db`.
pub fn gain_ratio_between(
    result: &ExperimentResult,
    snr_db: f64,
    numerator: Method,
    denominator: Method,
) -> Result<f64> {
    let find = |m: Method| {
        result.aggregate(m, snr_db).ok_or_else(|| {
            Error::Spec(format!("method {} missing at {snr_db} dB", m.name()))
        })
    };
    Ok(find(numerator)?.mean_min_rate / find(denominator)?.mean_min_rate)
}

/// Weighted-rate over unweighted-MSE mean min-rate at `snr_db`.
pub fn gain_ratio(result: &ExperimentResult, snr_db: f64) -> Result<f64> {
    gain_ratio_between(result, snr_db, Method::WeightedRate, Method::UnweightedMse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Spec(format!("unknown format '{other}'"))),
        }
    }
}

/// Aggregate table, one row per `(method, snr)`.
pub fn results_csv(result: &ExperimentResult) -> String {
    let mut w = csv_writer();
    let mut header: Vec<String> = ["method", "snr_db", "mean_min_rate", "mean_sum_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..result.num_users).map(|k| format!("user_rate_{k}")));
    header.push("failures".into());
    header.push("mean_outer_iters".into());
    w.write_record(&header).expect("in-memory csv");
    for a in &result.aggregates {
        let mut row = vec![
            a.method.name().to_string(),
            a.snr_db.to_string(),
            a.mean_min_rate.to_string(),
            a.mean_sum_rate.to_string(),
        ];
        row.extend(a.mean_user_rates.iter().map(|r| r.to_string()));
        row.push(a.failures.to_string());
        row.push(a.mean_outer_iterations.to_string());
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

pub fn results_json(result: &ExperimentResult) -> String {
    serde_json::to_string_pretty(result).expect("result serializes")
}

/// Writes the result to `path` as CSV aggregates or full JSON.
pub fn emit_results(result: &ExperimentResult, format: OutputFormat, path: &Path) -> Result<()> {
    let body = match format {
        OutputFormat::Csv => results_csv(result),
        OutputFormat::Json => results_json(result),
    };
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_results(path: &Path) -> Result<ExperimentResult> {
    let io = |e: String| Error::Io {
        path: path.display().to_string(),
        message: e,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| io(e.to_string()))
}
