use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mimo_balance::balancer::{balance_mse_unweighted, balance_rates, BalancerParams, OuterRecord};
use mimo_balance::simulator::{
    emit_results, gain_ratio_between, load_results, results_csv, results_json, ChannelModel,
    ExperimentSpec, Method, OutputFormat,
};
use mimo_balance::{run_experiment, Error, SystemConfig};

#[derive(Parser)]
#[command(name = "mimo-balance", version, about = "Max-min fair MIMO downlink rate balancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo SNR sweep comparing balancing methods.
    Run(RunArgs),
    /// Min-rate gain of one method over another, read from a JSON result file.
    Gain(GainArgs),
    /// Per-iteration convergence trace of a single trial.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelKind {
    Structured,
    Iid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

/// System and algorithm flags shared by `run` and `trace`. Unset flags fall
/// back to the `--spec` file, then to built-in defaults.
#[derive(Args)]
struct SystemArgs {
    /// JSON experiment spec; explicit flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    tx_antennas: Option<usize>,
    /// One value for every user, or one per user.
    #[arg(long, value_delimiter = ',')]
    rx_antennas: Option<Vec<usize>>,
    /// One value for every user, or one per user.
    #[arg(long, value_delimiter = ',')]
    streams: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    channel: Option<ChannelKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    priorities: Option<Vec<f64>>,
    /// Run the outer loop without rotating streams into the weight eigenbasis.
    #[arg(long)]
    no_diagonalize: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Any of weighted_rate, unweighted_mse.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct GainArgs {
    /// JSON result written by `run --format json`.
    input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    snr: f64,
    #[arg(long, default_value = "weighted_rate")]
    numerator: String,
    #[arg(long, default_value = "unweighted_mse")]
    denominator: String,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    snr: f64,
    /// Trial index; the channel seed is `seed ^ trial`.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[arg(long, default_value = "weighted_rate")]
    method: String,
}

fn default_spec() -> ExperimentSpec {
    ExperimentSpec {
        config: SystemConfig::symmetric(6, 3, 2, 2, 1.0, 0.1).expect("default system is valid"),
        channel_model: ChannelModel::Structured { alpha: 0.3 },
        snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        num_trials: 200,
        base_seed: 0,
        params: BalancerParams::default(),
        methods: vec![Method::WeightedRate, Method::UnweightedMse],
    }
}

fn per_user(values: &[usize], users: usize, what: &str) -> Result<Vec<usize>, Error> {
    match values.len() {
        1 => Ok(vec![values[0]; users]),
        n if n == users => Ok(values.to_vec()),
        n => Err(Error::Spec(format!("{what}: expected 1 or {users} values, got {n}"))),
    }
}

fn build_spec(a: &SystemArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Spec(e.to_string()))?
        }
        None => default_spec(),
    };
    let cfg = &mut spec.config;
    if let Some(m) = a.tx_antennas {
        cfg.num_tx_antennas = m;
    }
    let users = a.users.unwrap_or(cfg.num_users());
    let resize = |v: &[usize], given: &Option<Vec<usize>>, what: &str| match given {
        Some(g) => per_user(g, users, what),
        None if v.len() == users => Ok(v.to_vec()),
        None => per_user(&v[..1], users, what),
    };
    cfg.rx_antennas = resize(&cfg.rx_antennas, &a.rx_antennas, "rx-antennas")?;
    cfg.streams = resize(&cfg.streams, &a.streams, "streams")?;
    match &a.priorities {
        Some(p) if p.len() == users => cfg.rate_priorities = p.clone(),
        Some(p) => {
            return Err(Error::Spec(format!(
                "priorities: expected {users} values, got {}",
                p.len()
            )))
        }
        None if cfg.rate_priorities.len() != users => cfg.rate_priorities = vec![1.0; users],
        None => {}
    }
    let alpha = match (a.alpha, spec.channel_model) {
        (Some(alpha), _) => alpha,
        (None, ChannelModel::Structured { alpha }) => alpha,
        (None, ChannelModel::Iid) => 0.3,
    };
    spec.channel_model = match (a.channel, spec.channel_model) {
        (Some(ChannelKind::Iid), _) => ChannelModel::Iid,
        (Some(ChannelKind::Structured), _) => ChannelModel::Structured { alpha },
        (None, ChannelModel::Structured { .. }) => ChannelModel::Structured { alpha },
        (None, ChannelModel::Iid) => ChannelModel::Iid,
    };
    if let Some(s) = a.seed {
        spec.base_seed = s;
    }
    let p = &mut spec.params;
    if let Some(n) = a.n_max {
        p.n_max = n;
    }
    if let Some(m) = a.m_max {
        p.m_max = m;
    }
    if let Some(t) = a.inner_tol {
        p.inner_tol = t;
    }
    if let Some(t) = a.outer_tol {
        p.outer_tol = t;
    }
    if a.no_diagonalize {
        p.diagonalize_weights = false;
    }
    Ok(spec)
}

fn run(a: RunArgs) -> Result<(), Error> {
    let mut spec = build_spec(&a.system)?;
    if let Some(snr) = a.snr {
        spec.snr_grid_db = snr;
    }
    if let Some(t) = a.trials {
        spec.num_trials = t;
    }
    if let Some(methods) = &a.methods {
        spec.methods = methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<Method>, Error>>()?;
    }
    let result = run_experiment(&spec)?;
    match &a.out {
        Some(path) => emit_results(&result, a.format.into(), path),
        None => {
            match a.format {
                Format::Csv => print!("{}", results_csv(&result)),
                Format::Json => println!("{}", results_json(&result)),
            }
            Ok(())
        }
    }
}

fn gain(a: GainArgs) -> Result<(), Error> {
    let result = load_results(&a.input)?;
    let g = gain_ratio_between(&result, a.snr, a.numerator.parse()?, a.denominator.parse()?)?;
    println!("{g}");
    Ok(())
}

#[derive(Serialize)]
struct Trace {
    seed: u64,
    snr_db: f64,
    method: Method,
    converged: bool,
    rates: Vec<f64>,
    balanced_level: f64,
    outer: Vec<OuterRecord>,
    error: Option<String>,
}

fn trace(a: TraceArgs) -> Result<(), Error> {
    let spec = build_spec(&a.system)?;
    spec.validate()?;
    let method: Method = a.method.parse()?;
    let seed = spec.trial_seed(a.trial);
    let channel = spec.channel_model.draw(&spec.config, seed)?;
    let config = spec.config.with_noise_variance(spec.noise_variance(a.snr));
    let outcome = match method {
        Method::WeightedRate => balance_rates(&config, &channel, &spec.params),
        Method::UnweightedMse => balance_mse_unweighted(&config, &channel, &spec.params),
    };
    let (trace, failed) = match outcome {
        Ok(r) => (
            Trace {
                seed,
                snr_db: a.snr,
                method,
                converged: r.converged,
                rates: r.rates,
                balanced_level: r.balanced_level,
                outer: r.outer,
                error: None,
            },
            None,
        ),
        Err(f) => {
            let msg = f.error.to_string();
            (
                Trace {
                    seed,
                    snr_db: a.snr,
                    method,
                    converged: false,
                    rates: Vec::new(),
                    balanced_level: f64::NAN,
                    outer: f.outer,
                    error: Some(msg),
                },
                Some(f.error),
            )
        }
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&trace).map_err(|e| Error::Numerical(e.to_string()))?
    );
    match failed {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Gain(a) => gain(a),
        Command::Trace(a) => trace(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
