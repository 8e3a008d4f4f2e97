use thiserror::Error;

/// Errors raised across the balancing pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("stream {stream} has zero power but a nonzero scaling")]
    DegeneratePower { stream: usize },
    #[error("mse target infeasible: stream {stream} would need power {value}")]
    InfeasibleMseTarget { stream: usize, value: f64 },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("receiver for stream {stream} is degenerate (zero raw vector)")]
    DegenerateReceiver { stream: usize },
    #[error("power shape of user {user} has a zero stream")]
    DegenerateShape { user: usize },
    #[error("wmse target of user {user} is not positive ({value})")]
    InvalidTarget { user: usize, value: f64 },
    #[error("coupling matrix is reducible: perron vector has a vanishing entry")]
    DegenerateCoupling,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("inner iteration failed at step {step}: {source}")]
    IterationFailure {
        step: InnerStep,
        #[source]
        source: Box<Error>,
    },
    #[error("experiment failed: {failures} of {trials} trials failed")]
    ExperimentFailure { failures: usize, trials: usize },
    #[error("experiment spec: {0}")]
    Spec(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Sub-step of one inner iteration, carried by [`Error::IterationFailure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InnerStep {
    UplinkReceiver,
    UplinkMse,
    DownlinkPower,
    DownlinkReceiver,
    DownlinkMse,
    UplinkPower,
    PowerShape,
    PerronSolve,
}

impl std::fmt::Display for InnerStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            InnerStep::UplinkReceiver => "ul-receiver",
            InnerStep::UplinkMse => "ul-mse",
            InnerStep::DownlinkPower => "dl-power",
            InnerStep::DownlinkReceiver => "dl-receiver",
            InnerStep::DownlinkMse => "dl-mse",
            InnerStep::UplinkPower => "ul-power",
            InnerStep::PowerShape => "power-shape",
            InnerStep::PerronSolve => "perron-solve",
        };
        f.write_str(name)
    }
}

impl Error {
    pub(crate) fn at(step: InnerStep) -> impl FnOnce(Error) -> Error {
        move |source| Error::IterationFailure {
            step,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
