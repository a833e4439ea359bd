use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{table} row {row} sums to {sum}, expected 1")]
    NonStochasticRow { table: String, row: usize, sum: f64 },
    #[error("negative probability in {table} row {row}")]
    NegativeProbability { table: String, row: usize },
    #[error("negative potential at time {time} (1-based), state {state}")]
    NegativePotential { time: usize, state: usize },
    #[error("normalizing constant is zero: no path carries positive weight")]
    ZeroNormalizingConstant,
    #[error("path space of size {size} exceeds the enumeration limit {limit}")]
    PathSpaceTooLarge { size: f64, limit: f64 },
    #[error("outcome space of size {size} exceeds the enumeration limit {limit}")]
    OutcomeSpaceTooLarge { size: f64, limit: f64 },
    #[error("horizon {horizon} too large for subset enumeration (limit {limit})")]
    HorizonTooLarge { horizon: usize, limit: usize },
    #[error("state space of size {size} exceeds the limit {limit}")]
    StateSpaceTooLarge { size: usize, limit: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("all weights are zero{}", .time.map(|t| format!(" at time {t} (1-based)")).unwrap_or_default())]
    AllWeightsZero { time: Option<usize> },
    #[error("degenerate estimate: all potentials vanish at time {time} (1-based)")]
    Degenerate { time: usize },
    #[error("pinned path has zero potential at time {time} (1-based)")]
    PinnedPathZeroPotential { time: usize },
    #[error("lineage clash at time {time} (1-based): second pinned particle collides with the first")]
    LineageClash { time: usize },
    #[error("a potential vanishes, so the potential ratio constant is infinite")]
    ZeroPotential,
    #[error("transition rows do not overlap, so the mixing ratio constant is infinite")]
    ZeroTransitionOverlap,
    #[error("epsilon {0} outside (0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("internal consistency violated: {0}")]
    InconsistentBound(String),
    #[error("kernel not reversible: max detailed-balance violation {violation}")]
    NotReversible { violation: f64 },
    #[error("singular linear system (chain not ergodic on the mean-zero subspace)")]
    SingularSolve,
    #[error("covariance form is degenerate: every conditional is a point mass")]
    DegenerateB,
    #[error("assertion failed: {check} (witness: {witness})")]
    AssertionFailure { check: String, witness: String },
    #[error("trace of length {len} too short for {batches} batches")]
    TraceTooShort { len: usize, batches: usize },
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("model: {0}")]
    ModelValidation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
