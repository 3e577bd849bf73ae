use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("step {t} outside 1..={num_steps}")]
    StepOutOfRange { t: usize, num_steps: usize },

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss {loss} at update {update} (micro-batch {micro_batch}, t = {t})")]
    NonFiniteLoss { update: usize, micro_batch: usize, t: usize, loss: f64 },

    #[error("invalid inference step count {steps} (schedule has {num_steps} steps)")]
    InvalidStepCount { steps: usize, num_steps: usize },

    #[error("lora rank {rank} must be below min({d_in}, {d_out})")]
    RankTooLarge { rank: usize, d_in: usize, d_out: usize },

    #[error("malformed weight `{text}` at byte {position}: {reason}")]
    MalformedWeight { text: String, position: usize, reason: &'static str },

    #[error("unbalanced parentheses at byte {position}")]
    UnbalancedParentheses { position: usize },

    #[error("prompt is empty")]
    EmptyPrompt,

    #[error("invalid identifier `{0}`: must be nonempty lowercase ascii alphanumeric")]
    InvalidIdentifier(String),

    #[error("identifier `{0}` registered twice")]
    DuplicateIdentifier(String),

    #[error("malformed registry line {line}: `{text}`")]
    MalformedRegistryLine { line: usize, text: String },

    #[error("trace needs at least {needed} samples, has {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("baseline run `{0}` not found")]
    BaselineMissing(String),

    #[error("need at least two runs to compare, got {0}")]
    TooFewRuns(usize),

    #[error("cannot parse telemetry line `{line}`: {reason}")]
    TelemetryParse { line: String, reason: String },

    #[error("sampling interval {0} s is below the 0.1 s minimum")]
    IntervalTooShort(f64),

    #[error("trace invariant violated: {0}")]
    TraceInvariant(String),

    #[error("{0} set is empty")]
    EmptyImageSet(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint manifest does not match parameters: {0}")]
    ManifestMismatch(String),
}

impl Error {
    pub(crate) fn range(msg: impl Into<String>) -> Self {
        Error::InvalidRange(msg.into())
    }
}
