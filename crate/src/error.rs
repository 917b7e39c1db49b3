use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("value {value} does not fit {frac_bits} fractional bits in the 64-bit ring")]
    Overflow { value: f64, frac_bits: u32 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("fractional-bit mismatch: {left} vs {right}")]
    FracBitsMismatch { left: u32, right: u32 },

    #[error("share sets live on different committees: {left} vs {right}")]
    CommitteeMismatch { left: String, right: String },

    #[error("unknown committee {0}")]
    UnknownCommittee(String),

    #[error("carrier numeric mode does not match the {expected} backend")]
    NumericMode { expected: &'static str },

    #[error("{0}")]
    Idx(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("requested {requested} items but only {available} are available")]
    NotEnough { requested: usize, available: usize },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: loss is not finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("trim width 2*alpha = {trim} must be smaller than the model count {models}")]
    TrimTooWide { trim: usize, models: usize },

    #[error("coordinate sample size {beta} must be between 1 and the model length {len}")]
    BetaOutOfRange { beta: usize, len: usize },

    #[error("aggregation weights must be non-negative and sum to a positive value")]
    BadWeights,

    #[error("root update has zero norm; trust scores are undefined")]
    ZeroRootUpdate,

    #[error("cannot place {malicious} malicious clients: placement capacity is {capacity}")]
    PlacementInfeasible { malicious: usize, capacity: usize },

    #[error("config key {key}: {reason}")]
    Config { key: String, reason: String },

    #[error("unknown config key {0}")]
    UnknownKey(String),

    #[error("unknown scenario {0}")]
    UnknownScenario(String),

    #[error("{0} is not implemented")]
    NotImplemented(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
