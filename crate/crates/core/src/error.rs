use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("distribution has zero total mass")]
    ZeroMass,
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("non-finite entry at index {index}")]
    NonFiniteEntry { index: usize },
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("Hard setting requires an even number of bins, got {0}")]
    OddBins(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("mass mismatch: sum(p) = {p_mass}, sum(q) = {q_mass}")]
    MassMismatch { p_mass: f64, q_mass: f64 },
    #[error("input is not unit mass: sum = {0}")]
    NotNormalized(f64),
    #[error("rho must be a finite value >= 1, got {0}")]
    BadRho(f64),
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("cost must be positive, got {value} ({what})")]
    NonPositiveCost { what: String, value: f64 },
    #[error("cycle through node '{0}'")]
    Cycle(String),
    #[error("multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("node '{0}' is not connected to the tree")]
    DisconnectedNode(String),
    #[error("duplicate node id '{0}'")]
    DuplicateId(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("re-rooting at '{0}' would change the leaf set")]
    LeafRootChange(String),
    #[error("tree needs at least 2 leaves, got {0}")]
    TooFewLeaves(usize),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("matrix is not a valid cost matrix: {0}")]
    InvalidCostMatrix(String),
    #[error("problem size {n} exceeds oracle cap {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("optimality certificate failed: reduced cost {0}")]
    NotOptimal(f64),
    #[error("entry {index} is {value}; Sinkhorn requires strictly positive inputs")]
    ZeroEntry { index: usize, value: f64 },
    #[error("smoothing epsilon must be positive and finite, got {0}")]
    BadEps(f64),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("vector is zero after projection to the zero-sum subspace")]
    ZeroVector,
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("iterate became non-finite at epoch {0}")]
    NonFinite(usize),
}
