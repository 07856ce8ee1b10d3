use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("points are not in local product range: {0}")]
    NotInProductRange(String),
    #[error("capacity exceeded: {count} items over cap {cap}")]
    CapacityExceeded { count: usize, cap: usize },
    #[error("orbit segment does not close: distance {distance} above threshold {threshold}")]
    NotCloseEnough { distance: f64, threshold: f64 },
    #[error("condition number {condition:.3e} exceeds cap {cap:.3e}")]
    IllConditioned { condition: f64, cap: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("no dominated splitting: {0}")]
    NoDomination(String),
    #[error("frame mismatch: residual {0:.3e}")]
    FrameMismatch(f64),
    #[error("point is not on the local stable leaf")]
    NotOnStableLeaf,
    #[error("point is not on the local unstable leaf")]
    NotOnUnstableLeaf,
    #[error("no valid bunching certificate (theta = {theta:.4})")]
    NoBunchingCertificate { theta: f64 },
    #[error("insufficient spread: {0}")]
    InsufficientSpread(String),
    #[error("matrix is not diagonalizable")]
    NotDiagonalizable,
    #[error("periodic obstruction at orbit {orbit}: deviation {deviation:.3e}")]
    PeriodicObstruction { orbit: String, deviation: f64 },
    #[error("conjugator does not match: residual {0:.3e}")]
    BadConjugator(f64),
    #[error("no recurrence found up to n = {0}")]
    NoRecurrenceFound(usize),
    #[error("matrix is not isometric in its own metric")]
    NotIsometric,
    #[error("homoclinic inconsistency at {point}: residual {residual:.3e}")]
    HomoclinicInconsistency { point: String, residual: f64 },
    #[error("sample missing: {0}")]
    MissingSample(String),
    #[error("periods are not coprime: gcd({a}, {b}) = {gcd}")]
    NotCoprime { a: i64, b: i64, gcd: i64 },
    #[error("combination failed: residual {0:.3e}")]
    CombineFailed(f64),
    #[error("fixed-point iteration does not contract: {0}")]
    NotContracting(String),
    #[error("bunching failed: margins {first:.4}, {second:.4}")]
    BunchingFailed { first: f64, second: f64 },
    #[error("leaf growth failed: {0}")]
    LeafGrowthFailed(String),
    #[error("config error at line {line}, field `{field}`: {message}")]
    Config { line: usize, field: String, message: String },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
