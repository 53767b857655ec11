//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),

    #[error("duplicate identifier `{0}`")]
    DuplicateIdentifier(String),

    #[error("arity mismatch: {0}")]
    Arity(String),

    #[error("equation not solvable in closed form: {0}")]
    Unsolvable(String),

    #[error("singular linear system: determinant {0} vanishes")]
    SingularSystem(String),

    #[error("rank inconclusive: symbolic rank {symbolic} vs sampled rank {sampled}")]
    RankInconclusive { symbolic: usize, sampled: usize },

    #[error("zero test inconclusive: {0}")]
    Inconclusive(String),

    #[error("containment violated: {0}")]
    Containment(String),

    #[error("flat-output component {component} never reaches the inputs within {bound} derivatives")]
    NeverReachesInputs { component: usize, bound: usize },

    #[error("candidate is not a flat output at this order bound (total order {0})")]
    ParameterizationOrderExceeded(usize),

    #[error("derivative-order pattern violates the admissible rearrangement: {0}")]
    Rearrangement(String),

    #[error("derivative structure violated: {0}")]
    Structure(String),

    #[error("corank pattern mismatch at level {level}: expected {expected}, found {found}")]
    CorankPattern {
        level: usize,
        expected: usize,
        found: usize,
    },

    #[error("no exact generator found for level {level} (residual corank {residual}); supply hints")]
    MissingGenerator { level: usize, residual: usize },

    #[error("transformation not solvable in closed form: {0}")]
    NotInvertible(String),

    #[error("forbidden dependency in row {row}: {detail}")]
    ForbiddenDependency { row: String, detail: String },

    #[error("guard violated at t = {time}: {guard}")]
    GuardViolation { time: f64, guard: String },

    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),

    #[error("analysis requires exactly three inputs, found {0}")]
    NotThreeInputs(usize),

    #[error("system is not control-affine; apply the affine lift first")]
    NotControlAffine,

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
