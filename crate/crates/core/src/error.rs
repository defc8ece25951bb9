use thiserror::Error;

use crate::cnf::ParseError;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("invalid formula: {0}")]
    InvalidFormula(String),

    #[error("invalid parameter {what}: {why}")]
    InvalidParameter { what: &'static str, why: String },

    #[error("enumeration budget exceeded: component has {vars} variables, cap {cap}")]
    BudgetExceeded { vars: usize, cap: usize },

    #[error("conditioning on an empty event: no satisfying assignment is consistent with the given partial assignment")]
    ConditionOnNull,

    #[error("formula is unsatisfiable")]
    Unsatisfiable,

    #[error("variable {var} is already set")]
    AlreadySet { var: u32 },

    #[error("resampling did not terminate within {resamples} resamples (input may be unsatisfiable or out of regime)")]
    TerminationGuard { resamples: u64 },

    #[error("threshold infeasible for clause {clause}: width {width} cannot meet requirement {need}")]
    ThresholdInfeasible {
        clause: usize,
        width: usize,
        need: String,
    },

    #[error("oracle reported zero marginal for variable {var}, contradicting a valid assignment")]
    ZeroMarginal { var: u32 },

    #[error("clause width ratio {k_max}/{k_min} exceeds the ratio {ratio} required by the marginal oracle")]
    WidthRatio { k_min: usize, k_max: usize, ratio: u32 },

    #[error("decision tree node budget exceeded: {nodes} nodes built, cap {cap}")]
    TreeBudget { nodes: usize, cap: usize },

    #[error("degenerate path: zero denominator in a path product")]
    DegeneratePath,

    #[error("residual component with {size} variables exceeds the brute-force cap {cap}")]
    ComponentBlowup { size: usize, cap: usize },

    #[error("linear program is malformed: {0}")]
    LpMalformed(String),

    #[error("floating-point solver could not decide feasibility within tolerance")]
    NumericalFailure,

    #[error("certification failed: {0}")]
    CertificationFailure(String),

    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    #[error("observations force variable {var} both ways")]
    ForcingConflict { var: u32 },

    #[error("observations are inconsistent: {0}")]
    InconsistentObservations(String),

    #[error("invalid cause network: {0}")]
    InvalidNetwork(String),

    #[error("generator could not place clauses within the degree budget: {0}")]
    GenInfeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 1 usage, 2 budget, 3 invariant/certification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_)
            | Error::InvalidFormula(_)
            | Error::InvalidParameter { .. }
            | Error::InvalidNetwork(_)
            | Error::AlreadySet { .. }
            | Error::Io(_)
            | Error::Json(_) => 1,
            Error::BudgetExceeded { .. }
            | Error::TerminationGuard { .. }
            | Error::TreeBudget { .. }
            | Error::ComponentBlowup { .. } => 2,
            Error::ConditionOnNull
            | Error::Unsatisfiable
            | Error::ThresholdInfeasible { .. }
            | Error::ZeroMarginal { .. }
            | Error::WidthRatio { .. }
            | Error::DegeneratePath
            | Error::LpMalformed(_)
            | Error::NumericalFailure
            | Error::CertificationFailure(_)
            | Error::InternalConsistency(_)
            | Error::ForcingConflict { .. }
            | Error::InconsistentObservations(_)
            | Error::GenInfeasible(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
