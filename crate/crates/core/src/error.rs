use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = HomdpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HomdpError {
    #[error("invalid model: {}", format_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("{kind} id {id} out of range (size {size})")]
    IdOutOfRange { kind: &'static str, id: usize, size: usize },

    #[error("malformed history: {0}")]
    MalformedHistory(String),

    #[error("impossible observation {obs} after action {action} from belief {belief:?}")]
    ImpossibleObservation {
        belief: Vec<f64>,
        action: usize,
        obs: usize,
    },

    #[error("enumeration budget exceeded: need {required} history nodes, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("policy returned an invalid action distribution at history {history}")]
    UndefinedPolicy { history: String },

    #[error("episode count must be positive")]
    EmptyBatch,

    #[error("version space empty ({which}); realizability violated or thresholds too tight")]
    EmptyVersionSpace { which: &'static str },

    #[error("model class is empty: {0}")]
    EmptyClass(&'static str),

    #[error("invalid hard-instance spec: {0}")]
    InvalidSpec(String),

    #[error("packing search exhausted its attempt budget with only {achieved} member(s)")]
    PackingExhausted { achieved: usize },

    #[error("exploration step {step} outside 1..={horizon}")]
    StepOutOfRange { step: usize, horizon: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HomdpError {
    /// True for failures caused by input that does not satisfy a documented
    /// contract (bad model files, bad specs) rather than resource limits.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HomdpError::InvalidModel(_)
                | HomdpError::IdOutOfRange { .. }
                | HomdpError::MalformedHistory(_)
                | HomdpError::DimensionMismatch(_)
                | HomdpError::InvalidSpec(_)
                | HomdpError::Schema(_)
                | HomdpError::Json(_)
                | HomdpError::EmptyClass(_)
                | HomdpError::InvalidArgument(_)
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
