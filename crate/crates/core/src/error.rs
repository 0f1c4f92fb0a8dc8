use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate rotation set")]
    DegenerateRotationSet,
    #[error("not enough point pairs: need {needed}, got {got}")]
    InsufficientPairs { needed: usize, got: usize },
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("timestamps differ at sample {0}")]
    TimestampMismatch(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unknown vertex {0}")]
    UnknownVertex(String),
    #[error("unreachable control: {0}")]
    UnreachableControl(String),
    #[error("object {0} is not hinged")]
    NotHinged(String),
    #[error("degenerate hinge contact")]
    DegenerateHingeContact,
    #[error("infeasible script: {0}")]
    InfeasibleScript(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: alloc::boxed::Box::new(e),
            },
        }
    }
}
