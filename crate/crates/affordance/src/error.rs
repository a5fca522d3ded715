use std::io;
use std::path::PathBuf;

use affordance_core::detection::DetectionError;
use affordance_core::kb::{KbError, Violation};
use affordance_core::projection::ProjectionError;
use affordance_core::relabel::RelabelError;
use affordance_core::spatial::RuleError;

use crate::session::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("{}: unsupported format_version {found} (this build reads {supported})", path.display())]
    SchemaVersionMismatch {
        path: PathBuf,
        found: u64,
        supported: u64,
    },
    #[error("{}: knowledge graph is invalid: {}", path.display(), violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidGraph { path: PathBuf, violations: Vec<Violation> },
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Relabel(#[from] RelabelError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("cannot bind {address}: {source}")]
    Bind {
        address: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("labels were submitted for session {found}, this is session {expected}")]
    SessionMismatch { expected: String, found: String },
    #[error("stage {needed} not reached (session is at {current})")]
    StageNotReached { needed: Stage, current: Stage },
    #[error("projection is still running")]
    ProjectionPending,
    #[error("stage {stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, line: Option<usize>, message: impl ToString) -> Self {
        Self::Schema {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    /// Annotates with the stage the error arose in; keeps an existing annotation.
    pub fn at(self, stage: Stage) -> Self {
        match self {
            already @ Self::Stage { .. } => already,
            other => Self::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Stage the error was raised in, if annotated.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Self::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Innermost error, skipping stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Self::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stable machine-readable name used in service error bodies.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Self::Io { .. } => "IoError",
            Self::Schema { .. } => "SchemaError",
            Self::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            Self::InvalidGraph { .. } => "InvalidGraph",
            Self::Detection(e) => match e {
                DetectionError::DimensionMismatch { .. } => "DimensionMismatch",
                DetectionError::ZeroNormEmbedding { .. } => "ZeroNormEmbedding",
                DetectionError::InvalidSpec(_) => "InvalidSpec",
                DetectionError::MalformedPrompt(_) => "MalformedPrompt",
                DetectionError::EmptyLabelSet => "EmptyLabelSet",
                _ => "SchemaError",
            },
            Self::Kb(e) => match e {
                KbError::DuplicateId(_) => "DuplicateId",
                KbError::DanglingReference { .. } => "DanglingReference",
                KbError::InvalidProbability(_) => "InvalidProbability",
                KbError::UnknownEntity(_) => "UnknownEntity",
                KbError::Invalid(_) | KbError::Label(_) => "InvalidGraph",
            },
            Self::Projection(e) => match e {
                ProjectionError::TooFewPoints(_) => "TooFewPoints",
                ProjectionError::PerplexityTooLarge { .. } => "PerplexityTooLarge",
                ProjectionError::DegenerateDistances => "DegenerateDistances",
                ProjectionError::NumericalDivergence(_) => "NumericalDivergence",
                _ => "ProjectionError",
            },
            Self::Relabel(e) => match e {
                RelabelError::UnknownObjectId(_) => "UnknownObjectId",
                RelabelError::EmptyStore => "EmptyStore",
                RelabelError::ZeroNormVector(_) => "ZeroNormVector",
                RelabelError::DimensionMismatch { .. } => "DimensionMismatch",
            },
            Self::Rule(_) => "InvalidRule",
            Self::Config(_) => "ConfigError",
            Self::Bind { .. } => "BindError",
            Self::SessionMismatch { .. } => "SessionMismatch",
            Self::StageNotReached { .. } => "StageNotReached",
            Self::ProjectionPending => "ProjectionPending",
            Self::Stage { .. } => unreachable!("root() strips stage annotations"),
        }
    }
}
