use std::fmt;

use thiserror::Error;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum Stage {
    Ingest,
    Preprocess,
    Cluster,
    Schedule,
    Savings,
    Sweep,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Cluster,
        Stage::Schedule,
        Stage::Savings,
        Stage::Sweep,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Cluster => "cluster",
            Stage::Schedule => "schedule",
            Stage::Savings => "savings",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Stage { .. } => 4,
        }
    }

    pub fn stage(stage: Stage, message: impl fmt::Display) -> Self {
        CliError::Stage { stage, message: message.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
