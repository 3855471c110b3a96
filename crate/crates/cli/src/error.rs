use qcrit_core::annotation::AnnotationError;
use qcrit_core::corpus::CorpusError;
use qcrit_core::evolution::EvolutionError;
use qcrit_core::jsonl::JsonlError;
use qcrit_core::judgment::JudgeError;
use qcrit_core::knowledge_base::KbError;
use qcrit_core::llm_gateway::GatewayError;
use qcrit_core::scorer::ScorerError;
use qcrit_core::selector::SelectError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PREREQUISITE: i32 = 3;
pub const EXIT_PROVIDER: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{missing} not found; run `qcrit {run_first}` first")]
    Prerequisite {
        missing: String,
        run_first: &'static str,
    },
    #[error("provider: {0}")]
    Provider(String),
    #[error("run directory {0} is locked by another stage")]
    Locked(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Prerequisite { .. } => EXIT_PREREQUISITE,
            CliError::Provider(_) => EXIT_PROVIDER,
            CliError::Locked(_) | CliError::Failed(_) => EXIT_FAILURE,
        }
    }

    pub fn failed(e: impl std::fmt::Display) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::Transport(g) => g.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<EvolutionError> for CliError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::Config(m) => CliError::Config(m),
            EvolutionError::Gateway(g) => g.into(),
            EvolutionError::Judge(j) => j.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ScorerError> for CliError {
    fn from(e: ScorerError) -> Self {
        match e {
            ScorerError::Config(m) => CliError::Config(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        CliError::Failed(e.to_string())
    }
}
