use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model has {count} closed classes; a single recurrent class is required")]
    MultipleRecurrentClasses { count: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("linear program unbounded")]
    Unbounded,

    #[error("non-finite update at epoch {epoch}: {what}")]
    NonFiniteUpdate { epoch: usize, what: String },

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("environment generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}
