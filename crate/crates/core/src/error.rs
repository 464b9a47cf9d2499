use thiserror::Error;

/// Errors raised by the registration kernel and its supporting machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape has {available} points but {needed} are required")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("linear system is singular{}", match .iteration { Some(i) => format!(" at iteration {i}"), None => String::new() })]
    SingularSystem { iteration: Option<usize> },

    #[error("degenerate configuration: cross-covariance rank < 2")]
    DegenerateConfiguration,

    #[error("penalized Hessian is singular")]
    SingularHessian,

    #[error("R² undefined: ground-truth values are constant")]
    ConstantTarget,

    #[error("point cloud has no normals")]
    MissingNormals,
}

impl Error {
    /// Short stable code used in CSV reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::SingularSystem { .. } => "singular_system",
            Error::DegenerateConfiguration => "degenerate_configuration",
            Error::SingularHessian => "singular_hessian",
            Error::ConstantTarget => "constant_target",
            Error::MissingNormals => "missing_normals",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
