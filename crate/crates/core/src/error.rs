use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped by the exit-code class the CLI maps them to; see
/// [`Error::is_numerical`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected at least {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind} strategy '{name}' (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("cutoff error: {0}")]
    Cutoff(String),

    #[error("window error: {0}")]
    Window(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("class error: {0}")]
    Class(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("retriever error: {0}")]
    Retriever(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_layer(self, layer: u32) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }

    /// True for failures of the numeric kernels (degenerate signals, solver
    /// non-convergence) as opposed to malformed inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) | Error::Degenerate(_) => true,
            Error::Layer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::UnknownStrategy { .. } => "unknown_strategy",
            Error::Size(_) => "size",
            Error::Cutoff(_) => "cutoff",
            Error::Window(_) => "window",
            Error::Parameter(_) => "parameter",
            Error::Input(_) => "input",
            Error::Class(_) => "class",
            Error::Calibration(_) => "calibration",
            Error::Retriever(_) => "retriever",
            Error::Degenerate(_) => "degenerate",
            Error::Numerical(_) => "numerical",
            Error::Layer { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
