use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layer {layer}: {detail}")]
    Layer { layer: usize, detail: String },
    #[error("parameter sets are not congruent: {0}")]
    Incongruent(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
