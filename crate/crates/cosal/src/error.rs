use thiserror::Error;

#[derive(Debug, Error)]
pub enum CosalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset format error in {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("png encoding error: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("png decoding error: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CosalError>;
