use thiserror::Error;

/// Errors produced by `milc`.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (shapes, ranges, invariants).
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical failure: non-finite values, failed factorization.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A file did not match its expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err($crate::error::Error::Validation(format!($($arg)+)));
        }
    };
}

pub(crate) use ensure;

/// Prefix an I/O error with the path it concerns.
pub(crate) fn at_path(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }
}
