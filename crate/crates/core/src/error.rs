use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, invalid parameters, unknown identifiers.
    #[error("configuration error: {0}")]
    Config(String),

    /// An evaluator produced a non-finite value.
    #[error("numeric fault in {what}{}: state {state:?}", fmt_time(*.t))]
    NumericFault {
        what: String,
        t: Option<f64>,
        state: Vec<f64>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t={t}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

/// Returns a numeric fault unless every entry of `values` is finite.
pub(crate) fn ensure_finite(what: &str, values: &[f64], state: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFault {
            what: what.to_string(),
            t: None,
            state: state.to_vec(),
        })
    }
}

pub(crate) fn ensure_finite_scalar(what: &str, value: f64, state: &[f64]) -> Result<f64> {
    ensure_finite(what, &[value], state).map(|_| value)
}
