use crate::model::{PmId, VmId};
use crate::timeseries::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown virtual machine {0}")]
    UnknownVm(VmId),

    #[error("unknown physical machine {0}")]
    UnknownPm(PmId),

    #[error("unknown location `{0}`")]
    UnknownLocation(String),

    #[error("invalid time series: {0}")]
    TimeSeries(String),

    #[error("trace file line {line}: {message}")]
    TraceFormat { line: u64, message: String },

    #[error("trace for `{location}` has non-monotone timestamp {timestamp} at line {line}")]
    NonMonotone {
        location: String,
        timestamp: Timestamp,
        line: u64,
    },

    #[error("trace for `{location}` has negative price {price} at line {line}")]
    NegativePrice { location: String, price: f64, line: u64 },

    #[error("trace file is missing column `{0}`")]
    MissingColumn(String),

    #[error("no trace data for `{location}` at {timestamp}")]
    TraceGap { location: String, timestamp: Timestamp },

    #[error("forecast: {0}")]
    Forecast(String),

    #[error("schedule windows do not match")]
    WindowMismatch,

    #[error("new forecast window must start after {current}, got {requested}")]
    WindowNotLater { current: Timestamp, requested: Timestamp },

    #[error(
        "search space too large: about {mantissa:.2} x 10^{exponent} combinations \
         (log10 = {log10_count:.1}) exceeds the limit of {limit}"
    )]
    SearchSpaceTooLarge {
        log10_count: f64,
        mantissa: f64,
        exponent: i64,
        limit: u64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
