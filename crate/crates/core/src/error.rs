use std::path::PathBuf;

use chrono::NaiveDate;

/// Errors raised by the estimation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A cell could not be parsed. `row` is 1-based and counts the header.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("date grids do not line up; missing dates: {}", format_dates(.missing))]
    Alignment { missing: Vec<NaiveDate> },

    #[error("date grids have an empty intersection")]
    EmptyIntersection,

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("insufficient overlap: {got} jointly observed entries, need at least {needed}")]
    InsufficientOverlap { needed: usize, got: usize },

    #[error("degenerate projection: base vector is identically zero")]
    DegenerateProjection,

    /// Column `column` of the design lies in the span of the columns before it.
    #[error("singular design: column {column} is linearly dependent on earlier columns")]
    SingularDesign { column: usize },

    #[error("insufficient data: {got} observations, need more than {needed}")]
    InsufficientData { needed: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("aggregation error: unmapped id `{0}`")]
    Aggregation(String),

    #[error("empty table: {0}")]
    EmptyTable(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn format_dates(dates: &[NaiveDate]) -> String {
    const SHOWN: usize = 10;
    let mut s = dates
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if dates.len() > SHOWN {
        s.push_str(&format!(" (+{} more)", dates.len() - SHOWN));
    }
    s
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
