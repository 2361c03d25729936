//! Dataset ingestion, synthetic generators and the file-backed record store.
//!
//! CSV schemas (header row required, comma separated):
//!
//! - series: `timestamp,<feature>,...` one row per instant, wide format.
//! - city sensors: `timestamp,sensor_id,lat,lon,<feature>,...` one row per reading; every
//!   column after `lon` is a numeric feature (vehicle counts, speeds, pollutant levels).
//! - sensors: `id,lat,lon,<feature>,...`.
//! - streets: `node_id,street_id`, one membership per row.
//!
//! Timestamps are unix seconds or one of `YYYY-MM-DDTHH:MM:SS[Z|±HH:MM]`,
//! `YYYY-MM-DD HH:MM[:SS]`, `DD/MM/YYYY HH:MM[:SS]` (read as UTC). Empty cells and `NA`/`NaN`
//! are missing values.

mod loaders;
mod series;
mod store;
mod synth;

pub use loaders::{
    load_city_csv, load_dataset, load_sensors_csv, load_series_csv, load_streets_csv,
    parse_timestamp, CityData, DatasetFormat, LoadedData, StreetTable, MAX_FILL_GAP,
};
pub use series::{SplitFractions, TimeSeriesDataset};
pub use store::{FileStore, RecordHeader, STORE_ENV, STORE_FORMAT_VERSION};
pub use synth::{synth_sensors, synth_series, BlobSpec, SeriesSpec, Sinusoid, SyntheticSensors};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}{}: {message}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Schema {
        line: usize,
        column: Option<String>,
        message: String,
    },
    #[error("timestamps must be strictly increasing (row {row})")]
    NonMonotone { row: usize },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("record {0} not found")]
    NotFound(String),
    #[error("record {id} is corrupt: {reason}")]
    Corrupt { id: String, reason: String },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
