use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesDataset};
use crate::numerics::Matrix;
use crate::spatial::SensorNode;

/// Longest run of missing readings that forward-fill will bridge.
pub const MAX_FILL_GAP: usize = 3;

/// Street memberships keyed by node id.
pub type StreetTable = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Wide series CSV, one dataset.
    Series,
    /// Long per-sensor readings CSV, one dataset per sensor plus the sensor list.
    City,
    /// Sensor list only.
    Sensors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub datasets: Vec<TimeSeriesDataset>,
    pub sensors: Vec<SensorNode>,
}

pub fn load_dataset(path: &Path, format: DatasetFormat, id: &str) -> Result<LoadedData, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(match format {
        DatasetFormat::Series => LoadedData {
            datasets: vec![load_series_csv(file, id)?],
            sensors: Vec::new(),
        },
        DatasetFormat::City => {
            let city = load_city_csv(file, id)?;
            LoadedData {
                datasets: city.series,
                sensors: city.sensors,
            }
        }
        DatasetFormat::Sensors => LoadedData {
            datasets: Vec::new(),
            sensors: load_sensors_csv(file)?,
        },
    })
}

/// Parses unix seconds or one of the documented calendar formats (UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    const FORMATS: [&str; 6] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%d/%m/%Y %H:%M:%S",
        "%d/%m/%Y %H:%M",
        "%Y-%m-%dT%H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc().timestamp())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    DataError::Schema {
        line,
        column: None,
        message: e.to_string(),
    }
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>, DataError> {
    Ok(rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect())
}

fn expect_columns(
    headers: &[String],
    fixed: &[&str],
    min_features: usize,
) -> Result<(), DataError> {
    for (i, want) in fixed.iter().enumerate() {
        if headers.get(i).map(|h| h.to_ascii_lowercase()) != Some(want.to_string()) {
            return Err(DataError::Schema {
                line: 1,
                column: Some(want.to_string()),
                message: format!(
                    "expected column {} to be {want:?}, found {:?}",
                    i + 1,
                    headers.get(i)
                ),
            });
        }
    }
    if headers.len() < fixed.len() + min_features {
        return Err(DataError::Schema {
            line: 1,
            column: None,
            message: format!("need at least {min_features} feature column(s)"),
        });
    }
    Ok(())
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<Option<f64>, DataError> {
    if is_missing(cell) {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(DataError::Schema {
            line,
            column: Some(column.to_string()),
            message: format!("{cell:?} is not a finite number"),
        }),
    }
}

fn parse_required(cell: &str, line: usize, column: &str) -> Result<f64, DataError> {
    parse_cell(cell, line, column)?.ok_or_else(|| DataError::Schema {
        line,
        column: Some(column.to_string()),
        message: "value is required".into(),
    })
}

fn parse_time(cell: &str, line: usize) -> Result<i64, DataError> {
    parse_timestamp(cell).ok_or_else(|| DataError::Schema {
        line,
        column: Some("timestamp".into()),
        message: format!("unrecognised timestamp {cell:?}"),
    })
}

fn check_order(prev: Option<i64>, t: i64, line: usize) -> Result<(), DataError> {
    match prev {
        Some(p) if t == p => Err(DataError::Schema {
            line,
            column: Some("timestamp".into()),
            message: "duplicate timestamp".into(),
        }),
        Some(p) if t < p => Err(DataError::Schema {
            line,
            column: Some("timestamp".into()),
            message: "timestamp earlier than the previous row".into(),
        }),
        _ => Ok(()),
    }
}

/// Forward-fills runs of at most [`MAX_FILL_GAP`] missing cells per column. Longer runs, and
/// leading gaps with nothing to carry forward, mark their rows invalid.
fn fill_gaps(rows: Vec<Vec<Option<f64>>>, cols: usize) -> (Matrix, Vec<bool>) {
    let n = rows.len();
    let mut valid = vec![true; n];
    let mut data = vec![0.0; n * cols];
    for j in 0..cols {
        let mut last: Option<f64> = None;
        let mut i = 0;
        while i < n {
            if let Some(v) = rows[i][j] {
                data[i * cols + j] = v;
                last = Some(v);
                i += 1;
                continue;
            }
            let end = (i..n).find(|&k| rows[k][j].is_some()).unwrap_or(n);
            let fillable = last.is_some() && end - i <= MAX_FILL_GAP;
            for k in i..end {
                data[k * cols + j] = last.unwrap_or(0.0);
                if !fillable {
                    valid[k] = false;
                }
            }
            i = end;
        }
    }
    let values = Matrix::from_vec(n, cols, data).expect("dimensions match");
    (values, valid)
}

pub fn load_series_csv<R: Read>(input: R, id: &str) -> Result<TimeSeriesDataset, DataError> {
    let mut rdr = reader(input);
    let headers = headers(&mut rdr)?;
    expect_columns(&headers, &["timestamp"], 1)?;
    let features = headers[1..].to_vec();
    let mut timestamps = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let t = parse_time(&rec[0], line)?;
        check_order(timestamps.last().copied(), t, line)?;
        let row = features
            .iter()
            .enumerate()
            .map(|(j, name)| parse_cell(&rec[j + 1], line, name))
            .collect::<Result<Vec<_>, _>>()?;
        timestamps.push(t);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Invalid("series file has no data rows".into()));
    }
    let (values, valid) = fill_gaps(rows, features.len());
    TimeSeriesDataset::new(id, timestamps, features, values, Some(valid))
}

/// Per-sensor series and sensor nodes from a long-format city readings file.
#[derive(Debug, Clone, PartialEq)]
pub struct CityData {
    pub series: Vec<TimeSeriesDataset>,
    pub sensors: Vec<SensorNode>,
}

struct SensorRows {
    lat: f64,
    lon: f64,
    timestamps: Vec<i64>,
    rows: Vec<Vec<Option<f64>>>,
}

/// Series ids are `<id>/<sensor_id>`; sensor feature vectors are per-feature means.
pub fn load_city_csv<R: Read>(input: R, id: &str) -> Result<CityData, DataError> {
    let mut rdr = reader(input);
    let headers = headers(&mut rdr)?;
    expect_columns(&headers, &["timestamp", "sensor_id", "lat", "lon"], 1)?;
    let features = headers[4..].to_vec();
    let mut order: Vec<String> = Vec::new();
    let mut by_sensor: BTreeMap<String, SensorRows> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let t = parse_time(&rec[0], line)?;
        let sensor = rec[1].to_string();
        if sensor.is_empty() {
            return Err(DataError::Schema {
                line,
                column: Some("sensor_id".into()),
                message: "sensor id is required".into(),
            });
        }
        let lat = parse_required(&rec[2], line, "lat")?;
        let lon = parse_required(&rec[3], line, "lon")?;
        let row = features
            .iter()
            .enumerate()
            .map(|(j, name)| parse_cell(&rec[j + 4], line, name))
            .collect::<Result<Vec<_>, _>>()?;
        let entry = by_sensor.entry(sensor.clone()).or_insert_with(|| {
            order.push(sensor.clone());
            SensorRows {
                lat,
                lon,
                timestamps: Vec::new(),
                rows: Vec::new(),
            }
        });
        if entry.lat != lat || entry.lon != lon {
            return Err(DataError::Schema {
                line,
                column: Some("lat".into()),
                message: format!("sensor {sensor} changes position"),
            });
        }
        check_order(entry.timestamps.last().copied(), t, line)?;
        entry.timestamps.push(t);
        entry.rows.push(row);
    }
    if order.is_empty() {
        return Err(DataError::Invalid("city file has no data rows".into()));
    }
    let mut out = CityData {
        series: Vec::with_capacity(order.len()),
        sensors: Vec::with_capacity(order.len()),
    };
    for sensor in order {
        let rows = by_sensor.remove(&sensor).expect("sensor recorded");
        let (values, valid) = fill_gaps(rows.rows, features.len());
        let ds = TimeSeriesDataset::new(
            format!("{id}/{sensor}"),
            rows.timestamps,
            features.clone(),
            values,
            Some(valid),
        )?
        .with_sensor(sensor.clone());
        out.sensors.push(SensorNode::new(
            sensor,
            rows.lat,
            rows.lon,
            ds.feature_means(),
        ));
        out.series.push(ds);
    }
    Ok(out)
}

pub fn load_sensors_csv<R: Read>(input: R) -> Result<Vec<SensorNode>, DataError> {
    let mut rdr = reader(input);
    let headers = headers(&mut rdr)?;
    expect_columns(&headers, &["id", "lat", "lon"], 1)?;
    let features = headers[3..].to_vec();
    let mut seen = BTreeSet::new();
    let mut nodes = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = rec[0].to_string();
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(DataError::Schema {
                line,
                column: Some("id".into()),
                message: format!("missing or duplicate sensor id {id:?}"),
            });
        }
        let lat = parse_required(&rec[1], line, "lat")?;
        let lon = parse_required(&rec[2], line, "lon")?;
        let feats = features
            .iter()
            .enumerate()
            .map(|(j, name)| parse_required(&rec[j + 3], line, name))
            .collect::<Result<Vec<_>, _>>()?;
        nodes.push(SensorNode::new(id, lat, lon, feats));
    }
    Ok(nodes)
}

pub fn load_streets_csv<R: Read>(input: R) -> Result<StreetTable, DataError> {
    let mut rdr = reader(input);
    let headers = headers(&mut rdr)?;
    expect_columns(&headers, &["node_id", "street_id"], 0)?;
    let mut table = StreetTable::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let (node, street) = (&rec[0], &rec[1]);
        if node.is_empty() || street.is_empty() {
            return Err(DataError::Schema {
                line,
                column: None,
                message: "node_id and street_id are required".into(),
            });
        }
        table
            .entry(node.to_string())
            .or_default()
            .insert(street.to_string());
    }
    Ok(table)
}
