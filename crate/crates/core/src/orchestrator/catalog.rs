use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::data::{
    synth_sensors, synth_series, BlobSpec, CityData, DataError, SeriesSpec, StreetTable,
    TimeSeriesDataset,
};
use crate::spatial::SensorNode;

/// Everything one dataset id refers to: per-sensor series, the sensor list with feature
/// profiles, and street memberships. Any part may be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub id: String,
    pub series: Vec<TimeSeriesDataset>,
    pub sensors: Vec<SensorNode>,
    /// Names of the sensor feature vector entries.
    pub sensor_features: Vec<String>,
    pub streets: StreetTable,
    /// Planted cluster of each sensor, for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub id: String,
    pub sensor: Option<String>,
    pub rows: usize,
    pub features: Vec<String>,
    pub start: Option<i64>,
    pub end: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub series: Vec<SeriesSummary>,
    pub sensors: usize,
    pub sensor_features: Vec<String>,
    pub street_memberships: usize,
}

impl DatasetBundle {
    pub fn from_series(series: TimeSeriesDataset) -> Self {
        Self {
            id: series.id.clone(),
            series: vec![series],
            sensors: Vec::new(),
            sensor_features: Vec::new(),
            streets: StreetTable::new(),
            truth: None,
        }
    }

    pub fn from_city(id: impl Into<String>, city: CityData, streets: StreetTable) -> Self {
        let sensor_features = city
            .series
            .first()
            .map(|s| s.feature_names.clone())
            .unwrap_or_default();
        Self {
            id: id.into(),
            series: city.series,
            sensors: attach_streets(city.sensors, &streets),
            sensor_features,
            streets,
            truth: None,
        }
    }

    pub fn from_sensors(
        id: impl Into<String>,
        sensors: Vec<SensorNode>,
        streets: StreetTable,
    ) -> Self {
        let dim = sensors.first().map_or(0, |s| s.features.len());
        Self {
            id: id.into(),
            sensors: attach_streets(sensors, &streets),
            sensor_features: (0..dim).map(|j| format!("f{j}")).collect(),
            series: Vec::new(),
            streets,
            truth: None,
        }
    }

    /// Planted sensor blobs, each sensor carrying its own synthetic series. Sensors of
    /// cluster `c` share a phase shift of `c` radians and an amplitude of `1 + c/2` times the
    /// template, so clusters also differ over time.
    pub fn synthetic_city(
        id: impl Into<String>,
        blobs: &BlobSpec,
        series: &SeriesSpec,
    ) -> Result<Self, DataError> {
        let id = id.into();
        let synth = synth_sensors(blobs)?;
        let mut all = Vec::with_capacity(synth.nodes.len());
        for (i, (node, &c)) in synth.nodes.iter().zip(&synth.labels).enumerate() {
            let mut spec = series.clone();
            spec.id = format!("{id}/{}", node.id);
            spec.seed = series.seed.wrapping_add(i as u64 + 1);
            for s in &mut spec.sinusoids {
                s.phase += c as f64;
                s.amplitude *= 1.0 + 0.5 * c as f64;
            }
            all.push(synth_series(&spec)?.with_sensor(node.id.clone()));
        }
        let dim = blobs.feature_dim;
        Ok(Self {
            id,
            series: all,
            sensors: attach_streets(synth.nodes, &synth.streets),
            sensor_features: (0..dim).map(|j| format!("f{j}")).collect(),
            streets: synth.streets,
            truth: Some(synth.labels),
        })
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            id: self.id.clone(),
            series: self
                .series
                .iter()
                .map(|s| SeriesSummary {
                    id: s.id.clone(),
                    sensor: s.sensor_id.clone(),
                    rows: s.len(),
                    features: s.feature_names.clone(),
                    start: s.timestamps.first().copied(),
                    end: s.timestamps.last().copied(),
                })
                .collect(),
            sensors: self.sensors.len(),
            sensor_features: self.sensor_features.clone(),
            street_memberships: self.streets.values().map(|s| s.len()).sum(),
        }
    }

    /// Ids a request may name: sensors first, then series sensors and series ids.
    pub fn node_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = self.sensors.iter().map(|s| s.id.clone()).collect();
        for s in &self.series {
            for id in s.sensor_id.iter().chain(std::iter::once(&s.id)) {
                if !out.contains(id) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    /// Feature names across series and sensor profiles.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for name in self
            .series
            .iter()
            .flat_map(|s| s.feature_names.iter())
            .chain(self.sensor_features.iter())
        {
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        out
    }

    /// The series of `node`, matched by sensor id, series id or `<dataset>/<node>`; with no
    /// node, the only series.
    pub fn series_for(&self, node: Option<&str>) -> Result<&TimeSeriesDataset, OrchestratorError> {
        match node {
            Some(node) => self
                .series
                .iter()
                .find(|s| {
                    s.sensor_id.as_deref() == Some(node)
                        || s.id == node
                        || s.id.rsplit('/').next() == Some(node)
                })
                .ok_or_else(|| OrchestratorError::UnknownNode(node.to_string())),
            None => match self.series.as_slice() {
                [only] => Ok(only),
                [] => Err(OrchestratorError::MissingInput(format!(
                    "dataset {} has no time series",
                    self.id
                ))),
                _ => Err(OrchestratorError::MissingInput(format!(
                    "dataset {} has {} series; name a node",
                    self.id,
                    self.series.len()
                ))),
            },
        }
    }

    pub fn sensor_index(&self, node: &str) -> Result<usize, OrchestratorError> {
        self.sensors
            .iter()
            .position(|s| s.id == node)
            .ok_or_else(|| OrchestratorError::UnknownNode(node.to_string()))
    }
}

fn attach_streets(mut sensors: Vec<SensorNode>, streets: &StreetTable) -> Vec<SensorNode> {
    for s in &mut sensors {
        if let Some(set) = streets.get(&s.id) {
            s.streets.extend(set.iter().cloned());
        }
    }
    sensors
}

/// In-memory dataset registry shared by sessions.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    bundles: BTreeMap<String, Arc<DatasetBundle>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, bundle: DatasetBundle) -> Arc<DatasetBundle> {
        let bundle = Arc::new(bundle);
        self.bundles.insert(bundle.id.clone(), bundle.clone());
        bundle
    }

    pub fn get(&self, id: &str) -> Option<Arc<DatasetBundle>> {
        self.bundles.get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.bundles.keys().cloned().collect()
    }
}
