use cityagent_core::data::{
    load_city_csv, load_sensors_csv, load_series_csv, load_streets_csv, synth_sensors,
    synth_series, BlobSpec, DatasetFormat, FileStore, SeriesSpec, StreetTable,
};
use cityagent_core::orchestrator::{Catalog, DatasetBundle};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DATASET_KIND: &str = "dataset";

/// CSV contents to ingest under `id`; see the data module for the column layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetUpload {
    pub id: String,
    pub format: DatasetFormat,
    pub csv: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streets_csv: Option<String>,
}

/// Synthetic dataset: sensor blobs only, one series only, or (default) blobs where every
/// sensor carries its own series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRequest {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<BlobSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesSpec>,
}

/// Dataset ids double as store keys: 1 to 64 of `[A-Za-z0-9_-]`.
pub fn check_dataset_id(id: &str) -> Result<(), ServiceError> {
    let ok = (1..=64).contains(&id.len())
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Validation(format!(
            "dataset id {id:?} must be 1 to 64 characters of [A-Za-z0-9_-]"
        )))
    }
}

pub fn bundle_from_csv(upload: &DatasetUpload) -> Result<DatasetBundle, ServiceError> {
    check_dataset_id(&upload.id)?;
    let streets = match &upload.streets_csv {
        Some(text) => load_streets_csv(text.as_bytes())?,
        None => StreetTable::new(),
    };
    let csv = upload.csv.as_bytes();
    Ok(match upload.format {
        DatasetFormat::Series => {
            let mut bundle = DatasetBundle::from_series(load_series_csv(csv, &upload.id)?);
            bundle.streets = streets;
            bundle
        }
        DatasetFormat::City => {
            DatasetBundle::from_city(&upload.id, load_city_csv(csv, &upload.id)?, streets)
        }
        DatasetFormat::Sensors => {
            DatasetBundle::from_sensors(&upload.id, load_sensors_csv(csv)?, streets)
        }
    })
}

pub fn bundle_from_synth(req: &SynthRequest) -> Result<DatasetBundle, ServiceError> {
    check_dataset_id(&req.id)?;
    Ok(match (&req.blobs, &req.series) {
        (None, Some(series)) => {
            let spec = SeriesSpec {
                id: req.id.clone(),
                ..series.clone()
            };
            DatasetBundle::from_series(synth_series(&spec)?)
        }
        (Some(blobs), None) => {
            let synth = synth_sensors(blobs)?;
            let mut bundle = DatasetBundle::from_sensors(&req.id, synth.nodes, synth.streets);
            bundle.truth = Some(synth.labels);
            bundle
        }
        (blobs, series) => DatasetBundle::synthetic_city(
            &req.id,
            &blobs.clone().unwrap_or_default(),
            &series.clone().unwrap_or_default(),
        )?,
    })
}

fn record_id(id: &str) -> String {
    format!("{DATASET_KIND}.{id}")
}

pub fn save_bundle(store: &FileStore, bundle: &DatasetBundle) -> Result<(), ServiceError> {
    Ok(store.put(&record_id(&bundle.id), DATASET_KIND, bundle)?)
}

pub fn load_bundle(store: &FileStore, id: &str) -> Result<DatasetBundle, ServiceError> {
    check_dataset_id(id)?;
    store.load(&record_id(id)).map_err(|e| match e {
        cityagent_core::data::DataError::NotFound(_) => ServiceError::NotFound {
            what: "dataset",
            id: id.into(),
        },
        other => other.into(),
    })
}

/// Every dataset in the store.
pub fn load_catalog(store: &FileStore) -> Result<Catalog, ServiceError> {
    let mut catalog = Catalog::new();
    for (record, _) in store.list(Some(DATASET_KIND))? {
        catalog.insert(store.load::<DatasetBundle>(&record)?);
    }
    Ok(catalog)
}
