//! Seeded synthetic stand-ins for the city datasets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, StreetTable, TimeSeriesDataset};
use crate::numerics::Matrix;
use crate::spatial::SensorNode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Period in timesteps.
    pub period: f64,
    pub phase: f64,
}

/// Sum of sinusoids plus a linear trend plus uniform noise, per feature.
///
/// Feature `j` shifts every phase by `j · feature_phase` and adds `j · feature_offset`; the
/// last feature is the conventional forecast target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesSpec {
    pub id: String,
    pub length: usize,
    pub features: usize,
    pub sinusoids: Vec<Sinusoid>,
    /// Added per timestep.
    pub trend: f64,
    /// Half-width of the uniform noise.
    pub noise: f64,
    pub feature_phase: f64,
    pub feature_offset: f64,
    pub start: i64,
    /// Seconds between rows.
    pub interval: i64,
    pub seed: u64,
}

impl Default for SeriesSpec {
    fn default() -> Self {
        Self {
            id: "synthetic".into(),
            length: 2000,
            features: 3,
            sinusoids: vec![
                Sinusoid {
                    amplitude: 1.0,
                    period: 48.0,
                    phase: 0.0,
                },
                Sinusoid {
                    amplitude: 0.4,
                    period: 12.0,
                    phase: 0.5,
                },
            ],
            trend: 5e-4,
            noise: 0.05,
            feature_phase: 0.6,
            feature_offset: 0.5,
            start: 1_400_000_000,
            interval: 300,
            seed: 7,
        }
    }
}

impl SeriesSpec {
    /// Noise-free value of feature `j` at step `t`.
    pub fn clean_value(&self, t: usize, j: usize) -> f64 {
        let tf = t as f64;
        let shift = j as f64 * self.feature_phase;
        let waves: f64 = self
            .sinusoids
            .iter()
            .map(|s| s.amplitude * (2.0 * PI * tf / s.period + s.phase + shift).sin())
            .sum();
        waves + self.trend * tf + j as f64 * self.feature_offset
    }
}

pub fn synth_series(spec: &SeriesSpec) -> Result<TimeSeriesDataset, DataError> {
    if spec.length == 0 || spec.features == 0 || spec.interval <= 0 {
        return Err(DataError::Invalid(
            "length, features and interval must be positive".into(),
        ));
    }
    if spec.sinusoids.iter().any(|s| s.period <= 0.0) || spec.noise < 0.0 {
        return Err(DataError::Invalid(
            "periods must be positive and noise nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = Matrix::from_fn(spec.length, spec.features, |t, j| {
        let noise = if spec.noise > 0.0 {
            rng.random_range(-spec.noise..=spec.noise)
        } else {
            0.0
        };
        spec.clean_value(t, j) + noise
    });
    let timestamps = (0..spec.length as i64)
        .map(|i| spec.start + i * spec.interval)
        .collect();
    let names = (0..spec.features).map(|j| format!("x{j}")).collect();
    TimeSeriesDataset::new(spec.id.clone(), timestamps, names, values, None)
}

/// Sensors scattered in planted geographic blobs with cluster-specific feature profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Distance of blob centres from the overall centre, degrees.
    pub radius: f64,
    /// Half-width of the uniform jitter around each blob centre, degrees.
    pub spread: f64,
    pub feature_dim: usize,
    /// Relative half-width of the multiplicative feature noise.
    pub feature_noise: f64,
    /// Streets wholly inside each cluster; nodes are dealt onto them round-robin.
    pub streets_per_cluster: usize,
    /// Additionally link the first node of each cluster to the first node of the next one
    /// through a shared street.
    pub bridge_streets: bool,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            clusters: 3,
            per_cluster: 10,
            center_lat: 56.15,
            center_lon: 10.2,
            radius: 0.03,
            spread: 0.004,
            feature_dim: 4,
            feature_noise: 0.05,
            streets_per_cluster: 2,
            bridge_streets: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSensors {
    pub nodes: Vec<SensorNode>,
    /// Planted cluster of each node.
    pub labels: Vec<usize>,
    pub streets: StreetTable,
}

pub fn synth_sensors(spec: &BlobSpec) -> Result<SyntheticSensors, DataError> {
    if spec.clusters == 0 || spec.per_cluster == 0 || spec.feature_dim == 0 {
        return Err(DataError::Invalid(
            "clusters, per_cluster and feature_dim must be positive".into(),
        ));
    }
    if spec.spread < 0.0 || spec.feature_noise < 0.0 || spec.feature_noise >= 1.0 {
        return Err(DataError::Invalid(
            "spread must be nonnegative and feature noise in [0,1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // one dominant feature per cluster keeps the profiles directionally distinct
    let profiles: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|c| {
            (0..spec.feature_dim)
                .map(|j| {
                    if j == c % spec.feature_dim {
                        1.0
                    } else {
                        rng.random_range(0.1..0.3)
                    }
                })
                .collect()
        })
        .collect();
    let mut out = SyntheticSensors {
        nodes: Vec::new(),
        labels: Vec::new(),
        streets: StreetTable::new(),
    };
    for (c, profile) in profiles.iter().enumerate() {
        let angle = 2.0 * PI * c as f64 / spec.clusters as f64;
        let (clat, clon) = (
            spec.center_lat + spec.radius * angle.sin(),
            spec.center_lon + spec.radius * angle.cos(),
        );
        for k in 0..spec.per_cluster {
            let jitter = |rng: &mut ChaCha8Rng| {
                if spec.spread > 0.0 {
                    rng.random_range(-spec.spread..=spec.spread)
                } else {
                    0.0
                }
            };
            let lat = clat + jitter(&mut rng);
            let lon = clon + jitter(&mut rng);
            let features = profile
                .iter()
                .map(|v| {
                    let f = if spec.feature_noise > 0.0 {
                        rng.random_range(-spec.feature_noise..=spec.feature_noise)
                    } else {
                        0.0
                    };
                    v * (1.0 + f)
                })
                .collect();
            let id = format!("s{c}_{k:02}");
            if spec.streets_per_cluster > 0 {
                let street = format!("street_{c}_{}", k % spec.streets_per_cluster);
                out.streets.entry(id.clone()).or_default().insert(street);
            }
            out.nodes.push(SensorNode::new(id, lat, lon, features));
            out.labels.push(c);
        }
    }
    if spec.bridge_streets && spec.clusters > 1 {
        for c in 0..spec.clusters {
            let next = (c + 1) % spec.clusters;
            if spec.clusters == 2 && c == 1 {
                break;
            }
            let street = format!("bridge_{c}_{next}");
            for node in [c * spec.per_cluster, next * spec.per_cluster] {
                out.streets
                    .entry(out.nodes[node].id.clone())
                    .or_default()
                    .insert(street.clone());
            }
        }
    }
    for node in &mut out.nodes {
        if let Some(s) = out.streets.get(&node.id) {
            node.streets = s.clone();
        }
    }
    Ok(out)
}
