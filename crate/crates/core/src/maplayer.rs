//! Mood-tagged GPS points for map display.

use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ingest::format_timestamp;
use crate::model::{MoodResponse, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub participant_id: String,
    pub timestamp: DateTime<Utc>,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub happiness: bool,
    pub activation: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapLayer {
    pub points: Vec<MapPoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MapFilter {
    pub participant: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl MapFilter {
    fn admits(&self, r: &MoodResponse) -> bool {
        self.participant.as_ref().is_none_or(|p| *p == r.participant_id)
            && self.from.is_none_or(|t| r.timestamp >= t)
            && self.to.is_none_or(|t| r.timestamp <= t)
    }
}

/// One point per response whose nearest observation within `window` carries
/// a GPS fix, using the same nearest-observation rule as feature assembly.
/// `observations` should already be cleaned.
pub fn build_map_layer(
    responses: &[MoodResponse],
    observations: &[Observation],
    filter: &MapFilter,
    window: Duration,
) -> MapLayer {
    let mut series: HashMap<&str, Vec<&Observation>> = HashMap::new();
    for o in observations {
        series.entry(o.participant_id.as_str()).or_default().push(o);
    }
    for s in series.values_mut() {
        s.sort_by_key(|o| o.timestamp);
    }
    let mut points = Vec::new();
    for r in responses.iter().filter(|r| filter.admits(r)) {
        let Some(obs) = series.get(r.participant_id.as_str()) else {
            continue;
        };
        let lo = obs.partition_point(|o| o.timestamp < r.timestamp - window);
        let hi = obs.partition_point(|o| o.timestamp <= r.timestamp + window);
        let nearest = obs[lo..hi]
            .iter()
            .min_by_key(|o| ((o.timestamp - r.timestamp).abs(), o.timestamp));
        if let Some(g) = nearest.and_then(|o| o.gps) {
            points.push(MapPoint {
                participant_id: r.participant_id.clone(),
                timestamp: r.timestamp,
                latitude: g.latitude,
                longitude: g.longitude,
                altitude: g.altitude,
                happiness: r.happiness,
                activation: r.activation,
            });
        }
    }
    if points.is_empty() {
        log::warn!("map layer is empty: no response has a nearby GPS fix");
    }
    MapLayer { points }
}

impl MapLayer {
    /// GeoJSON `FeatureCollection` of point features.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .points
            .iter()
            .map(|p| {
                json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [p.longitude, p.latitude, p.altitude],
                    },
                    "properties": {
                        "participant_id": p.participant_id,
                        "timestamp": format_timestamp(&p.timestamp),
                        "happiness": p.happiness as u8,
                        "activation": p.activation as u8,
                        "mood_state": crate::model::encode_mood_state(p.happiness, p.activation).code(),
                    },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }
}
