//! Weather stations, nearest-station lookup and periodic polling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::domain::{GeoPoint, ParticipantId, Record, Timestamp, WeatherObservation};
use crate::error::{Error, Result};
use crate::store::{Series, Store, StreamKey};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Station {
    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }
}

/// Immutable set of stations, kept sorted by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationRegistry {
    stations: Vec<Station>,
}

impl StationRegistry {
    pub fn new(mut stations: Vec<Station>) -> Result<Self> {
        stations.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in stations.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateStation(pair[0].id.clone()));
            }
        }
        Ok(Self { stations })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn get(&self, id: &str) -> Option<&Station> {
        self.stations
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.stations[i])
    }

    /// Station minimizing haversine distance; ties go to the smallest id.
    pub fn nearest(&self, at: GeoPoint) -> Result<&Station> {
        let mut best: Option<(&Station, f64)> = None;
        for station in &self.stations {
            let d = haversine_m(at, station.location());
            // Stations are id-sorted, so strict `<` keeps the smallest id on ties.
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((station, d));
            }
        }
        best.map(|(s, _)| s).ok_or(Error::EmptyRegistry)
    }
}

/// Source of the latest reading per station.
pub trait WeatherProvider {
    /// Latest observation for `station` available at `t`.
    fn latest(&self, station: &Station, t: Timestamp) -> Result<WeatherObservation>;
}

impl<P: WeatherProvider + ?Sized> WeatherProvider for &P {
    fn latest(&self, station: &Station, t: Timestamp) -> Result<WeatherObservation> {
        (**self).latest(station, t)
    }
}

/// Fixture CSV row: `station_id,lat,lon,timestamp,air_temperature_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(with = "rfc3339")]
    pub timestamp: Timestamp,
    pub air_temperature_c: f64,
}

mod rfc3339 {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::domain::Timestamp;
    use crate::store::{format_ts, parse_ts};

    pub fn serialize<S: Serializer>(t: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_ts(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let raw = String::deserialize(d)?;
        parse_ts(&raw).map_err(serde::de::Error::custom)
    }
}

/// Replays readings from a fixture table.
#[derive(Debug, Clone, Default)]
pub struct FixtureProvider {
    registry: StationRegistry,
    readings: BTreeMap<String, Vec<(Timestamp, f64)>>,
}

impl FixtureProvider {
    pub fn from_rows(rows: impl IntoIterator<Item = FixtureRow>) -> Result<Self> {
        let mut stations: BTreeMap<String, Station> = BTreeMap::new();
        let mut readings: BTreeMap<String, Vec<(Timestamp, f64)>> = BTreeMap::new();
        for row in rows {
            let station = stations.entry(row.station_id.clone()).or_insert_with(|| Station {
                id: row.station_id.clone(),
                lat: row.lat,
                lon: row.lon,
            });
            if station.lat != row.lat || station.lon != row.lon {
                return Err(Error::Parse(format!(
                    "station {} appears with two locations",
                    row.station_id
                )));
            }
            readings
                .entry(row.station_id)
                .or_default()
                .push((row.timestamp, row.air_temperature_c));
        }
        for series in readings.values_mut() {
            series.sort_by_key(|(t, _)| *t);
        }
        Ok(Self {
            registry: StationRegistry::new(stations.into_values().collect())?,
            readings,
        })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<FixtureRow>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn registry(&self) -> &StationRegistry {
        &self.registry
    }
}

pub fn write_fixture_csv<W: Write>(writer: W, rows: &[FixtureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

impl WeatherProvider for FixtureProvider {
    fn latest(&self, station: &Station, t: Timestamp) -> Result<WeatherObservation> {
        let series = self
            .readings
            .get(&station.id)
            .ok_or_else(|| Error::ProviderUnavailable(format!("unknown station {}", station.id)))?;
        let idx = series.partition_point(|(ts, _)| *ts <= t);
        let (observed_at, temp) = idx
            .checked_sub(1)
            .map(|i| series[i])
            .ok_or_else(|| Error::ProviderUnavailable(format!("no reading for {} at {t}", station.id)))?;
        Ok(WeatherObservation {
            station_id: station.id.clone(),
            station_lat: station.lat,
            station_lon: station.lon,
            air_temperature: temp,
            rainfall: None,
            observed_at,
        })
    }
}

/// Wraps a provider and fails at the listed instants.
#[derive(Debug, Clone)]
pub struct WithOutages<P> {
    pub inner: P,
    pub outages: BTreeSet<Timestamp>,
}

impl<P: WeatherProvider> WeatherProvider for WithOutages<P> {
    fn latest(&self, station: &Station, t: Timestamp) -> Result<WeatherObservation> {
        if self.outages.contains(&t) {
            return Err(Error::ProviderUnavailable("connection refused".into()));
        }
        self.inner.latest(station, t)
    }
}

/// Minimal blocking GET used by [`LiveProvider`].
pub trait HttpGet {
    fn get(&self, url: &str) -> std::result::Result<String, String>;
}

pub const WEATHER_API_URL_ENV: &str = "WEATHER_API_URL";

#[derive(Debug, Deserialize)]
struct LiveReading {
    station_id: String,
    value: f64,
    timestamp: String,
}

/// Client for an endpoint returning the latest reading of every station as a
/// JSON array of `{station_id, location, value, timestamp}`.
pub struct LiveProvider<T> {
    url: String,
    transport: T,
}

impl<T: HttpGet> LiveProvider<T> {
    pub fn new(url: impl Into<String>, transport: T) -> Self {
        Self {
            url: url.into(),
            transport,
        }
    }

    /// `None` when `WEATHER_API_URL` is unset.
    pub fn from_env(transport: T) -> Option<Self> {
        std::env::var(WEATHER_API_URL_ENV)
            .ok()
            .filter(|u| !u.is_empty())
            .map(|url| Self::new(url, transport))
    }
}

impl<T: HttpGet> WeatherProvider for LiveProvider<T> {
    fn latest(&self, station: &Station, _t: Timestamp) -> Result<WeatherObservation> {
        let body = self
            .transport
            .get(&self.url)
            .map_err(Error::ProviderUnavailable)?;
        let readings: Vec<LiveReading> = serde_json::from_str(&body)
            .map_err(|e| Error::ProviderUnavailable(format!("bad payload: {e}")))?;
        let reading = readings
            .into_iter()
            .find(|r| r.station_id == station.id)
            .ok_or_else(|| Error::ProviderUnavailable(format!("station {} missing", station.id)))?;
        Ok(WeatherObservation {
            station_id: station.id.clone(),
            station_lat: station.lat,
            station_lon: station.lon,
            air_temperature: reading.value,
            rainfall: None,
            observed_at: crate::store::parse_ts(&reading.timestamp)?,
        })
    }
}

/// Observation from the station nearest to `location`.
pub fn poll<P: WeatherProvider + ?Sized>(
    provider: &P,
    registry: &StationRegistry,
    location: GeoPoint,
    t: Timestamp,
) -> Result<WeatherObservation> {
    let station = registry.nearest(location)?;
    provider.latest(station, t)
}

/// Poll instants `start, start + interval, ...` up to and including `end`.
pub fn ticks(start: Timestamp, end: Timestamp, interval: Duration) -> impl Iterator<Item = Timestamp> {
    assert!(interval > Duration::zero(), "poll interval must be positive");
    std::iter::successors(Some(start), move |t| Some(*t + interval)).take_while(move |t| *t <= end)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PollOutcome {
    /// Participants whose weather stream gained an observation this tick.
    pub updated: Vec<ParticipantId>,
    /// Participants with no survey location yet.
    pub deferred: Vec<ParticipantId>,
    /// Station ids whose provider call failed.
    pub failed_stations: Vec<String>,
}

/// Resolves each participant's nearest station from their latest survey
/// location, calls the provider once per distinct station and appends the
/// observation to every mapped participant's weather stream.
pub fn poll_tick<P: WeatherProvider + ?Sized>(
    provider: &P,
    registry: &StationRegistry,
    store: &Store,
    participants: &[ParticipantId],
    t: Timestamp,
) -> Result<PollOutcome> {
    let mut outcome = PollOutcome::default();
    let mut by_station: BTreeMap<&str, Vec<&ParticipantId>> = BTreeMap::new();
    for p in participants {
        let key = StreamKey::new(p.clone(), Series::Surveys);
        match store.latest_at_or_before(&key, t) {
            Some(Record::Survey(s)) => {
                let station = registry.nearest(s.location())?;
                by_station.entry(station.id.as_str()).or_default().push(p);
            }
            _ => outcome.deferred.push(p.clone()),
        }
    }
    for (station_id, members) in by_station {
        let station = registry.get(station_id).expect("station from registry");
        match provider.latest(station, t) {
            Ok(obs) => {
                for p in members {
                    let key = StreamKey::new(p.clone(), Series::Weather);
                    store.append(&key, Record::Weather(obs.clone()))?;
                    outcome.updated.push(p.clone());
                }
            }
            Err(err) => {
                log::warn!("weather poll skipped for station {station_id} at {t}: {err}");
                outcome.failed_stations.push(station_id.to_string());
            }
        }
    }
    outcome.updated.sort();
    Ok(outcome)
}
