//! Append-only time-series store.
//!
//! Each [`StreamKey`] owns one sequence of records ordered by timestamp,
//! ties broken by arrival order. Sequence numbers are assigned per key in
//! arrival order starting at 1. Intervals are half-open, `[t0, t1)`.

mod csv_codec;
pub mod gateway;
mod jsonl;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use crate::domain::{ParticipantId, Record, SensorKind, Timestamp};
use crate::error::{Error, Result};

pub use csv_codec::{decode_csv, encode_csv, format_ts, parse_ts, CSV_HEADER};
pub use jsonl::{IngestLine, IngestReport, LineError, LineStatus};

/// Coarse series names as they appear in file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeriesName {
    Survey,
    Sensor,
    Weather,
    Notification,
}

impl SeriesName {
    pub const ALL: [SeriesName; 4] = [
        SeriesName::Survey,
        SeriesName::Sensor,
        SeriesName::Weather,
        SeriesName::Notification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeriesName::Survey => "survey",
            SeriesName::Sensor => "sensor",
            SeriesName::Weather => "weather",
            SeriesName::Notification => "notification",
        }
    }

    /// File stem used by exports and snapshots.
    pub fn file_stem(self) -> &'static str {
        match self {
            SeriesName::Survey => "surveys",
            SeriesName::Sensor => "sensor",
            SeriesName::Weather => "weather",
            SeriesName::Notification => "notifications",
        }
    }
}

impl fmt::Display for SeriesName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeriesName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SeriesName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownSeries(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Series {
    Surveys,
    Sensor(SensorKind),
    Weather,
    Notifications,
}

impl Series {
    pub fn name(self) -> SeriesName {
        match self {
            Series::Surveys => SeriesName::Survey,
            Series::Sensor(_) => SeriesName::Sensor,
            Series::Weather => SeriesName::Weather,
            Series::Notifications => SeriesName::Notification,
        }
    }

    pub fn of(record: &Record) -> Series {
        match record {
            Record::Survey(_) => Series::Surveys,
            Record::Sensor(s) => Series::Sensor(s.kind),
            Record::Weather(_) => Series::Weather,
            Record::Notification(_) => Series::Notifications,
        }
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Series::Sensor(kind) => write!(f, "sensor.{}", kind.as_str()),
            other => f.write_str(other.name().as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamKey {
    pub participant: ParticipantId,
    pub series: Series,
}

impl StreamKey {
    pub fn new(participant: ParticipantId, series: Series) -> Self {
        Self { participant, series }
    }

    /// Key a record belongs to. Weather observations carry no participant and
    /// must be routed explicitly.
    pub fn for_record(record: &Record) -> Option<Self> {
        let participant = match record {
            Record::Survey(s) => s.participant.clone(),
            Record::Sensor(s) => s.participant.clone(),
            Record::Notification(n) => n.event.participant.clone(),
            Record::Weather(_) => return None,
        };
        Some(Self::new(participant, Series::of(record)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub seq: u64,
    pub record: Record,
}

#[derive(Debug, Default)]
struct Stream {
    last_seq: u64,
    entries: Vec<Entry>,
}

impl Stream {
    fn insert(&mut self, record: Record) -> u64 {
        self.last_seq += 1;
        let ts = record.timestamp();
        // After every entry with an equal timestamp: ties keep arrival order.
        let at = self.entries.partition_point(|e| e.record.timestamp() <= ts);
        self.entries.insert(
            at,
            Entry {
                seq: self.last_seq,
                record,
            },
        );
        self.last_seq
    }

    fn lower_bound(&self, t: Timestamp) -> usize {
        self.entries.partition_point(|e| e.record.timestamp() < t)
    }
}

/// Thread-safe in-memory store. Appends on distinct keys run in parallel;
/// appends on one key serialize.
#[derive(Debug, Default)]
pub struct Store {
    streams: RwLock<BTreeMap<StreamKey, Arc<RwLock<Stream>>>>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    fn stream(&self, key: &StreamKey) -> Option<Arc<RwLock<Stream>>> {
        self.streams.read().expect("store lock").get(key).cloned()
    }

    fn stream_or_create(&self, key: &StreamKey) -> Arc<RwLock<Stream>> {
        if let Some(stream) = self.stream(key) {
            return stream;
        }
        let mut streams = self.streams.write().expect("store lock");
        streams.entry(key.clone()).or_default().clone()
    }

    fn check(key: &StreamKey, record: &Record) -> Result<()> {
        let series = Series::of(record);
        if series != key.series {
            return Err(Error::SeriesMismatch {
                expected: key.series.to_string(),
                found: series.to_string(),
            });
        }
        if let Some(own) = StreamKey::for_record(record) {
            if own.participant != key.participant {
                return Err(Error::SeriesMismatch {
                    expected: format!("{}/{}", key.participant, key.series),
                    found: format!("{}/{}", own.participant, series),
                });
            }
        }
        record.validate()
    }

    /// Appends one validated record and returns its sequence number.
    pub fn append(&self, key: &StreamKey, record: Record) -> Result<u64> {
        Self::check(key, &record)?;
        let stream = self.stream_or_create(key);
        let mut stream = stream.write().expect("stream lock");
        Ok(stream.insert(record))
    }

    /// Appends a batch atomically: every record is checked before any is stored.
    pub fn append_batch(&self, key: &StreamKey, records: Vec<Record>) -> Result<Vec<u64>> {
        for record in &records {
            Self::check(key, record)?;
        }
        let stream = self.stream_or_create(key);
        let mut stream = stream.write().expect("stream lock");
        Ok(records.into_iter().map(|r| stream.insert(r)).collect())
    }

    /// Records with timestamp in `[t0, t1)`, ascending. Unknown keys yield nothing.
    pub fn query_range(&self, key: &StreamKey, t0: Timestamp, t1: Timestamp) -> Vec<Record> {
        self.query_entries(key, t0, t1)
            .into_iter()
            .map(|e| e.record)
            .collect()
    }

    pub fn query_entries(&self, key: &StreamKey, t0: Timestamp, t1: Timestamp) -> Vec<Entry> {
        if t0 >= t1 {
            return Vec::new();
        }
        let Some(stream) = self.stream(key) else {
            return Vec::new();
        };
        let stream = stream.read().expect("stream lock");
        let lo = stream.lower_bound(t0);
        let hi = stream.lower_bound(t1);
        stream.entries[lo..hi].to_vec()
    }

    /// Every entry of a stream in order.
    pub fn entries(&self, key: &StreamKey) -> Vec<Entry> {
        self.stream(key)
            .map(|s| s.read().expect("stream lock").entries.clone())
            .unwrap_or_default()
    }

    /// The record with the greatest timestamp `<= t`; among equal timestamps
    /// the last to arrive.
    pub fn latest_at_or_before(&self, key: &StreamKey, t: Timestamp) -> Option<Record> {
        let stream = self.stream(key)?;
        let stream = stream.read().expect("stream lock");
        let idx = stream.entries.partition_point(|e| e.record.timestamp() <= t);
        idx.checked_sub(1).map(|i| stream.entries[i].record.clone())
    }

    /// Number of surveys the participant submitted (ended_at) at or before `up_to`.
    pub fn count_surveys(&self, participant: &ParticipantId, up_to: Timestamp) -> usize {
        let key = StreamKey::new(participant.clone(), Series::Surveys);
        self.stream(&key)
            .map(|s| {
                s.read()
                    .expect("stream lock")
                    .entries
                    .partition_point(|e| e.record.timestamp() <= up_to)
            })
            .unwrap_or(0)
    }

    pub fn len(&self, key: &StreamKey) -> usize {
        self.stream(key)
            .map(|s| s.read().expect("stream lock").entries.len())
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.keys().iter().all(|k| self.len(k) == 0)
    }

    /// All keys in sorted order.
    pub fn keys(&self) -> Vec<StreamKey> {
        self.streams.read().expect("store lock").keys().cloned().collect()
    }

    pub fn participants(&self) -> Vec<ParticipantId> {
        let mut ids: Vec<_> = self.keys().into_iter().map(|k| k.participant).collect();
        ids.dedup();
        ids
    }

    /// Entries of the selected series in `[t0, t1)`, grouped by key in key order.
    pub fn select(
        &self,
        series: SeriesName,
        participants: Option<&[ParticipantId]>,
        t0: Timestamp,
        t1: Timestamp,
    ) -> Vec<(StreamKey, Entry)> {
        self.keys()
            .into_iter()
            .filter(|k| k.series.name() == series)
            .filter(|k| participants.is_none_or(|ps| ps.contains(&k.participant)))
            .flat_map(|k| {
                self.query_entries(&k, t0, t1)
                    .into_iter()
                    .map(move |e| (k.clone(), e))
            })
            .collect()
    }

    /// Writes one long-format CSV file per requested series into `dir` and
    /// returns the paths. Series with no matching records still get a
    /// header-only file.
    pub fn export_csv(
        &self,
        series: &[SeriesName],
        participants: Option<&[ParticipantId]>,
        t0: Timestamp,
        t1: Timestamp,
        dir: &std::path::Path,
    ) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for &name in series {
            let path = dir.join(format!("{}.csv", name.file_stem()));
            let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            encode_csv(file, &self.select(name, participants, t0, t1))?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Appends decoded `(key, record)` pairs in order.
    pub fn extend(&self, records: Vec<(StreamKey, Record)>) -> Result<()> {
        for (key, record) in records {
            self.append(&key, record)?;
        }
        Ok(())
    }

    /// Writes every stream as JSONL, one file per series, into `dir`.
    pub fn save_snapshot(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for name in SeriesName::ALL {
            let path = dir.join(format!("{}.jsonl", name.file_stem()));
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            jsonl::write_lines(&mut out, &self.select(name, None, Timestamp::MIN_UTC, Timestamp::MAX_UTC))?;
            std::io::Write::flush(&mut out)?;
        }
        Ok(())
    }

    /// Loads a snapshot written by [`Store::save_snapshot`]. Missing files are skipped.
    pub fn load_snapshot(dir: &std::path::Path) -> Result<Self> {
        let store = Store::new();
        for name in SeriesName::ALL {
            let path = dir.join(format!("{}.jsonl", name.file_stem()));
            if !path.exists() {
                continue;
            }
            let reader = std::io::BufReader::new(std::fs::File::open(&path)?);
            let report = jsonl::import(&store, reader, true)?;
            if let Some(first) = report.errors.first() {
                return Err(Error::Parse(format!(
                    "{}:{}: {}",
                    path.display(),
                    first.line,
                    first.message
                )));
            }
        }
        Ok(store)
    }

    /// Ingests JSONL lines with a `series` of survey, sensor or weather.
    /// Invalid lines are collected with their 1-based line numbers; valid
    /// lines are appended.
    pub fn import_jsonl<R: std::io::BufRead>(&self, reader: R) -> Result<IngestReport> {
        jsonl::import(self, reader, false)
    }

    pub fn export_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for name in SeriesName::ALL {
            jsonl::write_lines(
                &mut out,
                &self.select(name, None, Timestamp::MIN_UTC, Timestamp::MAX_UTC),
            )?;
        }
        Ok(())
    }
}
