//! Long-format CSV codec: `timestamp,id_participant,series,field,value`.
//!
//! One record spans several rows. Its first row always has field `seq`;
//! the remaining fields follow in a fixed per-series order, optional fields
//! omitted when absent:
//!
//! | series       | fields after `seq`                                                        |
//! |--------------|---------------------------------------------------------------------------|
//! | survey       | started_at, ended_at, lat, lon, location_acquired_at, thermal, noise, [sound_source] |
//! | sensor       | kind, value                                                               |
//! | weather      | station_id, station_lat, station_lon, air_temperature, [rainfall]         |
//! | notification | kind, mechanism, target_label, cause_type, cause_value, [lat, lon], payload_text, delivery_status, [sequence_in_day] |
//!
//! Reals are written in shortest round-trip form and timestamps as RFC 3339
//! with an explicit `+00:00` offset, so decode(encode(x)) == x bit-for-bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat};

use super::{Entry, Series, SeriesName, StreamKey};
use crate::domain::{
    Cause, GeoPoint, MicroSurveyResponse, Mechanism, NotificationRecord, ParticipantId,
    PreferenceKind, PreferenceLabel, Record, SensorSample, Timestamp, TriggerEvent,
    WeatherObservation,
};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["timestamp", "id_participant", "series", "field", "value"];

pub fn format_ts(t: Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, false)
}

pub fn parse_ts(s: &str) -> Result<Timestamp> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.to_utc())
        .map_err(|e| Error::Parse(format!("timestamp `{s}`: {e}")))
}

fn fields(seq: u64, record: &Record) -> Vec<(&'static str, String)> {
    let mut out = vec![("seq", seq.to_string())];
    match record {
        Record::Survey(s) => {
            out.push(("started_at", format_ts(s.started_at)));
            out.push(("ended_at", format_ts(s.ended_at)));
            out.push(("lat", s.lat.to_string()));
            out.push(("lon", s.lon.to_string()));
            out.push(("location_acquired_at", format_ts(s.location_acquired_at)));
            out.push(("thermal", PreferenceLabel::from(s.thermal).value_str().into()));
            out.push(("noise", PreferenceLabel::from(s.noise).value_str().into()));
            if let Some(src) = s.sound_source {
                out.push(("sound_source", src.as_str().into()));
            }
        }
        Record::Sensor(s) => {
            out.push(("kind", s.kind.as_str().into()));
            out.push(("value", s.value.to_string()));
        }
        Record::Weather(w) => {
            out.push(("station_id", w.station_id.clone()));
            out.push(("station_lat", w.station_lat.to_string()));
            out.push(("station_lon", w.station_lon.to_string()));
            out.push(("air_temperature", w.air_temperature.to_string()));
            if let Some(rain) = w.rainfall {
                out.push(("rainfall", rain.to_string()));
            }
        }
        Record::Notification(n) => {
            let e = &n.event;
            out.push(("kind", e.kind.as_str().into()));
            out.push(("mechanism", e.mechanism.as_str().into()));
            out.push(("target_label", e.target_label.value_str().into()));
            out.push(("cause_type", e.cause.type_str().into()));
            out.push(("cause_value", e.cause.value().to_string()));
            if let Some(loc) = e.location {
                out.push(("lat", loc.lat.to_string()));
                out.push(("lon", loc.lon.to_string()));
            }
            out.push(("payload_text", n.payload_text.clone()));
            out.push(("delivery_status", n.delivery_status.as_str().into()));
            if let Some(seq) = n.sequence_in_day {
                out.push(("sequence_in_day", seq.to_string()));
            }
        }
    }
    out
}

/// Writes the header and every entry's rows.
pub fn encode_csv<W: Write>(writer: W, entries: &[(StreamKey, Entry)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for (key, entry) in entries {
        let ts = format_ts(entry.record.timestamp());
        let series = key.series.name().as_str();
        for (field, value) in fields(entry.seq, &entry.record) {
            w.write_record([
                ts.as_str(),
                key.participant.as_str(),
                series,
                field,
                value.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Pending {
    line: u64,
    timestamp: String,
    participant: String,
    series: SeriesName,
    fields: BTreeMap<String, String>,
}

impl Pending {
    fn take(&mut self, name: &str) -> Result<String> {
        self.fields
            .remove(name)
            .ok_or_else(|| Error::Parse(format!("line {}: missing field `{name}`", self.line)))
    }

    fn take_opt(&mut self, name: &str) -> Option<String> {
        self.fields.remove(name)
    }

    fn real(&mut self, name: &str) -> Result<f64> {
        let raw = self.take(name)?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("line {}: `{name}` is not a number: {raw}", self.line)))
    }

    fn real_opt(&mut self, name: &str) -> Result<Option<f64>> {
        match self.take_opt(name) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::Parse(format!("line {}: `{name}` is not a number: {raw}", self.line))
            }),
        }
    }

    fn ts(&mut self, name: &str) -> Result<Timestamp> {
        parse_ts(&self.take(name)?)
    }

    fn finish(mut self) -> Result<(StreamKey, Record)> {
        let participant = ParticipantId::new(self.participant.clone())?;
        let record = match self.series {
            SeriesName::Survey => {
                let thermal = PreferenceLabel::parse(PreferenceKind::Thermal, &self.take("thermal")?)?;
                let noise = PreferenceLabel::parse(PreferenceKind::Noise, &self.take("noise")?)?;
                let (PreferenceLabel::Thermal(thermal), PreferenceLabel::Noise(noise)) = (thermal, noise)
                else {
                    unreachable!("parse returns labels of the requested kind")
                };
                Record::Survey(MicroSurveyResponse {
                    participant: participant.clone(),
                    started_at: self.ts("started_at")?,
                    ended_at: self.ts("ended_at")?,
                    lat: self.real("lat")?,
                    lon: self.real("lon")?,
                    location_acquired_at: self.ts("location_acquired_at")?,
                    thermal,
                    noise,
                    sound_source: self.take_opt("sound_source").map(|s| s.parse()).transpose()?,
                })
            }
            SeriesName::Sensor => Record::Sensor(SensorSample {
                participant: participant.clone(),
                kind: self.take("kind")?.parse()?,
                value: self.real("value")?,
                observed_at: parse_ts(&self.timestamp)?,
            }),
            SeriesName::Weather => Record::Weather(WeatherObservation {
                station_id: self.take("station_id")?,
                station_lat: self.real("station_lat")?,
                station_lon: self.real("station_lon")?,
                air_temperature: self.real("air_temperature")?,
                rainfall: self.real_opt("rainfall")?,
                observed_at: parse_ts(&self.timestamp)?,
            }),
            SeriesName::Notification => {
                let kind: PreferenceKind = self.take("kind")?.parse()?;
                let mechanism: Mechanism = self.take("mechanism")?.parse()?;
                let target_label = PreferenceLabel::parse(kind, &self.take("target_label")?)?;
                let cause_type = self.take("cause_type")?;
                let cause = Cause::from_parts(&cause_type, self.real("cause_value")?)?;
                let location = match (self.real_opt("lat")?, self.real_opt("lon")?) {
                    (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon)),
                    (None, None) => None,
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {}: lat and lon must appear together",
                            self.line
                        )))
                    }
                };
                let payload_text = self.take("payload_text")?;
                let delivery_status = self.take("delivery_status")?.parse()?;
                let sequence_in_day = self
                    .take_opt("sequence_in_day")
                    .map(|s| {
                        s.parse::<u32>()
                            .map_err(|_| Error::Parse(format!("line {}: bad sequence_in_day", self.line)))
                    })
                    .transpose()?;
                Record::Notification(NotificationRecord {
                    event: TriggerEvent {
                        participant: participant.clone(),
                        kind,
                        mechanism,
                        target_label,
                        fired_at: parse_ts(&self.timestamp)?,
                        cause,
                        location,
                    },
                    payload_text,
                    delivery_status,
                    sequence_in_day,
                })
            }
        };
        if let Some(extra) = self.fields.keys().next() {
            return Err(Error::Parse(format!(
                "line {}: unexpected field `{extra}` for series {}",
                self.line, self.series
            )));
        }
        if record.timestamp() != parse_ts(&self.timestamp)? {
            return Err(Error::Parse(format!(
                "line {}: timestamp column disagrees with record fields",
                self.line
            )));
        }
        Ok((StreamKey::new(participant, Series::of(&record)), record))
    }
}

/// Parses long-format CSV back into `(key, record)` pairs in file order.
pub fn decode_csv<R: Read>(reader: R) -> Result<Vec<(StreamKey, Record)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    let mut pending: Option<Pending> = None;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i as u64 + 2;
        let (ts, participant, series, field, value) = (&row[0], &row[1], &row[2], &row[3], &row[4]);
        if field == "seq" {
            if let Some(done) = pending.take() {
                out.push(done.finish()?);
            }
            pending = Some(Pending {
                line,
                timestamp: ts.to_string(),
                participant: participant.to_string(),
                series: series.parse()?,
                fields: BTreeMap::new(),
            });
            continue;
        }
        let current = pending
            .as_mut()
            .ok_or_else(|| Error::Parse(format!("line {line}: field before any `seq` row")))?;
        if current.timestamp != ts || current.participant != participant || current.series.as_str() != series {
            return Err(Error::Parse(format!("line {line}: row does not continue the current record")));
        }
        if current.fields.insert(field.to_string(), value.to_string()).is_some() {
            return Err(Error::Parse(format!("line {line}: duplicate field `{field}`")));
        }
    }
    if let Some(done) = pending {
        out.push(done.finish()?);
    }
    Ok(out)
}
