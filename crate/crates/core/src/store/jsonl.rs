use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Entry, Series, Store, StreamKey};
use crate::domain::{
    MicroSurveyResponse, NotificationRecord, ParticipantId, Record, SensorSample,
    WeatherObservation,
};
use crate::error::{Error, Result};

/// One JSONL line, discriminated by `series`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "series", rename_all = "snake_case")]
pub enum IngestLine {
    Survey(MicroSurveyResponse),
    Sensor(SensorSample),
    /// Weather lines name the participant whose stream receives them.
    Weather {
        participant: ParticipantId,
        #[serde(flatten)]
        observation: WeatherObservation,
    },
    /// Snapshot-only; rejected by ingestion.
    Notification(NotificationRecord),
}

impl IngestLine {
    pub fn into_keyed(self) -> (StreamKey, Record) {
        match self {
            IngestLine::Weather {
                participant,
                observation,
            } => (
                StreamKey::new(participant, Series::Weather),
                Record::Weather(observation),
            ),
            IngestLine::Survey(s) => keyed(Record::Survey(s)),
            IngestLine::Sensor(s) => keyed(Record::Sensor(s)),
            IngestLine::Notification(n) => keyed(Record::Notification(n)),
        }
    }

    pub fn from_keyed(key: &StreamKey, record: &Record) -> Self {
        match record {
            Record::Survey(s) => IngestLine::Survey(s.clone()),
            Record::Sensor(s) => IngestLine::Sensor(s.clone()),
            Record::Weather(w) => IngestLine::Weather {
                participant: key.participant.clone(),
                observation: w.clone(),
            },
            Record::Notification(n) => IngestLine::Notification(n.clone()),
        }
    }
}

fn keyed(record: Record) -> (StreamKey, Record) {
    let key = StreamKey::for_record(&record).expect("record carries its participant");
    (key, record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LineStatus {
    Ok { line: usize, series: String, seq: u64 },
    Error { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub statuses: Vec<LineStatus>,
    pub errors: Vec<LineError>,
}

impl IngestReport {
    pub fn appended(&self) -> usize {
        self.statuses
            .iter()
            .filter(|s| matches!(s, LineStatus::Ok { .. }))
            .count()
    }
}

pub(super) fn import<R: BufRead>(store: &Store, reader: R, allow_notifications: bool) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<IngestLine>(&line)
            .map_err(Error::from)
            .and_then(|parsed| {
                if !allow_notifications && matches!(parsed, IngestLine::Notification(_)) {
                    return Err(Error::UnknownSeries(
                        "notification (not accepted for ingestion)".into(),
                    ));
                }
                let (key, record) = parsed.into_keyed();
                let seq = store.append(&key, record)?;
                Ok((key, seq))
            });
        match outcome {
            Ok((key, seq)) => report.statuses.push(LineStatus::Ok {
                line: line_no,
                series: key.series.to_string(),
                seq,
            }),
            Err(err) => {
                let message = err.to_string();
                report.errors.push(LineError {
                    line: line_no,
                    message: message.clone(),
                });
                report.statuses.push(LineStatus::Error {
                    line: line_no,
                    message,
                });
            }
        }
    }
    Ok(report)
}

pub(super) fn write_lines<W: Write>(out: &mut W, entries: &[(StreamKey, Entry)]) -> Result<()> {
    for (key, entry) in entries {
        serde_json::to_writer(&mut *out, &IngestLine::from_keyed(key, &entry.record))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
