//! HTTP-shaped ingestion gateway, independent of any server framework.
//!
//! `POST /ingest` takes a JSONL body and answers with one JSON status object
//! per non-blank input line. `GET /export?series=<name>[&participant=<id>]`
//! answers with the long-format CSV of that series.

use super::{encode_csv, LineStatus, SeriesName, Store};
use crate::domain::{ParticipantId, Timestamp};

#[derive(Debug, Clone, Copy)]
pub struct Request<'a> {
    pub method: &'a str,
    /// Path with optional query string.
    pub target: &'a str,
    pub body: &'a [u8],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn text(status: u16, msg: impl Into<String>) -> Self {
        Self {
            status,
            content_type: "text/plain; charset=utf-8",
            body: msg.into().into_bytes(),
        }
    }
}

pub fn handle(store: &Store, req: Request<'_>) -> Response {
    let (path, query) = req.target.split_once('?').unwrap_or((req.target, ""));
    match (req.method, path) {
        ("POST", "/ingest") => ingest(store, req.body),
        ("GET", "/export") => export(store, query),
        (_, "/ingest" | "/export") => Response::text(405, "method not allowed"),
        _ => Response::text(404, "not found"),
    }
}

fn ingest(store: &Store, body: &[u8]) -> Response {
    let report = match store.import_jsonl(body) {
        Ok(r) => r,
        Err(e) => return Response::text(400, e.to_string()),
    };
    let mut out = Vec::new();
    for status in &report.statuses {
        serde_json::to_writer(&mut out, status).expect("status serializes");
        out.push(b'\n');
    }
    let all_ok = report
        .statuses
        .iter()
        .all(|s| matches!(s, LineStatus::Ok { .. }));
    Response {
        status: if all_ok { 200 } else { 207 },
        content_type: "application/x-ndjson",
        body: out,
    }
}

fn export(store: &Store, query: &str) -> Response {
    let mut series = None;
    let mut participants = Vec::new();
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        match k {
            "series" => match v.parse::<SeriesName>() {
                Ok(s) => series = Some(s),
                Err(e) => return Response::text(400, e.to_string()),
            },
            "participant" => match ParticipantId::new(v) {
                Ok(p) => participants.push(p),
                Err(e) => return Response::text(400, e.to_string()),
            },
            other => return Response::text(400, format!("unknown parameter `{other}`")),
        }
    }
    let Some(series) = series else {
        return Response::text(400, "missing `series` parameter");
    };
    let filter = (!participants.is_empty()).then_some(participants.as_slice());
    let entries = store.select(series, filter, Timestamp::MIN_UTC, Timestamp::MAX_UTC);
    let mut body = Vec::new();
    if let Err(e) = encode_csv(&mut body, &entries) {
        return Response::text(500, e.to_string());
    }
    Response {
        status: 200,
        content_type: "text/csv",
        body,
    }
}
