//! Hexagonal binning of geolocated messages and GeoJSON export.
//!
//! Points are projected to local planar metres with an equirectangular
//! approximation about an origin, then assigned to pointy-top hexagons in
//! axial coordinates by cube rounding.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{DeliveryStatus, GeoPoint, NotificationRecord};
use crate::error::{Error, Result};
use crate::weather::EARTH_RADIUS_M;

pub const DEFAULT_EDGE_M: f64 = 250.0;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexCell {
    pub q: i64,
    pub r: i64,
    pub edge_m: f64,
    pub count: u64,
}

/// Local planar metres (east, north) of `p` relative to `origin`.
pub fn project(p: GeoPoint, origin: GeoPoint) -> (f64, f64) {
    let x = EARTH_RADIUS_M * (p.lon - origin.lon).to_radians() * origin.lat.to_radians().cos();
    let y = EARTH_RADIUS_M * (p.lat - origin.lat).to_radians();
    (x, y)
}

/// Inverse of [`project`].
pub fn unproject(x: f64, y: f64, origin: GeoPoint) -> GeoPoint {
    GeoPoint::new(
        origin.lat + (y / EARTH_RADIUS_M).to_degrees(),
        origin.lon + (x / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees(),
    )
}

fn cube_round(qf: f64, rf: f64) -> (i64, i64) {
    let sf = -qf - rf;
    let (mut q, mut r, s) = (qf.round(), rf.round(), sf.round());
    let (dq, dr, ds) = ((q - qf).abs(), (r - rf).abs(), (s - sf).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    (q as i64, r as i64)
}

/// Axial coordinates of the hexagon containing a planar point.
pub fn planar_to_hex(x: f64, y: f64, edge_m: f64) -> (i64, i64) {
    let qf = (SQRT3 / 3.0 * x - y / 3.0) / edge_m;
    let rf = (2.0 / 3.0 * y) / edge_m;
    cube_round(qf, rf)
}

/// Planar centre of a hexagon.
pub fn hex_center(q: i64, r: i64, edge_m: f64) -> (f64, f64) {
    lattice_to_planar(2 * q + r, 3 * r, edge_m)
}

/// Vertices live on an integer lattice with unit steps of
/// `(edge·√3/2, edge/2)`, so neighbouring cells compute identical corners.
fn lattice_to_planar(x: i64, y: i64, edge_m: f64) -> (f64, f64) {
    (x as f64 * edge_m * SQRT3 / 2.0, y as f64 * edge_m / 2.0)
}

const CORNERS: [(i64, i64); 6] = [(1, 1), (0, 2), (-1, 1), (-1, -1), (0, -2), (1, -1)];

pub fn to_hex(lat: f64, lon: f64, origin: GeoPoint, edge_m: f64) -> (i64, i64) {
    assert!(edge_m > 0.0, "edge length must be positive");
    let (x, y) = project(GeoPoint::new(lat, lon), origin);
    planar_to_hex(x, y, edge_m)
}

/// Closed ring of `[lon, lat]` pairs, counter-clockwise, 7 positions.
pub fn hex_ring(q: i64, r: i64, origin: GeoPoint, edge_m: f64) -> Vec<[f64; 2]> {
    let (cx, cy) = (2 * q + r, 3 * r);
    let mut ring: Vec<[f64; 2]> = CORNERS
        .iter()
        .map(|(dx, dy)| {
            let (x, y) = lattice_to_planar(cx + dx, cy + dy, edge_m);
            let p = unproject(x, y, origin);
            [p.lon, p.lat]
        })
        .collect();
    ring.push(ring[0]);
    ring
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    pub origin: GeoPoint,
    pub edge_m: f64,
    /// Sorted by `(q, r)`.
    pub cells: Vec<HexCell>,
    /// Sent records that carried no location.
    pub unlocated: u64,
}

impl Binning {
    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.count).sum()
    }
}

pub fn bin_points(points: impl IntoIterator<Item = GeoPoint>, origin: GeoPoint, edge_m: f64) -> Vec<HexCell> {
    let mut counts: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    for p in points {
        *counts.entry(to_hex(p.lat, p.lon, origin, edge_m)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((q, r), count)| HexCell { q, r, edge_m, count })
        .collect()
}

/// Bins the sent records of `log`.
pub fn bin(log: &[NotificationRecord], origin: GeoPoint, edge_m: f64) -> Binning {
    let sent = log.iter().filter(|r| r.delivery_status == DeliveryStatus::Sent);
    let mut unlocated = 0;
    let points: Vec<GeoPoint> = sent
        .filter_map(|r| {
            if r.event.location.is_none() {
                unlocated += 1;
            }
            r.event.location
        })
        .collect();
    Binning {
        origin,
        edge_m,
        cells: bin_points(points, origin, edge_m),
        unlocated,
    }
}

/// Mean location of the sent, geolocated records.
pub fn centroid(log: &[NotificationRecord]) -> Option<GeoPoint> {
    let pts: Vec<GeoPoint> = log
        .iter()
        .filter(|r| r.delivery_status.is_sent())
        .filter_map(|r| r.event.location)
        .collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    Some(GeoPoint::new(
        pts.iter().map(|p| p.lat).sum::<f64>() / n,
        pts.iter().map(|p| p.lon).sum::<f64>() / n,
    ))
}

pub fn to_geojson(binning: &Binning) -> Value {
    let features: Vec<Value> = binning
        .cells
        .iter()
        .map(|c| {
            json!({
                "type": "Feature",
                "properties": { "q": c.q, "r": c.r, "edge_m": c.edge_m, "count": c.count },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [hex_ring(c.q, c.r, binning.origin, binning.edge_m)],
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn export_geojson<W: Write>(binning: &Binning, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &to_geojson(binning))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads back `(q, r, count)` from a file written by [`export_geojson`],
/// checking each ring is closed with six distinct corners.
pub fn read_geojson_cells<R: Read>(reader: R) -> Result<Vec<HexCell>> {
    let doc: Value = serde_json::from_reader(reader)?;
    let bad = |why: &str| Error::Parse(format!("geojson: {why}"));
    if doc["type"] != "FeatureCollection" {
        return Err(bad("not a FeatureCollection"));
    }
    let features = doc["features"].as_array().ok_or_else(|| bad("features missing"))?;
    features
        .iter()
        .map(|f| {
            let props = &f["properties"];
            let ring = f["geometry"]["coordinates"][0]
                .as_array()
                .ok_or_else(|| bad("ring missing"))?;
            if ring.len() != 7 || ring[0] != ring[6] {
                return Err(bad("ring must be closed with 7 positions"));
            }
            let int = |k: &str| props[k].as_i64().ok_or_else(|| bad("integer property missing"));
            Ok(HexCell {
                q: int("q")?,
                r: int("r")?,
                edge_m: props["edge_m"].as_f64().ok_or_else(|| bad("edge_m missing"))?,
                count: props["count"].as_u64().ok_or_else(|| bad("count missing"))?,
            })
        })
        .collect()
}

/// Even-odd ray casting on `[lat, lon]` treated as a plane.
pub fn point_in_polygon(p: GeoPoint, polygon: &[GeoPoint]) -> bool {
    let mut inside = false;
    let n = polygon.len();
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + n - 1) % n]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let lon_at = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if p.lon < lon_at {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Share {
    pub inside: u64,
    pub total: u64,
}

impl Share {
    /// `None` when nothing was counted.
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.inside as f64 / self.total as f64)
    }
}

/// In-polygon share of the sent, geolocated records in `log`.
pub fn polygon_share(log: &[NotificationRecord], polygon: &[GeoPoint]) -> Share {
    let pts = log
        .iter()
        .filter(|r| r.delivery_status.is_sent())
        .filter_map(|r| r.event.location);
    let mut share = Share { inside: 0, total: 0 };
    for p in pts {
        share.total += 1;
        if point_in_polygon(p, polygon) {
            share.inside += 1;
        }
    }
    share
}
