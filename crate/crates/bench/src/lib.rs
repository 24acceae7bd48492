//! Shared inputs for the benchmarks.

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use jitai_core::sim::{default_profiles, generate_participants, weekdays};
use jitai_core::{GeoPoint, MicroSurveyResponse, TriggerConfig};

/// First `count` surveys of a synthetic participant with enough history.
pub fn survey_history(count: usize, seed: u64) -> Vec<MicroSurveyResponse> {
    let days: Vec<NaiveDate> = weekdays(NaiveDate::from_ymd_opt(2023, 3, 6).expect("date"), 20);
    let tz = TriggerConfig::default().timezone;
    generate_participants(8, &default_profiles(), &days, tz, seed)
        .expect("cohort generates")
        .into_iter()
        .map(|p| p.surveys)
        .find(|s| s.len() >= count)
        .map(|mut s| {
            s.truncate(count);
            s
        })
        .expect("some participant reaches the count")
}

/// Deterministic scatter of points around central Singapore.
pub fn scatter(n: usize) -> Vec<GeoPoint> {
    (0..n)
        .map(|i| {
            let a = i as f64 * 0.618_033_988_75;
            let r = 0.05 * ((i % 97) as f64 / 97.0);
            GeoPoint::new(1.35 + r * (a * std::f64::consts::TAU).sin(), 103.82 + r * (a * std::f64::consts::TAU).cos())
        })
        .collect()
}

/// Start of the benchmark clock.
pub fn epoch() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 3, 6, 1, 0, 0).unwrap()
}

pub fn minutes(n: i64) -> Duration {
    Duration::minutes(n)
}
