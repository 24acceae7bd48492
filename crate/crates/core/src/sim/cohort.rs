//! Synthetic participants: survey, sound and location generators.

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    GeoPoint, MicroSurveyResponse, NoisePreference, ParticipantId, SensorKind, SensorSample, SoundSource,
    ThermalPreference, Timestamp,
};
use crate::error::{Error, Result, ValidationError};
use crate::weather::EARTH_RADIUS_M;

/// Class probabilities, optionally overridden for hour ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mixture {
    /// In class order: cooler/quieter, no change, warmer/louder.
    pub base: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hourly: Vec<HourlyOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourlyOverride {
    pub from_hour: u32,
    /// Exclusive.
    pub to_hour: u32,
    pub probs: [f64; 3],
}

impl Mixture {
    pub fn constant(probs: [f64; 3]) -> Self {
        Self {
            base: probs,
            hourly: Vec::new(),
        }
    }

    /// First matching override wins.
    pub fn at_hour(&self, hour: u32) -> [f64; 3] {
        self.hourly
            .iter()
            .find(|o| (o.from_hour..o.to_hour).contains(&hour))
            .map_or(self.base, |o| o.probs)
    }

    fn sample(&self, hour: u32, rng: &mut impl Rng) -> usize {
        let p = self.at_hour(hour);
        let u: f64 = rng.gen();
        if u < p[0] {
            0
        } else if u < p[0] + p[1] {
            1
        } else {
            2
        }
    }

    fn violations(&self, field: &'static str, out: &mut Vec<ValidationError>) {
        let mut check = |p: &[f64; 3]| {
            if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                out.push(ValidationError::new(field, "probabilities must be non-negative and sum to 1"));
            }
        };
        check(&self.base);
        for o in &self.hourly {
            check(&o.probs);
        }
        if self.hourly.iter().any(|o| o.from_hour >= o.to_hour || o.to_hour > 24) {
            out.push(ValidationError::new(field, "override hours must satisfy from < to <= 24"));
        }
    }
}

/// Base level plus Gaussian noise and a 12:00–14:00 bump, clamped to
/// [30, 100] dBA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoundProfile {
    pub base_dba: f64,
    pub sd_dba: f64,
    #[serde(default)]
    pub lunch_bump_dba: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationTrace {
    /// `[lat, lon]` pairs visited in order across the day.
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub jitter_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    /// Expected surveys per weekday.
    pub survey_rate: f64,
    /// Relative survey intensity for each hour of the 09:00–19:00 window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<[f64; 10]>,
    pub thermal: Mixture,
    pub noise: Mixture,
    pub sound: SoundProfile,
    pub location: LocationTrace,
}

impl Profile {
    pub fn violations(&self) -> Vec<ValidationError> {
        let mut out = Vec::new();
        if !(self.survey_rate > 0.0 && self.survey_rate.is_finite()) {
            out.push(ValidationError::new("survey_rate", "must be positive"));
        }
        if let Some(a) = &self.activity {
            if a.iter().any(|w| !w.is_finite() || *w < 0.0) || a.iter().all(|w| *w == 0.0) {
                out.push(ValidationError::new("activity", "weights must be non-negative, not all zero"));
            }
        }
        self.thermal.violations("thermal", &mut out);
        self.noise.violations("noise", &mut out);
        if !(self.sound.sd_dba >= 0.0) || !self.sound.base_dba.is_finite() {
            out.push(ValidationError::new("sound", "base must be finite and sd non-negative"));
        }
        if self.location.waypoints.is_empty() {
            out.push(ValidationError::new("location", "at least one waypoint"));
        }
        if self
            .location
            .waypoints
            .iter()
            .any(|[lat, lon]| !(-90.0..=90.0).contains(lat) || !(-180.0..=180.0).contains(lon))
        {
            out.push(ValidationError::new("location", "waypoint out of range"));
        }
        if !(self.location.jitter_m >= 0.0) {
            out.push(ValidationError::new("location", "jitter must be non-negative"));
        }
        out
    }
}

const CAMPUS: [[f64; 2]; 3] = [[1.2966, 103.7764], [1.2976, 103.7730], [1.3005, 103.7710]];
const DOWNTOWN: [[f64; 2]; 2] = [[1.2840, 103.8510], [1.2790, 103.8540]];

/// A mixed cohort: two profiles with hour-dependent preferences and two
/// that almost never want a change.
pub fn default_profiles() -> Vec<Profile> {
    let campus = LocationTrace {
        waypoints: CAMPUS.to_vec(),
        jitter_m: 40.0,
    };
    let downtown = LocationTrace {
        waypoints: DOWNTOWN.to_vec(),
        jitter_m: 60.0,
    };
    vec![
        Profile {
            name: "heat_sensitive".into(),
            survey_rate: 5.0,
            activity: None,
            thermal: Mixture {
                base: [0.15, 0.8, 0.05],
                hourly: vec![HourlyOverride {
                    from_hour: 12,
                    to_hour: 17,
                    probs: [0.75, 0.23, 0.02],
                }],
            },
            noise: Mixture::constant([0.1, 0.85, 0.05]),
            sound: SoundProfile {
                base_dba: 62.0,
                sd_dba: 6.0,
                lunch_bump_dba: 6.0,
            },
            location: campus.clone(),
        },
        Profile {
            name: "indifferent".into(),
            survey_rate: 5.0,
            activity: None,
            thermal: Mixture::constant([0.03, 0.95, 0.02]),
            noise: Mixture::constant([0.03, 0.95, 0.02]),
            sound: SoundProfile {
                base_dba: 58.0,
                sd_dba: 5.0,
                lunch_bump_dba: 4.0,
            },
            location: downtown.clone(),
        },
        Profile {
            name: "noise_sensitive".into(),
            survey_rate: 5.5,
            activity: None,
            thermal: Mixture::constant([0.05, 0.9, 0.05]),
            noise: Mixture {
                base: [0.2, 0.75, 0.05],
                hourly: vec![HourlyOverride {
                    from_hour: 12,
                    to_hour: 14,
                    probs: [0.8, 0.2, 0.0],
                }],
            },
            sound: SoundProfile {
                base_dba: 66.0,
                sd_dba: 7.0,
                lunch_bump_dba: 8.0,
            },
            location: downtown,
        },
        Profile {
            name: "steady".into(),
            survey_rate: 4.5,
            activity: None,
            thermal: Mixture::constant([0.0, 1.0, 0.0]),
            noise: Mixture::constant([0.0, 1.0, 0.0]),
            sound: SoundProfile {
                base_dba: 55.0,
                sd_dba: 5.0,
                lunch_bump_dba: 3.0,
            },
            location: campus,
        },
    ]
}

/// The first `n` weekdays on or after `start`.
pub fn weekdays(start: NaiveDate, n: u32) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n as usize)
        .collect()
}

pub(crate) fn local_instant(tz: Tz, date: NaiveDate, hour: u32, minute: u32) -> Timestamp {
    let naive = date.and_hms_opt(hour, minute, 0).expect("valid wall time");
    tz.from_local_datetime(&naive)
        .earliest()
        .expect("wall time exists")
        .with_timezone(&Utc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParticipant {
    pub id: ParticipantId,
    pub profile: String,
    /// Ordered by submission time.
    pub surveys: Vec<MicroSurveyResponse>,
    pub sound: Vec<SensorSample>,
}

const WINDOW_START: u32 = 9;
const WINDOW_HOURS: u32 = 10;
const SOURCES: [SoundSource; 4] = [SoundSource::Traffic, SoundSource::Talking, SoundSource::Weather, SoundSource::Other];

pub fn participant_id(index: usize, n: usize) -> ParticipantId {
    let width = n.to_string().len().max(2);
    ParticipantId::new(format!("P{:0width$}", index + 1)).expect("non-empty id")
}

fn jittered(trace: &LocationTrace, hour: u32, rng: &mut ChaCha8Rng) -> GeoPoint {
    let n = trace.waypoints.len() as u32;
    let slot = ((hour.saturating_sub(WINDOW_START)) * n / WINDOW_HOURS).min(n - 1);
    let [lat, lon] = trace.waypoints[slot as usize];
    if trace.jitter_m == 0.0 {
        return GeoPoint::new(lat, lon);
    }
    let normal = Normal::new(0.0, trace.jitter_m).expect("finite jitter");
    let (dy, dx): (f64, f64) = (normal.sample(rng), normal.sample(rng));
    let dlat = (dy / EARTH_RADIUS_M).to_degrees();
    let dlon = (dx / (EARTH_RADIUS_M * lat.to_radians().cos())).to_degrees();
    GeoPoint::new(lat + dlat, lon + dlon)
}

/// Thinned Poisson arrivals over the 09:00–19:00 window of each day.
fn generate_surveys(
    id: &ParticipantId,
    profile: &Profile,
    days: &[NaiveDate],
    tz: Tz,
    rng: &mut ChaCha8Rng,
) -> Vec<MicroSurveyResponse> {
    let weights = profile.activity.unwrap_or([1.0; 10]);
    let max_w = weights.iter().copied().fold(0.0, f64::max);
    let mean_w = weights.iter().sum::<f64>() / weights.len() as f64;
    let per_minute = profile.survey_rate * max_w / mean_w / f64::from(WINDOW_HOURS * 60);
    let gap = Exp::new(per_minute).expect("positive rate");
    let mut out = Vec::new();
    for &day in days {
        let open = local_instant(tz, day, WINDOW_START, 0);
        let mut minute = 0.0;
        loop {
            minute += gap.sample(rng);
            if minute >= f64::from(WINDOW_HOURS * 60) {
                break;
            }
            let accept: f64 = rng.gen();
            let hour_slot = (minute / 60.0) as usize;
            if accept * max_w >= weights[hour_slot] {
                continue;
            }
            let ended_at = open + Duration::seconds((minute * 60.0) as i64);
            let hour = ended_at.with_timezone(&tz).hour();
            let duration = Duration::seconds(rng.gen_range(5..=20));
            let started_at = (ended_at - duration).max(open);
            let thermal = [
                ThermalPreference::PreferCooler,
                ThermalPreference::NoChange,
                ThermalPreference::PreferWarmer,
            ][profile.thermal.sample(hour, rng)];
            let noise = [
                NoisePreference::PreferQuieter,
                NoisePreference::NoChange,
                NoisePreference::PreferLouder,
            ][profile.noise.sample(hour, rng)];
            let sound_source = (noise != NoisePreference::NoChange).then(|| SOURCES[rng.gen_range(0..SOURCES.len())]);
            let at = jittered(&profile.location, hour, rng);
            out.push(MicroSurveyResponse {
                participant: id.clone(),
                started_at,
                ended_at,
                lat: at.lat,
                lon: at.lon,
                location_acquired_at: started_at,
                thermal,
                noise,
                sound_source,
            });
        }
    }
    out
}

/// One sample per half hour from 09:00 to 18:30, rounded to 0.1 dBA.
fn generate_sound(
    id: &ParticipantId,
    profile: &SoundProfile,
    days: &[NaiveDate],
    tz: Tz,
    rng: &mut ChaCha8Rng,
) -> Vec<SensorSample> {
    let normal = Normal::new(0.0, profile.sd_dba).expect("finite sd");
    let mut out = Vec::new();
    for &day in days {
        for slot in 0..(WINDOW_HOURS * 2) {
            let hour = WINDOW_START + slot / 2;
            let bump = if (12..14).contains(&hour) { profile.lunch_bump_dba } else { 0.0 };
            let level = (profile.base_dba + bump + normal.sample(rng)).clamp(30.0, 100.0);
            out.push(SensorSample {
                participant: id.clone(),
                kind: SensorKind::SoundLevel,
                value: (level * 10.0).round() / 10.0,
                observed_at: local_instant(tz, day, hour, (slot % 2) * 30),
            });
        }
    }
    out
}

/// Profiles are assigned round-robin. Each participant draws from its own
/// ChaCha streams, so adding participants never perturbs earlier ones.
pub fn generate_participants(
    n: usize,
    profiles: &[Profile],
    days: &[NaiveDate],
    tz: Tz,
    seed: u64,
) -> Result<Vec<SyntheticParticipant>> {
    if n > 0 && profiles.is_empty() {
        return Err(Error::Validation(vec![ValidationError::new("profiles", "at least one profile")]));
    }
    Ok((0..n)
        .map(|i| {
            let id = participant_id(i, n);
            let profile = &profiles[i % profiles.len()];
            let mut survey_rng = ChaCha8Rng::seed_from_u64(seed);
            survey_rng.set_stream(2 * i as u64);
            let mut sound_rng = ChaCha8Rng::seed_from_u64(seed);
            sound_rng.set_stream(2 * i as u64 + 1);
            SyntheticParticipant {
                surveys: generate_surveys(&id, profile, days, tz, &mut survey_rng),
                sound: generate_sound(&id, &profile.sound, days, tz, &mut sound_rng),
                profile: profile.name.clone(),
                id,
            }
        })
        .collect())
}
