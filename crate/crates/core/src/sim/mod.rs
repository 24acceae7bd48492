//! Deterministic deployment replay against synthetic cohorts.
//!
//! A [`CohortSpec`] fixes everything: participants, their generators, the
//! weather scenario and the engine configuration. [`run_phase`] preloads
//! the generated streams into a fresh store and advances a simulated clock
//! through the daily window of every weekday, stepping the real engine at
//! each weather poll. Nothing reads the wall clock.

pub mod cohort;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::dispatch::{MockProvider, PushMessage};
use crate::domain::{
    DeliveryStatus, Mechanism, NotificationRecord, ParticipantId, Phase, PhaseConfig, Record, SuppressionReason,
    Timestamp, TriggerConfig,
};
use crate::error::{Error, Result, ValidationError};
use crate::personalize::TrainingConfig;
use crate::store::{SeriesName, Series, StreamKey, Store};
use crate::triggers::Engine;
use crate::weather::{write_fixture_csv, FixtureProvider, FixtureRow};

pub use cohort::{
    default_profiles, generate_participants, weekdays, HourlyOverride, LocationTrace, Mixture, Profile,
    SoundProfile, SyntheticParticipant,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// 33 °C all day.
    AlwaysHot,
    /// 26 °C all day.
    NeverHot,
    /// `30 + 3 sin(2π(h − 11)/24)`: crosses 30 °C upward at 11:00.
    Diurnal,
}

impl Scenario {
    pub fn temperature(self, local_hour: f64) -> f64 {
        match self {
            Scenario::AlwaysHot => 33.0,
            Scenario::NeverHot => 26.0,
            Scenario::Diurnal => {
                let v = 30.0 + 3.0 * (2.0 * std::f64::consts::PI * (local_hour - 11.0) / 24.0).sin();
                (v * 100.0).round() / 100.0
            }
        }
    }
}

/// Exactly one of a built-in scenario or a fixture CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
}

impl Default for WeatherSpec {
    fn default() -> Self {
        Self {
            scenario: Some(Scenario::Diurnal),
            fixture: None,
        }
    }
}

/// Synthetic stations the built-in scenarios report from.
pub const SCENARIO_STATIONS: [(&str, f64, f64); 3] = [
    ("S1", 1.2966, 103.7764),
    ("S2", 1.2840, 103.8510),
    ("S3", 1.3521, 103.8198),
];

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 3, 6).expect("valid date")
}

fn default_switch() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n_participants: usize,
    pub phase: Phase,
    pub duration_weekdays: u32,
    pub rng_seed: u64,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_switch")]
    pub personalization_switch_count: usize,
    #[serde(default)]
    pub threshold_start_count: usize,
    #[serde(default)]
    pub weather: WeatherSpec,
    #[serde(default)]
    pub trigger: TriggerConfig,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<Profile>,
}

impl CohortSpec {
    pub fn new(n_participants: usize, phase: Phase, duration_weekdays: u32, rng_seed: u64) -> Self {
        Self {
            n_participants,
            phase,
            duration_weekdays,
            rng_seed,
            start_date: default_start(),
            personalization_switch_count: default_switch(),
            threshold_start_count: 0,
            weather: WeatherSpec::default(),
            trigger: TriggerConfig::default(),
            profiles: default_profiles(),
        }
    }

    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.weather = WeatherSpec {
            scenario: Some(scenario),
            fixture: None,
        };
        self
    }

    /// Parses TOML; a relative fixture path resolves against `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut spec: CohortSpec = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if let (Some(base), Some(fixture)) = (base_dir, spec.weather.fixture.as_mut()) {
            if fixture.is_relative() {
                *fixture = base.join(&*fixture);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, path.parent())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn phase_config(&self) -> PhaseConfig {
        PhaseConfig {
            phase: self.phase,
            personalization_switch_count: self.personalization_switch_count,
            survey_quota: PhaseConfig::default().survey_quota.max(self.personalization_switch_count),
            threshold_start_count: self.threshold_start_count,
        }
    }

    pub fn participant_ids(&self) -> Vec<ParticipantId> {
        (0..self.n_participants)
            .map(|i| cohort::participant_id(i, self.n_participants))
            .collect()
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        weekdays(self.start_date, self.duration_weekdays)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.duration_weekdays < 1 {
            errors.push(ValidationError::new("duration_weekdays", "must be at least 1"));
        }
        if self.n_participants > 0 && self.profiles.is_empty() {
            errors.push(ValidationError::new("profiles", "at least one profile"));
        }
        for p in &self.profiles {
            errors.extend(p.violations());
        }
        if self.weather.scenario.is_some() == self.weather.fixture.is_some() {
            errors.push(ValidationError::new("weather", "set exactly one of scenario or fixture"));
        }
        if self.personalization_switch_count == 0 {
            errors.push(ValidationError::new("personalization_switch_count", "must be positive"));
        }
        if let Err(Error::Validation(e)) = self.trigger.validate() {
            errors.extend(e);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Scenario readings every poll interval from an hour before the window
    /// opens to an hour after it closes, or the fixture file's rows.
    pub fn weather_rows(&self) -> Result<Vec<FixtureRow>> {
        if let Some(path) = &self.weather.fixture {
            let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Parse(format!("{other:?}")),
            })?;
            return Ok(rdr.deserialize().collect::<std::result::Result<Vec<FixtureRow>, _>>()?);
        }
        let scenario = self.weather.scenario.unwrap_or(Scenario::Diurnal);
        let tz = self.trigger.timezone;
        let step = self.trigger.weather_poll_minutes;
        let first = self.trigger.window_start_hour.saturating_sub(1) * 60;
        let last = (self.trigger.window_end_hour + 1).min(24) * 60;
        let mut rows = Vec::new();
        for (id, lat, lon) in SCENARIO_STATIONS {
            for day in self.days() {
                for minute in (first..last).step_by(step as usize) {
                    rows.push(FixtureRow {
                        station_id: id.to_string(),
                        lat,
                        lon,
                        timestamp: cohort::local_instant(tz, day, minute / 60, minute % 60),
                        air_temperature_c: scenario.temperature(f64::from(minute) / 60.0),
                    });
                }
            }
        }
        Ok(rows)
    }
}

pub struct SimRun {
    pub spec: CohortSpec,
    pub participants: Vec<ParticipantId>,
    pub store: Store,
    /// Every decision in tick order.
    pub notifications: Vec<NotificationRecord>,
    pub outbox: Vec<PushMessage>,
    /// Submission time of each switched participant's last training survey.
    pub switched_at: BTreeMap<ParticipantId, Timestamp>,
    pub weather_rows: Vec<FixtureRow>,
}

/// Generates the cohort and replays the whole deployment.
pub fn run_phase(spec: &CohortSpec) -> Result<SimRun> {
    spec.validate()?;
    let trigger = spec.trigger.clone();
    let days = spec.days();
    let weather_rows = spec.weather_rows()?;
    let provider = FixtureProvider::from_rows(weather_rows.clone())?;

    let cohort = generate_participants(spec.n_participants, &spec.profiles, &days, trigger.timezone, spec.rng_seed)?;
    let store = Store::new();
    for p in &cohort {
        store.append_batch(
            &StreamKey::new(p.id.clone(), Series::Surveys),
            p.surveys.iter().cloned().map(Record::Survey).collect(),
        )?;
        store.append_batch(
            &StreamKey::new(p.id.clone(), Series::Sensor(crate::domain::SensorKind::SoundLevel)),
            p.sound.iter().cloned().map(Record::Sensor).collect(),
        )?;
    }
    let participants: Vec<ParticipantId> = cohort.iter().map(|p| p.id.clone()).collect();

    let training = TrainingConfig {
        seed: spec.rng_seed,
        ..TrainingConfig::default()
    };
    let mut engine =
        Engine::new(&store, MockProvider::new(), trigger.clone(), spec.phase_config()).with_training(training);
    let mut notifications = Vec::new();
    let interval = trigger.poll_interval();
    for day in &days {
        let open = cohort::local_instant(trigger.timezone, *day, trigger.window_start_hour, 0);
        let close = cohort::local_instant(trigger.timezone, *day, trigger.window_end_hour, 0);
        let mut t = open;
        while t <= close {
            notifications.extend(engine.step(&provider, provider.registry(), &participants, t)?);
            t += interval;
        }
    }
    let switched_at = participants
        .iter()
        .filter_map(|p| engine.models(p).map(|m| (p.clone(), m.switched_at)))
        .collect();
    let outbox = engine.provider().outbox();
    drop(engine);
    Ok(SimRun {
        spec: spec.clone(),
        participants,
        store,
        notifications,
        outbox,
        switched_at,
        weather_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub id_participant: ParticipantId,
    pub threshold_sent: u32,
    pub personalized_sent: u32,
    pub suppressed_outside_window: u32,
    pub suppressed_weekend: u32,
    pub suppressed_budget_exhausted: u32,
    pub suppressed_dispatch_error: u32,
}

impl SummaryRow {
    fn empty(id: ParticipantId) -> Self {
        Self {
            id_participant: id,
            threshold_sent: 0,
            personalized_sent: 0,
            suppressed_outside_window: 0,
            suppressed_weekend: 0,
            suppressed_budget_exhausted: 0,
            suppressed_dispatch_error: 0,
        }
    }

    pub fn total(&self) -> u32 {
        self.threshold_sent
            + self.personalized_sent
            + self.suppressed_outside_window
            + self.suppressed_weekend
            + self.suppressed_budget_exhausted
            + self.suppressed_dispatch_error
    }
}

/// Per-participant counts; every record lands in exactly one column.
/// `participants` adds all-zero rows for people with no records.
pub fn summarize(participants: &[ParticipantId], log: &[NotificationRecord]) -> Vec<SummaryRow> {
    let mut rows: BTreeMap<ParticipantId, SummaryRow> = participants
        .iter()
        .map(|p| (p.clone(), SummaryRow::empty(p.clone())))
        .collect();
    for rec in log {
        let row = rows
            .entry(rec.event.participant.clone())
            .or_insert_with(|| SummaryRow::empty(rec.event.participant.clone()));
        let cell = match (rec.delivery_status, rec.event.mechanism) {
            (DeliveryStatus::Sent, Mechanism::Threshold) => &mut row.threshold_sent,
            (DeliveryStatus::Sent, Mechanism::Personalized) => &mut row.personalized_sent,
            (DeliveryStatus::Suppressed(SuppressionReason::OutsideWindow), _) => &mut row.suppressed_outside_window,
            (DeliveryStatus::Suppressed(SuppressionReason::Weekend), _) => &mut row.suppressed_weekend,
            (DeliveryStatus::Suppressed(SuppressionReason::BudgetExhausted), _) => &mut row.suppressed_budget_exhausted,
            (DeliveryStatus::Suppressed(SuppressionReason::DispatchError), _) => &mut row.suppressed_dispatch_error,
        };
        *cell += 1;
    }
    rows.into_values().collect()
}

pub fn write_summary_csv<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record([
            "id_participant",
            "threshold_sent",
            "personalized_sent",
            "suppressed_outside_window",
            "suppressed_weekend",
            "suppressed_budget_exhausted",
            "suppressed_dispatch_error",
        ])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?)
}

pub const RUN_FILES: [&str; 8] = [
    "config.toml",
    "weather_fixture.csv",
    "surveys.csv",
    "sensor.csv",
    "notifications.csv",
    "summary.csv",
    "outbox.jsonl",
    "switches.csv",
];

/// Writes the resolved config, inputs and outputs of a run.
pub fn write_run_dir(run: &SimRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    // The echoed config points at the copied fixture so the directory re-runs on its own.
    let mut spec = run.spec.clone();
    if spec.weather.fixture.is_some() {
        spec.weather.fixture = Some(PathBuf::from("weather_fixture.csv"));
    }
    std::fs::write(dir.join("config.toml"), spec.to_toml()?)?;
    write_fixture_csv(
        std::io::BufWriter::new(std::fs::File::create(dir.join("weather_fixture.csv"))?),
        &run.weather_rows,
    )?;
    run.store.export_csv(
        &[SeriesName::Survey, SeriesName::Sensor, SeriesName::Notification],
        None,
        Timestamp::MIN_UTC,
        Timestamp::MAX_UTC,
        dir,
    )?;
    write_summary_csv(
        std::fs::File::create(dir.join("summary.csv"))?,
        &summarize(&run.participants, &run.notifications),
    )?;
    let mut outbox = std::io::BufWriter::new(std::fs::File::create(dir.join("outbox.jsonl"))?);
    for msg in &run.outbox {
        serde_json::to_writer(&mut outbox, msg)?;
        outbox.write_all(b"\n")?;
    }
    outbox.flush()?;
    let mut switches = csv::Writer::from_path(dir.join("switches.csv"))?;
    switches.write_record(["id_participant", "switched_at"])?;
    for (p, t) in &run.switched_at {
        switches.write_record([p.as_str(), &crate::store::format_ts(*t)])?;
    }
    switches.flush()?;
    Ok(())
}

/// Length of a simulated day's tick schedule, both ends inclusive.
pub fn ticks_per_day(trigger: &TriggerConfig) -> usize {
    let span = Duration::hours(i64::from(trigger.window_end_hour - trigger.window_start_hour));
    (span.num_minutes() / i64::from(trigger.weather_poll_minutes)) as usize + 1
}
