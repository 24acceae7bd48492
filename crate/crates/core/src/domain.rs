//! Vocabulary types shared across the engine.
//!
//! Every tunable constant of the intervention protocol (thresholds, daily
//! budget, send window, poll interval, personalization switch) lives in
//! [`TriggerConfig`] or [`PhaseConfig`]; no other module hard-codes them.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};

pub type Timestamp = DateTime<Utc>;

/// Opaque, non-empty participant token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ParticipantId(String);

impl ParticipantId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Validation(vec![ValidationError::new(
                "participant",
                "participant id must be non-empty",
            )]));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ParticipantId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ParticipantId> for String {
    fn from(value: ParticipantId) -> Self {
        value.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceKind {
    Thermal,
    Noise,
}

impl PreferenceKind {
    pub const ALL: [PreferenceKind; 2] = [PreferenceKind::Thermal, PreferenceKind::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            PreferenceKind::Thermal => "thermal",
            PreferenceKind::Noise => "noise",
        }
    }

    /// Closed label set in fixed class order.
    pub fn classes(self) -> [PreferenceLabel; 3] {
        match self {
            PreferenceKind::Thermal => [
                PreferenceLabel::Thermal(ThermalPreference::PreferCooler),
                PreferenceLabel::Thermal(ThermalPreference::NoChange),
                PreferenceLabel::Thermal(ThermalPreference::PreferWarmer),
            ],
            PreferenceKind::Noise => [
                PreferenceLabel::Noise(NoisePreference::PreferQuieter),
                PreferenceLabel::Noise(NoisePreference::NoChange),
                PreferenceLabel::Noise(NoisePreference::PreferLouder),
            ],
        }
    }

    pub fn class_count(self) -> usize {
        3
    }

    /// Label a threshold exceedance of this kind asks the participant to act on.
    pub fn threshold_target(self) -> PreferenceLabel {
        match self {
            PreferenceKind::Thermal => PreferenceLabel::Thermal(ThermalPreference::PreferCooler),
            PreferenceKind::Noise => PreferenceLabel::Noise(NoisePreference::PreferQuieter),
        }
    }
}

impl fmt::Display for PreferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PreferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thermal" => Ok(PreferenceKind::Thermal),
            "noise" => Ok(PreferenceKind::Noise),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalPreference {
    PreferCooler,
    NoChange,
    PreferWarmer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreference {
    PreferQuieter,
    NoChange,
    PreferLouder,
}

/// A preference value tagged with the label set it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PreferenceLabel {
    Thermal(ThermalPreference),
    Noise(NoisePreference),
}

impl PreferenceLabel {
    pub fn kind(self) -> PreferenceKind {
        match self {
            PreferenceLabel::Thermal(_) => PreferenceKind::Thermal,
            PreferenceLabel::Noise(_) => PreferenceKind::Noise,
        }
    }

    pub fn is_no_change(self) -> bool {
        matches!(
            self,
            PreferenceLabel::Thermal(ThermalPreference::NoChange)
                | PreferenceLabel::Noise(NoisePreference::NoChange)
        )
    }

    /// Position in [`PreferenceKind::classes`].
    pub fn class_index(self) -> usize {
        match self {
            PreferenceLabel::Thermal(ThermalPreference::PreferCooler)
            | PreferenceLabel::Noise(NoisePreference::PreferQuieter) => 0,
            PreferenceLabel::Thermal(ThermalPreference::NoChange)
            | PreferenceLabel::Noise(NoisePreference::NoChange) => 1,
            PreferenceLabel::Thermal(ThermalPreference::PreferWarmer)
            | PreferenceLabel::Noise(NoisePreference::PreferLouder) => 2,
        }
    }

    pub fn from_class(kind: PreferenceKind, index: usize) -> Option<Self> {
        kind.classes().get(index).copied()
    }

    /// Value name without the kind prefix, e.g. `prefer_cooler`.
    pub fn value_str(self) -> &'static str {
        match self {
            PreferenceLabel::Thermal(ThermalPreference::PreferCooler) => "prefer_cooler",
            PreferenceLabel::Thermal(ThermalPreference::PreferWarmer) => "prefer_warmer",
            PreferenceLabel::Noise(NoisePreference::PreferQuieter) => "prefer_quieter",
            PreferenceLabel::Noise(NoisePreference::PreferLouder) => "prefer_louder",
            PreferenceLabel::Thermal(ThermalPreference::NoChange)
            | PreferenceLabel::Noise(NoisePreference::NoChange) => "no_change",
        }
    }

    /// Parses a value name within a kind's closed set. Unknown names are errors.
    pub fn parse(kind: PreferenceKind, value: &str) -> Result<Self> {
        kind.classes()
            .into_iter()
            .find(|label| label.value_str() == value)
            .ok_or_else(|| Error::UnknownLabel(format!("{kind}.{value}")))
    }
}

impl fmt::Display for PreferenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.kind(), self.value_str())
    }
}

impl FromStr for PreferenceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once('.')
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))?;
        Self::parse(kind.parse()?, value)
    }
}

macro_rules! serde_via_str {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_str!(PreferenceLabel);
serde_via_str!(DeliveryStatus);

impl From<ThermalPreference> for PreferenceLabel {
    fn from(value: ThermalPreference) -> Self {
        PreferenceLabel::Thermal(value)
    }
}

impl From<NoisePreference> for PreferenceLabel {
    fn from(value: NoisePreference) -> Self {
        PreferenceLabel::Noise(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoundSource {
    Traffic,
    Talking,
    Weather,
    Other,
}

impl SoundSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SoundSource::Traffic => "traffic",
            SoundSource::Talking => "talking",
            SoundSource::Weather => "weather",
            SoundSource::Other => "other",
        }
    }
}

impl FromStr for SoundSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traffic" => Ok(SoundSource::Traffic),
            "talking" => Ok(SoundSource::Talking),
            "weather" => Ok(SoundSource::Weather),
            "other" => Ok(SoundSource::Other),
            other => Err(Error::UnknownLabel(format!("sound_source.{other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// One smartwatch micro-survey submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroSurveyResponse {
    pub participant: ParticipantId,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub lat: f64,
    pub lon: f64,
    pub location_acquired_at: Timestamp,
    pub thermal: ThermalPreference,
    pub noise: NoisePreference,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sound_source: Option<SoundSource>,
}

impl MicroSurveyResponse {
    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    pub fn label(&self, kind: PreferenceKind) -> PreferenceLabel {
        match kind {
            PreferenceKind::Thermal => self.thermal.into(),
            PreferenceKind::Noise => self.noise.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    /// 30-minute equivalent continuous level, dBA.
    SoundLevel,
    HeartRate,
    RestingHeartRate,
    StepCount,
    /// Meters.
    WalkingDistance,
    /// Minutes.
    StandTime,
    /// Fraction in [0, 1].
    OxygenSaturation,
}

impl SensorKind {
    pub const ALL: [SensorKind; 7] = [
        SensorKind::SoundLevel,
        SensorKind::HeartRate,
        SensorKind::RestingHeartRate,
        SensorKind::StepCount,
        SensorKind::WalkingDistance,
        SensorKind::StandTime,
        SensorKind::OxygenSaturation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::SoundLevel => "sound_level",
            SensorKind::HeartRate => "heart_rate",
            SensorKind::RestingHeartRate => "resting_heart_rate",
            SensorKind::StepCount => "step_count",
            SensorKind::WalkingDistance => "walking_distance",
            SensorKind::StandTime => "stand_time",
            SensorKind::OxygenSaturation => "oxygen_saturation",
        }
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(format!("sensor_kind.{s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub participant: ParticipantId,
    pub kind: SensorKind,
    pub value: f64,
    pub observed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherObservation {
    pub station_id: String,
    pub station_lat: f64,
    pub station_lon: f64,
    pub air_temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rainfall: Option<f64>,
    pub observed_at: Timestamp,
}

/// Threshold and scheduling parameters shared by both trigger mechanisms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub temp_threshold_c: f64,
    pub noise_threshold_dba: f64,
    pub daily_budget: u32,
    pub window_start_hour: u32,
    pub window_end_hour: u32,
    pub weekdays_only: bool,
    pub weather_poll_minutes: u32,
    pub timezone: Tz,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            temp_threshold_c: 30.0,
            noise_threshold_dba: 70.0,
            daily_budget: 4,
            window_start_hour: 9,
            window_end_hour: 19,
            weekdays_only: true,
            weather_poll_minutes: 5,
            timezone: chrono_tz::Asia::Singapore,
        }
    }
}

impl TriggerConfig {
    pub fn poll_interval(&self) -> Duration {
        Duration::minutes(i64::from(self.weather_poll_minutes))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.window_start_hour >= self.window_end_hour {
            errors.push(ValidationError::new(
                "window_start_hour",
                "window start must precede window end",
            ));
        }
        if self.window_end_hour > 24 {
            errors.push(ValidationError::new("window_end_hour", "hour must be <= 24"));
        }
        if self.weather_poll_minutes == 0 {
            errors.push(ValidationError::new(
                "weather_poll_minutes",
                "poll interval must be positive",
            ));
        }
        if !self.temp_threshold_c.is_finite() || !self.noise_threshold_dba.is_finite() {
            errors.push(ValidationError::new("threshold", "thresholds must be finite"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phase1,
    Phase2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub phase: Phase,
    pub personalization_switch_count: usize,
    pub survey_quota: usize,
    /// Surveys a participant must have submitted before threshold messages
    /// start. 0 means from the first day.
    pub threshold_start_count: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            phase: Phase::Phase2,
            personalization_switch_count: 50,
            survey_quota: 100,
            threshold_start_count: 0,
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.personalization_switch_count == 0
            || self.personalization_switch_count > self.survey_quota
        {
            return Err(Error::Validation(vec![ValidationError::new(
                "personalization_switch_count",
                "must satisfy 0 < switch count <= survey quota",
            )]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Threshold,
    Personalized,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Threshold => "threshold",
            Mechanism::Personalized => "personalized",
        }
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Mechanism::Threshold),
            "personalized" => Ok(Mechanism::Personalized),
            other => Err(Error::UnknownLabel(format!("mechanism.{other}"))),
        }
    }
}

/// What made a trigger fire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Cause {
    Temperature(f64),
    SoundLevel(f64),
    Probability(f64),
}

impl Cause {
    pub fn value(self) -> f64 {
        match self {
            Cause::Temperature(v) | Cause::SoundLevel(v) | Cause::Probability(v) => v,
        }
    }

    pub fn type_str(self) -> &'static str {
        match self {
            Cause::Temperature(_) => "temperature",
            Cause::SoundLevel(_) => "sound_level",
            Cause::Probability(_) => "probability",
        }
    }

    pub fn from_parts(kind: &str, value: f64) -> Result<Self> {
        match kind {
            "temperature" => Ok(Cause::Temperature(value)),
            "sound_level" => Ok(Cause::SoundLevel(value)),
            "probability" => Ok(Cause::Probability(value)),
            other => Err(Error::UnknownLabel(format!("cause.{other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub participant: ParticipantId,
    pub kind: PreferenceKind,
    pub mechanism: Mechanism,
    pub target_label: PreferenceLabel,
    pub fired_at: Timestamp,
    pub cause: Cause,
    pub location: Option<GeoPoint>,
}

impl TriggerEvent {
    pub fn validate(&self) -> Vec<ValidationError> {
        let mut errors = Vec::new();
        if self.target_label.kind() != self.kind {
            errors.push(ValidationError::new(
                "target_label",
                "label kind differs from event kind",
            ));
        }
        match (self.mechanism, self.cause) {
            (Mechanism::Personalized, Cause::Probability(p)) => {
                if !(p > 0.0 && p <= 1.0) {
                    errors.push(ValidationError::new("cause", "probability outside (0, 1]"));
                }
                if self.target_label.is_no_change() {
                    errors.push(ValidationError::new(
                        "target_label",
                        "personalized event cannot target no_change",
                    ));
                }
            }
            (Mechanism::Personalized, _) => {
                errors.push(ValidationError::new(
                    "cause",
                    "personalized event must carry a probability",
                ));
            }
            (Mechanism::Threshold, Cause::Temperature(_)) if self.kind == PreferenceKind::Thermal => {}
            (Mechanism::Threshold, Cause::SoundLevel(_)) if self.kind == PreferenceKind::Noise => {}
            (Mechanism::Threshold, _) => {
                errors.push(ValidationError::new(
                    "cause",
                    "threshold event must carry the measured value of its kind",
                ));
            }
        }
        errors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionReason {
    OutsideWindow,
    Weekend,
    BudgetExhausted,
    DispatchError,
}

impl SuppressionReason {
    pub const ALL: [SuppressionReason; 4] = [
        SuppressionReason::OutsideWindow,
        SuppressionReason::Weekend,
        SuppressionReason::BudgetExhausted,
        SuppressionReason::DispatchError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuppressionReason::OutsideWindow => "outside_window",
            SuppressionReason::Weekend => "weekend",
            SuppressionReason::BudgetExhausted => "budget_exhausted",
            SuppressionReason::DispatchError => "dispatch_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeliveryStatus {
    Sent,
    Suppressed(SuppressionReason),
}

impl DeliveryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DeliveryStatus::Sent => "sent",
            DeliveryStatus::Suppressed(reason) => reason.as_str(),
        }
    }

    pub fn is_sent(self) -> bool {
        matches!(self, DeliveryStatus::Sent)
    }
}

impl fmt::Display for DeliveryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeliveryStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "sent" {
            return Ok(DeliveryStatus::Sent);
        }
        SuppressionReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .map(DeliveryStatus::Suppressed)
            .ok_or_else(|| Error::UnknownLabel(format!("delivery_status.{s}")))
    }
}

/// A trigger decision after admission, sent or suppressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationRecord {
    #[serde(flatten)]
    pub event: TriggerEvent,
    pub payload_text: String,
    pub delivery_status: DeliveryStatus,
    /// Position among the day's sent messages; `None` for suppressed records.
    pub sequence_in_day: Option<u32>,
}

/// Any record the store can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Survey(MicroSurveyResponse),
    Sensor(SensorSample),
    Weather(WeatherObservation),
    Notification(NotificationRecord),
}

impl Record {
    /// Ordering timestamp within a stream. Surveys order by submission time.
    pub fn timestamp(&self) -> Timestamp {
        match self {
            Record::Survey(s) => s.ended_at,
            Record::Sensor(s) => s.observed_at,
            Record::Weather(w) => w.observed_at,
            Record::Notification(n) => n.event.fired_at,
        }
    }

    pub fn series_name(&self) -> &'static str {
        match self {
            Record::Survey(_) => "survey",
            Record::Sensor(_) => "sensor",
            Record::Weather(_) => "weather",
            Record::Notification(_) => "notification",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let errors = match self {
            Record::Survey(s) => s.violations(),
            Record::Sensor(s) => s.violations(),
            Record::Weather(w) => w.violations(),
            Record::Notification(n) => n.event.validate(),
        };
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

/// Collects every violated invariant of a record.
pub trait Validate {
    fn violations(&self) -> Vec<ValidationError>;

    fn validate(&self) -> std::result::Result<(), Vec<ValidationError>> {
        let errors = self.violations();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

fn check_lat_lon(errors: &mut Vec<ValidationError>, lat: f64, lon: f64) {
    if !(-90.0..=90.0).contains(&lat) {
        errors.push(ValidationError::new("lat", "lat out of range"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        errors.push(ValidationError::new("lon", "lon out of range"));
    }
}

impl Validate for MicroSurveyResponse {
    fn violations(&self) -> Vec<ValidationError> {
        let mut errors = Vec::new();
        if self.started_at > self.ended_at {
            errors.push(ValidationError::new("started_at", "started_at after ended_at"));
        }
        check_lat_lon(&mut errors, self.lat, self.lon);
        if self.sound_source.is_some() && self.noise == NoisePreference::NoChange {
            errors.push(ValidationError::new(
                "sound_source",
                "source without distraction",
            ));
        }
        errors
    }
}

impl Validate for SensorSample {
    fn violations(&self) -> Vec<ValidationError> {
        let v = self.value;
        if !v.is_finite() {
            return vec![ValidationError::new("value", "value must be finite")];
        }
        let ok = match self.kind {
            SensorKind::SoundLevel => (0.0..=140.0).contains(&v),
            SensorKind::HeartRate | SensorKind::RestingHeartRate => v > 20.0 && v < 250.0,
            SensorKind::OxygenSaturation => (0.0..=1.0).contains(&v),
            SensorKind::StepCount | SensorKind::WalkingDistance | SensorKind::StandTime => v >= 0.0,
        };
        if ok {
            Vec::new()
        } else {
            vec![ValidationError::new(
                "value",
                format!("{} value {v} out of range", self.kind.as_str()),
            )]
        }
    }
}

impl Validate for WeatherObservation {
    fn violations(&self) -> Vec<ValidationError> {
        let mut errors = Vec::new();
        if self.station_id.is_empty() {
            errors.push(ValidationError::new("station_id", "station id must be non-empty"));
        }
        check_lat_lon(&mut errors, self.station_lat, self.station_lon);
        let t = self.air_temperature;
        if !(t > -10.0 && t < 60.0) {
            errors.push(ValidationError::new(
                "air_temperature",
                "air temperature outside sanity band",
            ));
        }
        if let Some(rain) = self.rainfall {
            if !(rain >= 0.0) {
                errors.push(ValidationError::new("rainfall", "rainfall must be >= 0"));
            }
        }
        errors
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn pid() -> ParticipantId {
        ParticipantId::new("P001").unwrap()
    }

    fn survey() -> MicroSurveyResponse {
        let t = Utc.with_ymd_and_hms(2023, 3, 6, 2, 0, 0).unwrap();
        MicroSurveyResponse {
            participant: pid(),
            started_at: t,
            ended_at: t + Duration::seconds(12),
            lat: 1.2966,
            lon: 103.7764,
            location_acquired_at: t,
            thermal: ThermalPreference::NoChange,
            noise: NoisePreference::NoChange,
            sound_source: None,
        }
    }

    #[test]
    fn lat_out_of_range() {
        let mut s = survey();
        s.lat = 95.0;
        let errors = s.validate().unwrap_err();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].field, "lat");
        assert_eq!(errors[0].rule, "lat out of range");
    }

    #[test]
    fn sound_at_threshold_is_valid() {
        let sample = SensorSample {
            participant: pid(),
            kind: SensorKind::SoundLevel,
            value: 70.0,
            observed_at: Utc.with_ymd_and_hms(2023, 3, 6, 2, 0, 0).unwrap(),
        };
        assert!(sample.validate().is_ok());
    }

    #[test]
    fn source_requires_noise_distraction() {
        // Every (noise value, source) combination: the cross-field rule
        // fires exactly when a source is given with no_change.
        let sources = [
            None,
            Some(SoundSource::Traffic),
            Some(SoundSource::Talking),
            Some(SoundSource::Weather),
            Some(SoundSource::Other),
        ];
        let noises = [
            NoisePreference::PreferQuieter,
            NoisePreference::NoChange,
            NoisePreference::PreferLouder,
        ];
        for noise in noises {
            for source in sources {
                let mut s = survey();
                s.noise = noise;
                s.sound_source = source;
                let expect_error = source.is_some() && noise == NoisePreference::NoChange;
                let errors = s.violations();
                assert_eq!(
                    errors.iter().any(|e| e.rule == "source without distraction"),
                    expect_error,
                    "{noise:?} {source:?}"
                );
            }
        }
    }

    #[test]
    fn validation_collects_every_violation() {
        let mut s = survey();
        s.lat = -91.0;
        s.lon = 181.0;
        s.started_at = s.ended_at + Duration::seconds(1);
        assert_eq!(s.violations().len(), 3);
    }

    #[test]
    fn sensor_ranges() {
        let mk = |kind, value| SensorSample {
            participant: pid(),
            kind,
            value,
            observed_at: Utc.with_ymd_and_hms(2023, 3, 6, 2, 0, 0).unwrap(),
        };
        assert!(mk(SensorKind::SoundLevel, 140.1).validate().is_err());
        assert!(mk(SensorKind::HeartRate, 20.0).validate().is_err());
        assert!(mk(SensorKind::HeartRate, 72.0).validate().is_ok());
        assert!(mk(SensorKind::OxygenSaturation, 1.2).validate().is_err());
        assert!(mk(SensorKind::StepCount, f64::NAN).validate().is_err());
    }

    #[test]
    fn weather_sanity_band() {
        let obs = WeatherObservation {
            station_id: "S50".into(),
            station_lat: 1.33,
            station_lon: 103.77,
            air_temperature: 60.0,
            rainfall: None,
            observed_at: Utc.with_ymd_and_hms(2023, 3, 6, 2, 0, 0).unwrap(),
        };
        assert!(obs.validate().is_err());
    }

    #[test]
    fn label_sets_are_closed() {
        assert!(PreferenceLabel::parse(PreferenceKind::Thermal, "prefer_quieter").is_err());
        assert!(PreferenceLabel::parse(PreferenceKind::Noise, "maybe").is_err());
        assert!("thermal.hot".parse::<PreferenceLabel>().is_err());
        for kind in PreferenceKind::ALL {
            for (i, label) in kind.classes().into_iter().enumerate() {
                assert_eq!(label.class_index(), i);
                assert_eq!(label.to_string().parse::<PreferenceLabel>().unwrap(), label);
            }
            assert!(kind.classes()[1].is_no_change());
        }
    }

    #[test]
    fn empty_participant_rejected() {
        assert!(ParticipantId::new("  ").is_err());
        assert!(serde_json::from_str::<ParticipantId>("\"\"").is_err());
    }

    #[test]
    fn default_config_values() {
        let cfg = TriggerConfig::default();
        assert_eq!(cfg.temp_threshold_c, 30.0);
        assert_eq!(cfg.noise_threshold_dba, 70.0);
        assert_eq!(cfg.daily_budget, 4);
        assert_eq!((cfg.window_start_hour, cfg.window_end_hour), (9, 19));
        assert_eq!(cfg.poll_interval(), Duration::minutes(5));
        assert!(cfg.validate().is_ok());
        let phase = PhaseConfig::default();
        assert_eq!(phase.personalization_switch_count, 50);
        assert!(phase.validate().is_ok());
        let bad = PhaseConfig {
            personalization_switch_count: 101,
            ..PhaseConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn personalized_event_rules() {
        let event = TriggerEvent {
            participant: pid(),
            kind: PreferenceKind::Thermal,
            mechanism: Mechanism::Personalized,
            target_label: ThermalPreference::NoChange.into(),
            fired_at: Utc.with_ymd_and_hms(2023, 3, 6, 2, 0, 0).unwrap(),
            cause: Cause::Probability(0.0),
            location: None,
        };
        assert_eq!(event.validate().len(), 2);
    }
}
