//! Threshold rules, the daily admission gate, and the per-tick engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Datelike, NaiveDate, TimeZone, Timelike, Weekday};

use crate::dispatch::{render, PushMessage, PushProvider, Templates};
use crate::domain::{
    Cause, DeliveryStatus, GeoPoint, Mechanism, MicroSurveyResponse, NotificationRecord, ParticipantId,
    Phase, PhaseConfig, PreferenceKind, Record, SensorKind, SuppressionReason, Timestamp, TriggerConfig,
    TriggerEvent,
};
use crate::error::Result;
use crate::personalize::{plan_day, train_participant, training_history, PersonalModel, PlanEntry, TrainingConfig};
use crate::store::{Series, StreamKey, Store};
use crate::weather::{poll_tick, StationRegistry, WeatherProvider};

fn latest_location(store: &Store, participant: &ParticipantId, t: Timestamp) -> Option<GeoPoint> {
    match store.latest_at_or_before(&StreamKey::new(participant.clone(), Series::Surveys), t) {
        Some(Record::Survey(s)) => Some(s.location()),
        _ => None,
    }
}

/// Thermal event iff the latest observation at or before `t` is strictly
/// above the threshold.
pub fn evaluate_thermal(
    store: &Store,
    participant: &ParticipantId,
    t: Timestamp,
    config: &TriggerConfig,
) -> Option<TriggerEvent> {
    let key = StreamKey::new(participant.clone(), Series::Weather);
    let Some(Record::Weather(obs)) = store.latest_at_or_before(&key, t) else {
        return None;
    };
    (obs.air_temperature > config.temp_threshold_c).then(|| TriggerEvent {
        participant: participant.clone(),
        kind: PreferenceKind::Thermal,
        mechanism: Mechanism::Threshold,
        target_label: PreferenceKind::Thermal.threshold_target(),
        fired_at: t,
        cause: Cause::Temperature(obs.air_temperature),
        location: latest_location(store, participant, t),
    })
}

/// Noise event iff the latest sound sample at or before `t` is strictly
/// above the threshold.
pub fn evaluate_noise(
    store: &Store,
    participant: &ParticipantId,
    t: Timestamp,
    config: &TriggerConfig,
) -> Option<TriggerEvent> {
    let key = StreamKey::new(participant.clone(), Series::Sensor(SensorKind::SoundLevel));
    let Some(Record::Sensor(sample)) = store.latest_at_or_before(&key, t) else {
        return None;
    };
    (sample.value > config.noise_threshold_dba).then(|| TriggerEvent {
        participant: participant.clone(),
        kind: PreferenceKind::Noise,
        mechanism: Mechanism::Threshold,
        target_label: PreferenceKind::Noise.threshold_target(),
        fired_at: t,
        cause: Cause::SoundLevel(sample.value),
        location: latest_location(store, participant, t),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyBudget {
    pub participant: ParticipantId,
    pub local_date: NaiveDate,
    pub sent_count: u32,
}

/// Sent counts per participant and local date. One counter covers every
/// kind and mechanism.
#[derive(Debug, Default, Clone)]
pub struct BudgetLedger {
    counts: HashMap<(ParticipantId, NaiveDate), u32>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn budget(&self, participant: &ParticipantId, local_date: NaiveDate) -> DailyBudget {
        DailyBudget {
            participant: participant.clone(),
            local_date,
            sent_count: self.counts.get(&(participant.clone(), local_date)).copied().unwrap_or(0),
        }
    }

    /// Gate without side effects. Reasons are checked weekend, window, budget.
    pub fn check(&self, event: &TriggerEvent, config: &TriggerConfig) -> std::result::Result<(), SuppressionReason> {
        let local = event.fired_at.with_timezone(&config.timezone);
        if config.weekdays_only && matches!(local.weekday(), Weekday::Sat | Weekday::Sun) {
            return Err(SuppressionReason::Weekend);
        }
        let hour = local.hour();
        if hour < config.window_start_hour || hour >= config.window_end_hour {
            return Err(SuppressionReason::OutsideWindow);
        }
        if self.budget(&event.participant, local.date_naive()).sent_count >= config.daily_budget {
            return Err(SuppressionReason::BudgetExhausted);
        }
        Ok(())
    }

    /// Consumes one unit; returns the message's position in its day.
    pub fn commit(&mut self, event: &TriggerEvent, config: &TriggerConfig) -> u32 {
        let date = event.fired_at.with_timezone(&config.timezone).date_naive();
        let count = self.counts.entry((event.participant.clone(), date)).or_insert(0);
        *count += 1;
        *count
    }

    /// `check` then `commit` on success.
    pub fn admit(&mut self, event: &TriggerEvent, config: &TriggerConfig) -> DeliveryStatus {
        match self.check(event, config) {
            Ok(()) => {
                self.commit(event, config);
                DeliveryStatus::Sent
            }
            Err(reason) => DeliveryStatus::Suppressed(reason),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParticipantModels {
    pub thermal: PersonalModel,
    pub noise: PersonalModel,
    /// Submission time of the survey that completed the training set.
    pub switched_at: Timestamp,
    pub history: Vec<MicroSurveyResponse>,
}

#[derive(Debug, Default)]
struct ParticipantState {
    last_sound_at: Option<Timestamp>,
    models: Option<ParticipantModels>,
    plan: Option<(NaiveDate, Vec<(Timestamp, PlanEntry)>)>,
}

/// Evaluates all participants at each clock tick and logs every decision to
/// the store's notification streams.
pub struct Engine<'a, P: PushProvider> {
    store: &'a Store,
    provider: P,
    trigger: TriggerConfig,
    phase: PhaseConfig,
    templates: Templates,
    training: TrainingConfig,
    ledger: BudgetLedger,
    state: BTreeMap<ParticipantId, ParticipantState>,
}

impl<'a, P: PushProvider> Engine<'a, P> {
    pub fn new(store: &'a Store, provider: P, trigger: TriggerConfig, phase: PhaseConfig) -> Self {
        Self {
            store,
            provider,
            trigger,
            phase,
            templates: Templates::default(),
            training: TrainingConfig::default(),
            ledger: BudgetLedger::new(),
            state: BTreeMap::new(),
        }
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_training(mut self, training: TrainingConfig) -> Self {
        self.training = training;
        self
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn trigger_config(&self) -> &TriggerConfig {
        &self.trigger
    }

    pub fn models(&self, participant: &ParticipantId) -> Option<&ParticipantModels> {
        self.state.get(participant).and_then(|s| s.models.as_ref())
    }

    pub fn mechanism(&self, participant: &ParticipantId) -> Mechanism {
        if self.models(participant).is_some() {
            Mechanism::Personalized
        } else {
            Mechanism::Threshold
        }
    }

    /// Polls weather for every participant, then runs the tick.
    pub fn step<W: WeatherProvider + ?Sized>(
        &mut self,
        weather: &W,
        registry: &StationRegistry,
        participants: &[ParticipantId],
        t: Timestamp,
    ) -> Result<Vec<NotificationRecord>> {
        let outcome = poll_tick(weather, registry, self.store, participants, t)?;
        let fresh: BTreeSet<ParticipantId> = outcome.updated.into_iter().collect();
        self.run_tick(t, participants, &fresh)
    }

    /// Thermal rules run only for participants in `fresh_weather`; noise
    /// rules run once per new sound sample.
    pub fn run_tick(
        &mut self,
        t: Timestamp,
        participants: &[ParticipantId],
        fresh_weather: &BTreeSet<ParticipantId>,
    ) -> Result<Vec<NotificationRecord>> {
        let mut out = Vec::new();
        for p in participants {
            for event in self.candidate_events(p, t, fresh_weather.contains(p))? {
                out.push(self.decide(event)?);
            }
        }
        Ok(out)
    }

    fn candidate_events(&mut self, p: &ParticipantId, t: Timestamp, fresh_weather: bool) -> Result<Vec<TriggerEvent>> {
        let surveys = self.store.count_surveys(p, t);
        if self.phase.phase == Phase::Phase2
            && surveys >= self.phase.personalization_switch_count
            && self.models(p).is_none()
        {
            self.train(p, t)?;
        }
        if self.models(p).is_some() {
            return Ok(self.due_plan_events(p, t));
        }

        let sound_key = StreamKey::new(p.clone(), Series::Sensor(SensorKind::SoundLevel));
        let latest_sound = self.store.latest_at_or_before(&sound_key, t).map(|r| r.timestamp());
        let state = self.state.entry(p.clone()).or_default();
        let new_sound = latest_sound.is_some() && latest_sound != state.last_sound_at;
        state.last_sound_at = latest_sound;

        if surveys < self.phase.threshold_start_count {
            return Ok(Vec::new());
        }
        let mut events = Vec::new();
        if fresh_weather {
            events.extend(evaluate_thermal(self.store, p, t, &self.trigger));
        }
        if new_sound {
            events.extend(evaluate_noise(self.store, p, t, &self.trigger));
        }
        Ok(events)
    }

    fn train(&mut self, p: &ParticipantId, t: Timestamp) -> Result<()> {
        let history = training_history(self.store, p, self.phase.personalization_switch_count, t)?;
        let (thermal, noise) = train_participant(p, &history, &self.trigger, &self.training)?;
        let switched_at = history.last().map(|s| s.ended_at).unwrap_or(t);
        log::info!("{p}: personalized models trained at {t} on {} surveys", history.len());
        self.state.entry(p.clone()).or_default().models = Some(ParticipantModels {
            thermal,
            noise,
            switched_at,
            history,
        });
        Ok(())
    }

    /// Plan entries whose slot has arrived, in slot order. Slots at or before
    /// the switch are dropped unfired.
    fn due_plan_events(&mut self, p: &ParticipantId, t: Timestamp) -> Vec<TriggerEvent> {
        let tz = self.trigger.timezone;
        let date = t.with_timezone(&tz).date_naive();
        let trigger = self.trigger.clone();
        let state = self.state.get_mut(p).expect("trained participant has state");
        let models = state.models.as_ref().expect("models trained");
        if state.plan.as_ref().map(|(d, _)| *d) != Some(date) {
            let plan = plan_day(&models.thermal, &models.noise, &models.history, date, &trigger);
            let mut slots: Vec<(Timestamp, PlanEntry)> = plan
                .entries
                .into_iter()
                .filter_map(|e| {
                    let local = date.and_hms_opt(e.hour, 0, 0)?;
                    let slot = tz.from_local_datetime(&local).earliest()?.with_timezone(&chrono::Utc);
                    (slot > models.switched_at).then_some((slot, e))
                })
                .collect();
            slots.sort_by_key(|(slot, _)| *slot);
            state.plan = Some((date, slots));
        }
        let (_, slots) = state.plan.as_mut().expect("plan just set");
        let due = slots.iter().take_while(|(slot, _)| *slot <= t).count();
        let location = latest_location(self.store, p, t);
        slots
            .drain(..due)
            .map(|(_, e)| TriggerEvent {
                participant: p.clone(),
                kind: e.kind,
                mechanism: Mechanism::Personalized,
                target_label: e.target_label,
                fired_at: t,
                cause: Cause::Probability(e.probability),
                location,
            })
            .collect()
    }

    /// Admits, dispatches and logs one event. Budget is consumed only when
    /// the provider accepts.
    fn decide(&mut self, event: TriggerEvent) -> Result<NotificationRecord> {
        let payload = render(&event, &self.templates, self.trigger.timezone)?;
        let (status, seq) = match self.ledger.check(&event, &self.trigger) {
            Err(reason) => (DeliveryStatus::Suppressed(reason), None),
            Ok(()) => {
                let receipt = self.provider.send(&PushMessage::for_event(&event, payload.clone()));
                if receipt.is_accepted() {
                    (DeliveryStatus::Sent, Some(self.ledger.commit(&event, &self.trigger)))
                } else {
                    log::warn!("dispatch to {} failed: {receipt:?}", event.participant);
                    (DeliveryStatus::Suppressed(SuppressionReason::DispatchError), None)
                }
            }
        };
        let record = NotificationRecord {
            event,
            payload_text: payload,
            delivery_status: status,
            sequence_in_day: seq,
        };
        let key = StreamKey::new(record.event.participant.clone(), Series::Notifications);
        self.store.append(&key, Record::Notification(record.clone()))?;
        Ok(record)
    }
}
