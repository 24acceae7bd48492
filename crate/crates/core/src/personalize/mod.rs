//! Per-participant preference models and daily send planning.
//!
//! Each participant gets one forest per label kind, trained once on their
//! first surveys. Inputs are the hour of day and the participant's class
//! proportions so far. For every remaining day, the planner scores each
//! hour of the send window and keeps the most probable hours whose
//! predicted class is not `no_change`.

pub mod features;
pub mod forest;
pub mod tree;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Mechanism, MicroSurveyResponse, ParticipantId, Phase, PhaseConfig, PreferenceKind,
    PreferenceLabel, Timestamp, TriggerConfig,
};
use crate::error::{Error, Result};
use crate::store::Store;

pub use features::{extract_training_set, history_distribution, FeatureVector, TrainingRow, FEATURE_COUNT};
pub use forest::{default_grid, ForestParams, RandomForest};
pub use tree::{DecisionTree, Sample, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub grid: Vec<ForestParams>,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(FEATURE_COUNT),
            cv_folds: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalModel {
    pub participant: ParticipantId,
    pub label_kind: PreferenceKind,
    pub forest: RandomForest,
    pub training_size: usize,
    pub selected_hyperparams: ForestParams,
    /// `None` when cross-validation was skipped.
    pub cv_accuracy: Option<f64>,
    pub class_order: Vec<PreferenceLabel>,
    /// Trained on a single class; predicts it with probability 1 everywhere.
    pub degenerate: bool,
}

impl PersonalModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn samples_of(rows: &[TrainingRow]) -> Vec<Sample> {
    rows.iter()
        .map(|r| Sample {
            features: r.features.to_array().to_vec(),
            class: r.label.class_index(),
        })
        .collect()
}

/// Stable per-participant, per-kind seed derived from the base seed.
pub fn model_seed(base: u64, participant: &ParticipantId, kind: PreferenceKind) -> u64 {
    // FNV-1a keeps seeds stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for b in participant.as_str().bytes().chain(kind.as_str().bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Selects hyperparameters by k-fold CV, then refits on every row.
/// Single-class rows skip CV and yield a constant model.
pub fn train_forest(
    participant: &ParticipantId,
    kind: PreferenceKind,
    rows: &[TrainingRow],
    config: &TrainingConfig,
) -> Result<PersonalModel> {
    if rows.is_empty() {
        return Err(Error::EmptyHistory);
    }
    if let Some(bad) = rows.iter().find(|r| r.label.kind() != kind) {
        return Err(Error::UnknownLabel(format!("{} in a {kind} model", bad.label)));
    }
    let n_classes = kind.class_count();
    let class_order = kind.classes().to_vec();
    let first = rows[0].label.class_index();
    let seed = model_seed(config.seed, participant, kind);

    if rows.iter().all(|r| r.label.class_index() == first) {
        log::info!("{participant}/{kind}: single-class history, constant model");
        return Ok(PersonalModel {
            participant: participant.clone(),
            label_kind: kind,
            forest: RandomForest::constant(first, n_classes, rows.len() as f64),
            training_size: rows.len(),
            selected_hyperparams: ForestParams {
                n_trees: 1,
                max_depth: Some(0),
                min_leaf: 1,
                feature_subset_size: None,
                bootstrap: false,
            },
            cv_accuracy: None,
            class_order,
            degenerate: true,
        });
    }

    let samples = samples_of(rows);
    let selection = forest::select_params(&samples, n_classes, &config.grid, config.cv_folds, seed);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let forest = RandomForest::fit(&samples, &idx, n_classes, selection.params, seed);
    Ok(PersonalModel {
        participant: participant.clone(),
        label_kind: kind,
        forest,
        training_size: rows.len(),
        selected_hyperparams: selection.params,
        cv_accuracy: Some(selection.cv_accuracy),
        class_order,
        degenerate: false,
    })
}

/// Class probabilities in the model's class order.
pub fn predict_proba(model: &PersonalModel, features: &FeatureVector) -> Vec<f64> {
    model.forest.predict_proba(&features.to_array())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub hour: u32,
    pub kind: PreferenceKind,
    pub target_label: PreferenceLabel,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPlan {
    pub participant: ParticipantId,
    pub local_date: NaiveDate,
    /// Descending probability; ties by earlier hour, then thermal first.
    pub entries: Vec<PlanEntry>,
}

/// Per-hour candidates for one model: the most probable class at each hour
/// of the send window (both ends inclusive), skipping hours where it is
/// `no_change`.
pub fn hourly_candidates(
    model: &PersonalModel,
    history: &[MicroSurveyResponse],
    config: &TriggerConfig,
) -> Vec<PlanEntry> {
    let kind = model.label_kind;
    let dist = history_distribution(history, kind);
    (config.window_start_hour..=config.window_end_hour)
        .filter_map(|hour| {
            let proba = predict_proba(
                model,
                &FeatureVector {
                    class_cumulative: dist,
                    hour_of_day: hour,
                },
            );
            let best = forest::argmax(&proba);
            let label = PreferenceLabel::from_class(kind, best)?;
            (!label.is_no_change()).then_some(PlanEntry {
                hour,
                kind,
                target_label: label,
                probability: proba[best],
            })
        })
        .collect()
}

/// Up to `daily_budget` hourly candidates across both models, most
/// probable first. Never padded.
pub fn plan_day(
    thermal: &PersonalModel,
    noise: &PersonalModel,
    history: &[MicroSurveyResponse],
    local_date: NaiveDate,
    config: &TriggerConfig,
) -> DayPlan {
    let mut entries = hourly_candidates(thermal, history, config);
    entries.extend(hourly_candidates(noise, history, config));
    entries.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.hour.cmp(&b.hour))
            .then(a.kind.cmp(&b.kind))
    });
    entries.truncate(config.daily_budget as usize);
    DayPlan {
        participant: thermal.participant.clone(),
        local_date,
        entries,
    }
}

/// Which mechanism drives a participant at `t`.
pub fn mode_of(
    store: &Store,
    participant: &ParticipantId,
    t: Timestamp,
    phase: &PhaseConfig,
    models_trained: bool,
) -> Mechanism {
    match phase.phase {
        Phase::Phase1 => Mechanism::Threshold,
        Phase::Phase2 => {
            let switched = store.count_surveys(participant, t) >= phase.personalization_switch_count;
            if switched && models_trained {
                Mechanism::Personalized
            } else {
                Mechanism::Threshold
            }
        }
    }
}

/// The first `count` surveys submitted at or before `up_to`, in submission
/// order.
pub fn training_history(
    store: &Store,
    participant: &ParticipantId,
    count: usize,
    up_to: Timestamp,
) -> Result<Vec<MicroSurveyResponse>> {
    let key = crate::store::StreamKey::new(participant.clone(), crate::store::Series::Surveys);
    let have = store.count_surveys(participant, up_to);
    if have < count {
        return Err(Error::InsufficientSurveys { need: count, have });
    }
    Ok(store
        .entries(&key)
        .into_iter()
        .take(count)
        .filter_map(|e| match e.record {
            crate::domain::Record::Survey(s) => Some(s),
            _ => None,
        })
        .collect())
}

/// Both models for a participant from the first `switch_count` surveys.
pub fn train_participant(
    participant: &ParticipantId,
    history: &[MicroSurveyResponse],
    trigger: &TriggerConfig,
    training: &TrainingConfig,
) -> Result<(PersonalModel, PersonalModel)> {
    let thermal_rows = extract_training_set(history, PreferenceKind::Thermal, trigger.timezone)?;
    let noise_rows = extract_training_set(history, PreferenceKind::Noise, trigger.timezone)?;
    Ok((
        train_forest(participant, PreferenceKind::Thermal, &thermal_rows, training)?,
        train_forest(participant, PreferenceKind::Noise, &noise_rows, training)?,
    ))
}
