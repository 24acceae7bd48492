use chrono::Timelike;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::domain::{MicroSurveyResponse, PreferenceKind, PreferenceLabel};
use crate::error::{Error, Result};

/// Number of model inputs: the hour plus one proportion per class.
pub const FEATURE_COUNT: usize = 4;

/// Per-class share of a participant's history plus the hour being scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Proportions in [`PreferenceKind::classes`] order, summing to 1.
    pub class_cumulative: [f64; 3],
    pub hour_of_day: u32,
}

impl FeatureVector {
    /// Model input layout: `[hour, p0, p1, p2]`.
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        let [a, b, c] = self.class_cumulative;
        [f64::from(self.hour_of_day), a, b, c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub features: FeatureVector,
    pub label: PreferenceLabel,
}

const UNIFORM: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

fn proportions(counts: [usize; 3]) -> [f64; 3] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return UNIFORM;
    }
    let n = total as f64;
    counts.map(|c| c as f64 / n)
}

/// Class proportions over the whole history; uniform when empty.
pub fn history_distribution(history: &[MicroSurveyResponse], kind: PreferenceKind) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for s in history {
        counts[s.label(kind).class_index()] += 1;
    }
    proportions(counts)
}

/// One row per survey, in the given order. Row `i` sees only the labels of
/// rows `0..i` (row 0 gets the uniform vector) plus its own local hour.
pub fn extract_training_set(
    history: &[MicroSurveyResponse],
    kind: PreferenceKind,
    tz: Tz,
) -> Result<Vec<TrainingRow>> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut counts = [0usize; 3];
    let mut rows = Vec::with_capacity(history.len());
    for survey in history {
        let label = survey.label(kind);
        rows.push(TrainingRow {
            features: FeatureVector {
                class_cumulative: proportions(counts),
                hour_of_day: survey.ended_at.with_timezone(&tz).hour(),
            },
            label,
        });
        counts[label.class_index()] += 1;
    }
    Ok(rows)
}
