//! Rating pre-processing: rank-based percentiles and z-scores computed
//! within each item's (or user's) rating profile.

use serde::{Deserialize, Serialize};

use crate::dataset::{std_dev, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    #[default]
    Identity,
    Percentile,
    Zscore,
}

/// Which profile a rating is ranked within.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    Item,
    User,
}

/// Position assigned to repeated values in the sorted profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    First,
    #[default]
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub kind: TransformKind,
    pub axis: Axis,
    pub tie_rule: TieRule,
}

impl TransformConfig {
    pub fn percentile(axis: Axis, tie_rule: TieRule) -> Self {
        Self {
            kind: TransformKind::Percentile,
            axis,
            tie_rule,
        }
    }
}

/// `100 * position / (|profile| + 1)` where `position` is the 1-based index
/// of `value` in the ascending profile (first or last occurrence), or where
/// it would be inserted if absent.
pub fn percentile_of(value: f64, profile: &[f64], tie_rule: TieRule) -> Result<f64> {
    if profile.is_empty() {
        return Err(Error::domain("percentile within an empty profile"));
    }
    let below = profile.iter().filter(|&&r| r < value).count();
    let at_or_below = profile.iter().filter(|&&r| r <= value).count();
    Ok(percentile_from_counts(
        below,
        at_or_below,
        profile.len(),
        tie_rule,
    ))
}

fn percentile_from_counts(below: usize, at_or_below: usize, len: usize, tie_rule: TieRule) -> f64 {
    let position = match tie_rule {
        TieRule::First => below + 1,
        TieRule::Last => at_or_below.max(below + 1),
    };
    100.0 * position as f64 / (len + 1) as f64
}

/// Percentile within a profile that is already sorted ascending.
fn percentile_sorted(value: f64, sorted: &[f64], tie_rule: TieRule) -> f64 {
    let below = sorted.partition_point(|&r| r < value);
    let at_or_below = sorted.partition_point(|&r| r <= value);
    percentile_from_counts(below, at_or_below, sorted.len(), tie_rule)
}

fn profiles(dataset: &Dataset, axis: Axis) -> Vec<Vec<f64>> {
    let n = match axis {
        Axis::Item => dataset.num_items(),
        Axis::User => dataset.num_users(),
    };
    (0..n)
        .map(|k| {
            let p = match axis {
                Axis::Item => dataset.item_profile(k),
                Axis::User => dataset.user_profile(k),
            };
            p.iter().map(|&(_, r)| r).collect()
        })
        .collect()
}

fn owner(axis: Axis, user: usize, item: usize) -> usize {
    match axis {
        Axis::Item => item,
        Axis::User => user,
    }
}

/// Replaces each rating by its percentile within the axis profile. The
/// result lives on the open scale (0, 100).
pub fn percentile_transform(dataset: &Dataset, config: &TransformConfig) -> Result<Dataset> {
    if config.kind != TransformKind::Percentile {
        return Err(Error::domain(
            "percentile_transform needs kind = percentile",
        ));
    }
    let mut sorted = profiles(dataset, config.axis);
    for p in &mut sorted {
        p.sort_by(f64::total_cmp);
    }
    let ratings: Vec<f64> = dataset
        .interactions()
        .iter()
        .map(|it| {
            let p = &sorted[owner(config.axis, it.user, it.item)];
            percentile_sorted(it.rating, p, config.tie_rule)
        })
        .collect();
    dataset.with_ratings(&ratings, (0.0, 100.0))
}

/// `(r - mean) / sd` within the axis profile, population sd; a constant
/// profile maps to 0.
pub fn zscore_transform(dataset: &Dataset, axis: Axis) -> Result<Dataset> {
    let stats: Vec<(f64, f64)> = profiles(dataset, axis)
        .iter()
        .map(|p| match std_dev(p) {
            Some(sd) => (p.iter().sum::<f64>() / p.len() as f64, sd),
            None => (0.0, 0.0),
        })
        .collect();
    let ratings: Vec<f64> = dataset
        .interactions()
        .iter()
        .map(|it| {
            let (m, sd) = stats[owner(axis, it.user, it.item)];
            if sd > 0.0 {
                (it.rating - m) / sd
            } else {
                0.0
            }
        })
        .collect();
    let low = ratings.iter().copied().fold(0.0, f64::min);
    let high = ratings.iter().copied().fold(0.0, f64::max);
    dataset.with_ratings(&ratings, (low, high))
}

pub fn apply(dataset: &Dataset, config: &TransformConfig) -> Result<Dataset> {
    match config.kind {
        TransformKind::Identity => Ok(dataset.clone()),
        TransformKind::Percentile => percentile_transform(dataset, config),
        TransformKind::Zscore => zscore_transform(dataset, config.axis),
    }
}
