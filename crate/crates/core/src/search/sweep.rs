//! Sensitivity sweeps over the search's own hyperparameters.

use serde::{Deserialize, Serialize};

use super::{dcis_search, Objective, SearchConfig};
use crate::error::SearchError;
use crate::rope::ScalingFactors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Value `k` searches over the symmetric range `[-k, k]`.
    Range,
    /// Value is the number of increments per segment.
    Increments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub range: (f64, f64),
    pub increments: usize,
    /// `None` when every evaluation was discarded.
    pub final_objective: Option<f64>,
    pub total_evaluations: usize,
    pub factors: ScalingFactors,
}

/// Runs one search per value, each from `base` with a single field changed.
pub fn sweep(
    objective: &dyn Objective,
    base: &SearchConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>, SearchError> {
    if values.is_empty() {
        return Err(SearchError::ObjectiveParams(
            "sweep needs at least one value".into(),
        ));
    }
    values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            match param {
                SweepParam::Range => {
                    if !(value > 0.0) || !value.is_finite() {
                        return Err(SearchError::InvalidRange {
                            low: -value,
                            high: value,
                        });
                    }
                    cfg.initial_range = (-value, value);
                }
                SweepParam::Increments => {
                    if value.fract() != 0.0 || value < 0.0 {
                        return Err(SearchError::ObjectiveParams(format!(
                            "increment count must be a whole number, got {value}"
                        )));
                    }
                    cfg.increments_per_segment = value as usize;
                }
            }
            let (factors, trace) = dcis_search(objective, &cfg)?;
            Ok(SweepRow {
                value,
                range: cfg.initial_range,
                increments: cfg.increments_per_segment,
                final_objective: trace.final_objective(),
                total_evaluations: trace.total_evaluations,
                factors,
            })
        })
        .collect()
}

/// Largest pairwise gap between finite objectives, relative to the smallest.
pub fn relative_spread(rows: &[SweepRow]) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.final_objective).collect();
    if vals.len() != rows.len() || vals.is_empty() {
        return None;
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((hi - lo) / lo)
}
