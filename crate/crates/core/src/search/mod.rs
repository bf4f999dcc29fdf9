//! Divide-and-conquer incremental search over scaling factors.
//!
//! The factor vector is split into halves, quarters, and so on down to
//! single factors. Each segment is shifted by `C` evenly spaced increments,
//! the objective is evaluated for each, and the lowest-scoring increment is
//! kept. The spread of the best `ceil(C/3)` increments, widened by one step
//! on each side, becomes the sampling range for both child segments.
//!
//! Child ranges are stored relative to the factors *after* the parent's
//! update, so a child range always contains zero ("keep the parent's
//! choice") whenever the parent made a choice.

mod budget;
mod objective;
mod schedule;
mod sweep;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SearchError;
use crate::rope::ScalingFactors;

pub use budget::{evo_budget, search_budget};
pub use objective::{
    make_objective, CustomObjective, Objective, ObjectiveParams, SeparableQuadratic, ToyPerplexity,
};
pub use schedule::{incremental_values, segment_schedule, Segment, SegmentSchedule};
pub use sweep::{relative_spread, sweep, SweepParam, SweepRow};

pub const DEFAULT_RANGE: (f64, f64) = (-5.0, 5.0);
pub const DEFAULT_INCREMENTS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub initial_range: (f64, f64),
    pub increments_per_segment: usize,
    pub discard_threshold: f64,
    pub initial_factors: ScalingFactors,
    pub target_length: usize,
    pub objective_id: String,
    pub random_seed: u64,
    /// Evaluate the increments of one segment on the rayon pool.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl SearchConfig {
    pub fn new(initial_factors: ScalingFactors, target_length: usize) -> Self {
        Self {
            initial_range: DEFAULT_RANGE,
            increments_per_segment: DEFAULT_INCREMENTS,
            discard_threshold: DEFAULT_THRESHOLD,
            initial_factors,
            target_length,
            objective_id: String::new(),
            random_seed: 0,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.increments_per_segment < 3 {
            return Err(SearchError::InvalidCount {
                min: 3,
                got: self.increments_per_segment,
            });
        }
        let (low, high) = self.initial_range;
        if !(low <= high) || !low.is_finite() || !high.is_finite() {
            return Err(SearchError::InvalidRange { low, high });
        }
        let f = self.initial_factors.len();
        if f < 2 || !f.is_power_of_two() {
            return Err(SearchError::UnsupportedDimension(f));
        }
        Ok(())
    }
}

/// One evaluated segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub layer: usize,
    pub segment_start: usize,
    pub width: usize,
    /// Range the increments were drawn from.
    pub range: (f64, f64),
    pub values: Vec<f64>,
    #[serde(with = "nullable_floats")]
    pub scores: Vec<f64>,
    pub discarded: Vec<bool>,
    /// `None` when every increment was discarded.
    pub chosen: Option<f64>,
    /// Spread of the best `ceil(C/3)` increments before widening.
    pub top_range: Option<(f64, f64)>,
    pub child_range: (f64, f64),
    /// Objective of the maintained factors after this step, if known.
    pub best_objective: Option<f64>,
    pub cumulative_evals: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub steps: Vec<StepRecord>,
    pub total_evaluations: usize,
}

impl SearchTrace {
    /// Writes one JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, serde_json::Error> {
        let mut steps = Vec::new();
        for line in input.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if line.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str::<StepRecord>(&line)?);
        }
        let total_evaluations = steps.last().map_or(0, |s| s.cumulative_evals);
        Ok(Self {
            steps,
            total_evaluations,
        })
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.steps.iter().rev().find_map(|s| s.best_objective)
    }
}

mod nullable_floats {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// Scores `factors` shifted by each value over `segment`. Results are in
/// the order of `values` whether or not evaluation runs in parallel.
pub fn evaluate_segment(
    objective: &dyn Objective,
    factors: &ScalingFactors,
    segment: Segment,
    values: &[f64],
    parallel: bool,
) -> Result<Vec<f64>, SearchError> {
    if segment.end() > factors.len() {
        return Err(SearchError::SegmentOutOfBounds {
            start: segment.start,
            width: segment.width,
            len: factors.len(),
        });
    }
    let eval = |v: &f64| {
        objective
            .evaluate(&factors.with_offset(segment.start, segment.width, *v))
            .map_err(|source| SearchError::Objective {
                start: segment.start,
                width: segment.width,
                increment: *v,
                source,
            })
    };
    if parallel {
        values.par_iter().map(eval).collect()
    } else {
        values.iter().map(eval).collect()
    }
}

/// Result of selecting an increment for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StepUpdate {
    pub factors: ScalingFactors,
    pub chosen: Option<f64>,
    pub chosen_score: Option<f64>,
    pub discarded: Vec<bool>,
    pub top_range: Option<(f64, f64)>,
    pub child_range: (f64, f64),
}

/// Discards scores above `threshold` (and non-finite ones), applies the
/// best surviving increment, and derives the children's sampling range.
///
/// Ties go to the smallest `|v|`, then to the more negative `v`. The child
/// range is `[min - step, max + step]` over the best `ceil(C/3)` survivors,
/// shifted by `-v*` so it is expressed against the updated factors. If
/// nothing survives, factors are kept and the parent's range is passed on.
pub fn update_step(
    factors: &ScalingFactors,
    segment: Segment,
    values: &[f64],
    scores: &[f64],
    threshold: f64,
    parent_range: (f64, f64),
) -> Result<StepUpdate, SearchError> {
    if values.len() != scores.len() {
        return Err(SearchError::LengthMismatch {
            values: values.len(),
            scores: scores.len(),
        });
    }
    if values.len() < 2 {
        return Err(SearchError::InvalidCount {
            min: 2,
            got: values.len(),
        });
    }
    if segment.end() > factors.len() {
        return Err(SearchError::SegmentOutOfBounds {
            start: segment.start,
            width: segment.width,
            len: factors.len(),
        });
    }

    let discarded: Vec<bool> = scores
        .iter()
        .map(|s| !s.is_finite() || *s > threshold)
        .collect();
    let mut ranked: Vec<usize> = (0..values.len()).filter(|&k| !discarded[k]).collect();
    if ranked.is_empty() {
        return Ok(StepUpdate {
            factors: factors.clone(),
            chosen: None,
            chosen_score: None,
            discarded,
            top_range: None,
            child_range: parent_range,
        });
    }
    ranked.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(values[a].abs().total_cmp(&values[b].abs()))
            .then(values[a].total_cmp(&values[b]))
    });

    let best = ranked[0];
    let chosen = values[best];
    let keep = values.len().div_ceil(3).min(ranked.len());
    let (lo, hi) = ranked[..keep]
        .iter()
        .map(|&k| values[k])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let step = (values[values.len() - 1] - values[0]) / (values.len() - 1) as f64;

    Ok(StepUpdate {
        factors: factors.with_offset(segment.start, segment.width, chosen),
        chosen: Some(chosen),
        chosen_score: Some(scores[best]),
        discarded,
        top_range: Some((lo, hi)),
        child_range: (lo - step - chosen, hi + step - chosen),
    })
}

/// Runs the full halving search and returns the final factors with a
/// complete trace. On objective failure the trace so far is attached to
/// the error.
pub fn dcis_search(
    objective: &dyn Objective,
    config: &SearchConfig,
) -> Result<(ScalingFactors, SearchTrace), SearchError> {
    config.validate()?;
    let schedule = segment_schedule(config.initial_factors.len())?;
    let count = config.increments_per_segment;

    let mut factors = config.initial_factors.clone();
    let mut trace = SearchTrace::default();
    let mut ranges: HashMap<Segment, (f64, f64)> = HashMap::new();
    let mut best_objective: Option<f64> = None;

    for (layer, segment) in schedule.iter() {
        let range = ranges.remove(&segment).unwrap_or(config.initial_range);
        let values = incremental_values(range, count)?;
        let scores = match evaluate_segment(objective, &factors, segment, &values, config.parallel)
        {
            Ok(scores) => scores,
            Err(err) => {
                return Err(SearchError::Aborted {
                    trace: Box::new(trace),
                    source: Box::new(err),
                })
            }
        };
        trace.total_evaluations += values.len();

        let update = update_step(
            &factors,
            segment,
            &values,
            &scores,
            config.discard_threshold,
            range,
        )?;
        if update.chosen_score.is_some() {
            best_objective = update.chosen_score;
        }
        if let Some(children) = segment.children() {
            for child in children {
                ranges.insert(child, update.child_range);
            }
        }
        trace.steps.push(StepRecord {
            layer,
            segment_start: segment.start,
            width: segment.width,
            range,
            values,
            scores,
            discarded: update.discarded,
            chosen: update.chosen,
            top_range: update.top_range,
            child_range: update.child_range,
            best_objective,
            cumulative_evals: trace.total_evaluations,
        });
        factors = update.factors;
    }
    Ok((factors, trace))
}
