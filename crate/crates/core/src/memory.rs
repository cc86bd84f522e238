//! Time-indexed frame store with hierarchy membership and past predictions.
//!
//! Frames are stored only while some instance is ongoing. Queries select
//! frames and prior text for one describer call:
//!
//! * substep: frames of the instance, greedily spaced `substep_spacing` apart,
//!   plus the long forms of earlier substeps of the ongoing step;
//! * step: frames that belonged to detected substeps inside the step, spaced
//!   `step_spacing` apart, plus the long forms of up to `step_history` steps;
//! * goal: one representative frame per described step plus every step's
//!   short form.
//!
//! Committing a step prediction prunes the frames inside it to the one
//! closest to its midpoint, which is what the goal query later returns.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detector::DetectionEvent;
use crate::error::{Error, Result};
use crate::model::{ActionInstance, HierarchyLevel, Interval};

const SPACING_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub timestamp: f64,
    pub member_levels: BTreeSet<HierarchyLevel>,
    /// Opaque reference to the frame payload (path, URL or index).
    pub handle: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub level: HierarchyLevel,
    pub interval: Interval,
    pub short_form: String,
    pub long_form: String,
    pub created_at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBundle {
    pub level: HierarchyLevel,
    pub interval: Interval,
    pub frames: Vec<FrameRef>,
    /// Oldest first.
    pub prior_predictions: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub substep_spacing: f64,
    pub step_spacing: f64,
    pub step_history: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { substep_spacing: 1.0, step_spacing: 3.3, step_history: 10 }
    }
}

/// Greedy-from-start selection: keep a frame when it is at least `spacing`
/// after the last kept one. Input must be sorted by timestamp.
pub fn greedy_spaced<'a>(frames: impl IntoIterator<Item = &'a FrameRef>, spacing: f64) -> Vec<FrameRef> {
    let mut out: Vec<FrameRef> = Vec::new();
    for f in frames {
        match out.last() {
            Some(last) if f.timestamp < last.timestamp + spacing - SPACING_EPS => {}
            _ => out.push(f.clone()),
        }
    }
    out
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ContextMemory {
    sampling: SamplingConfig,
    frames: Vec<FrameRef>,
    predictions: Vec<Prediction>,
    #[serde(skip)]
    clock: Option<f64>,
    #[serde(skip)]
    ongoing_step: Option<f64>,
}

impl ContextMemory {
    pub fn new(sampling: SamplingConfig) -> Self {
        Self { sampling, ..Default::default() }
    }

    pub fn frames(&self) -> &[FrameRef] {
        &self.frames
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn sampling(&self) -> &SamplingConfig {
        &self.sampling
    }

    /// Stores the frame iff it belongs to at least one ongoing instance.
    /// Returns whether it was stored.
    pub fn insert_frame(
        &mut self,
        timestamp: f64,
        member_levels: impl IntoIterator<Item = HierarchyLevel>,
        handle: impl Into<String>,
    ) -> Result<bool> {
        if let Some(last) = self.clock {
            if timestamp <= last {
                return Err(Error::Memory(format!("frame at {timestamp} inserted after {last}")));
            }
        }
        self.clock = Some(timestamp);
        let member_levels: BTreeSet<HierarchyLevel> =
            member_levels.into_iter().filter(|l| *l != HierarchyLevel::Goal).collect();
        if member_levels.is_empty() {
            return Ok(false);
        }
        self.frames.push(FrameRef { timestamp, member_levels, handle: handle.into() });
        Ok(true)
    }

    /// Tracks the ongoing step so substep history can be scoped to it.
    pub fn observe(&mut self, event: &DetectionEvent) {
        match event {
            DetectionEvent::InstanceStarted { level: HierarchyLevel::Step, start } => self.ongoing_step = Some(*start),
            DetectionEvent::InstanceEnded { level: HierarchyLevel::Step, .. } => self.ongoing_step = None,
            _ => {}
        }
    }

    pub fn ongoing_step(&self) -> Option<f64> {
        self.ongoing_step
    }

    fn frames_in<'a>(&'a self, iv: &'a Interval, level: HierarchyLevel) -> impl Iterator<Item = &'a FrameRef> + 'a {
        self.frames
            .iter()
            .filter(move |f| iv.contains(f.timestamp) && f.member_levels.contains(&level))
    }

    fn check_covered(&self, iv: &Interval) -> Result<()> {
        match self.clock {
            Some(now) if iv.end <= now + SPACING_EPS => Ok(()),
            Some(now) => Err(Error::Memory(format!("interval ends at {} but memory has only seen up to {now}", iv.end))),
            None => Err(Error::Memory("memory is empty".into())),
        }
    }

    pub fn query(&self, instance: &ActionInstance) -> Result<RetrievalBundle> {
        let iv = instance.interval;
        match instance.level {
            HierarchyLevel::Substep => {
                self.check_covered(&iv)?;
                let frames = greedy_spaced(self.frames_in(&iv, HierarchyLevel::Substep), self.sampling.substep_spacing);
                let prior_predictions = match self.ongoing_step {
                    Some(step_start) => self
                        .predictions
                        .iter()
                        .filter(|p| p.level == HierarchyLevel::Substep && p.interval.start >= step_start)
                        .map(|p| p.long_form.clone())
                        .collect(),
                    None => Vec::new(),
                };
                Ok(RetrievalBundle { level: instance.level, interval: iv, frames, prior_predictions })
            }
            HierarchyLevel::Step => {
                self.check_covered(&iv)?;
                if let Some(p) = self.predictions.iter().find(|p| {
                    p.level == HierarchyLevel::Step && p.interval.start < iv.end && iv.start < p.interval.end
                }) {
                    return Err(Error::Memory(format!(
                        "step [{}, {}] overlaps described step [{}, {}]",
                        iv.start, iv.end, p.interval.start, p.interval.end
                    )));
                }
                let frames = greedy_spaced(self.frames_in(&iv, HierarchyLevel::Substep), self.sampling.step_spacing);
                let steps: Vec<&Prediction> =
                    self.predictions.iter().filter(|p| p.level == HierarchyLevel::Step).collect();
                let skip = steps.len().saturating_sub(self.sampling.step_history);
                let prior_predictions = steps[skip..].iter().map(|p| p.long_form.clone()).collect();
                Ok(RetrievalBundle { level: instance.level, interval: iv, frames, prior_predictions })
            }
            HierarchyLevel::Goal => {
                let steps: Vec<&Prediction> =
                    self.predictions.iter().filter(|p| p.level == HierarchyLevel::Step).collect();
                let frames = steps
                    .iter()
                    .filter_map(|p| self.representative(&p.interval).cloned())
                    .collect();
                let prior_predictions = steps.iter().map(|p| p.short_form.clone()).collect();
                Ok(RetrievalBundle { level: instance.level, interval: iv, frames, prior_predictions })
            }
        }
    }

    /// Uniform sampling over every stored step frame of `iv`, ignoring
    /// substep membership. Used as the comparison baseline for step queries.
    pub fn query_uniform(&self, iv: &Interval, spacing: f64) -> Vec<FrameRef> {
        greedy_spaced(self.frames.iter().filter(|f| iv.contains(f.timestamp)), spacing)
    }

    /// Stored frame closest to the midpoint of `iv` (earlier wins ties).
    fn representative(&self, iv: &Interval) -> Option<&FrameRef> {
        let mid = iv.midpoint();
        self.frames
            .iter()
            .filter(|f| iv.contains(f.timestamp))
            .min_by(|a, b| (a.timestamp - mid).abs().total_cmp(&(b.timestamp - mid).abs()))
    }

    pub fn commit_prediction(&mut self, p: Prediction) {
        if p.level == HierarchyLevel::Step {
            let keep = self.representative(&p.interval).map(|f| f.timestamp);
            let iv = p.interval;
            self.frames.retain(|f| !iv.contains(f.timestamp) || Some(f.timestamp) == keep);
        }
        self.predictions.push(p);
    }

    /// Debug snapshot: frames and predictions as JSON.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({ "frames": self.frames, "predictions": self.predictions })
    }
}
