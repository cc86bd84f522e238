//! Domain types shared by every stage: hierarchy levels, intervals, action
//! instances, annotation sets and per-frame score vectors.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Level in the three-tier event hierarchy. Ordered `Substep < Step < Goal`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum HierarchyLevel {
    Substep = 1,
    Step = 2,
    Goal = 3,
}

impl HierarchyLevel {
    pub const ALL: [HierarchyLevel; 3] = [Self::Substep, Self::Step, Self::Goal];
    /// Levels that carry temporal annotations.
    pub const TEMPORAL: [HierarchyLevel; 2] = [Self::Substep, Self::Step];

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Substep => "substep",
            Self::Step => "step",
            Self::Goal => "goal",
        }
    }
}

impl TryFrom<u8> for HierarchyLevel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::Substep),
            2 => Ok(Self::Step),
            3 => Ok(Self::Goal),
            other => Err(format!("hierarchy level must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<HierarchyLevel> for u8 {
    fn from(l: HierarchyLevel) -> u8 {
        l.as_u8()
    }
}

impl fmt::Display for HierarchyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed time interval in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::domain(format!("non-finite interval [{start}, {end}]")));
        }
        if start > end {
            return Err(Error::domain(format!("interval start {start} after end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.start >= self.start && other.end <= self.end
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { start: self.start * c, end: self.end * c }
    }
}

/// One detected or annotated event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "InstanceRecord", into = "InstanceRecord")]
pub struct ActionInstance {
    pub interval: Interval,
    pub description: String,
    pub level: HierarchyLevel,
}

impl ActionInstance {
    pub fn new(interval: Interval, level: HierarchyLevel, description: impl Into<String>) -> Self {
        Self { interval, level, description: description.into() }
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    start: f64,
    end: f64,
    level: HierarchyLevel,
    #[serde(default)]
    description: String,
}

impl From<InstanceRecord> for ActionInstance {
    fn from(r: InstanceRecord) -> Self {
        Self {
            interval: Interval { start: r.start, end: r.end },
            description: r.description,
            level: r.level,
        }
    }
}

impl From<ActionInstance> for InstanceRecord {
    fn from(a: ActionInstance) -> Self {
        Self {
            start: a.interval.start,
            end: a.interval.end,
            level: a.level,
            description: a.description,
        }
    }
}

/// Hierarchical annotations of one video. One JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub video_id: String,
    pub duration: f64,
    pub fps: f64,
    #[serde(default)]
    pub goal: String,
    pub instances: Vec<ActionInstance>,
}

impl AnnotationSet {
    pub fn level(&self, level: HierarchyLevel) -> impl Iterator<Item = &ActionInstance> {
        self.instances.iter().filter(move |i| i.level == level)
    }

    pub fn intervals(&self, level: HierarchyLevel) -> Vec<Interval> {
        self.level(level).map(|i| i.interval).collect()
    }

    /// Number of frames on the `index / fps` grid covering `[0, duration]`.
    pub fn frame_count(&self) -> usize {
        frame_count(self.duration, self.fps)
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.frame_count()).map(|i| i as f64 / self.fps).collect()
    }
}

/// Frames on the grid `t = i / fps` for `t ∈ [0, duration]`.
pub fn frame_count(duration: f64, fps: f64) -> usize {
    ((duration * fps) + 1e-9).floor() as usize + 1
}

/// Three-way frame state emitted by the state head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateClass {
    Background = 0,
    Step = 1,
    StepAndSubstep = 2,
}

impl StateClass {
    pub const ALL: [StateClass; 3] = [Self::Background, Self::Step, Self::StepAndSubstep];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-frame scorer output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub timestamp: f64,
    /// Probabilities over `[BG, STEP, STEP_AND_SUBSTEP]`.
    pub state_probs: [f64; 3],
    pub step_progress_dist: Vec<f64>,
    pub substep_progress_dist: Vec<f64>,
}

impl FrameScores {
    pub fn bins(&self) -> usize {
        self.step_progress_dist.len()
    }

    /// Marginal probability that an instance of `level` is ongoing.
    pub fn actionness(&self, level: HierarchyLevel) -> f64 {
        let [_, step, both] = self.state_probs;
        match level {
            HierarchyLevel::Substep => both,
            HierarchyLevel::Step => step + both,
            HierarchyLevel::Goal => 1.0,
        }
    }

    pub fn progress_dist(&self, level: HierarchyLevel) -> &[f64] {
        match level {
            HierarchyLevel::Substep => &self.substep_progress_dist,
            _ => &self.step_progress_dist,
        }
    }

    /// Checks the distribution invariants (each sums to 1 within 1e-6).
    pub fn check(&self) -> Result<()> {
        let ok = |d: &[f64]| {
            d.iter().all(|p| (0.0..=1.0 + 1e-9).contains(p)) && (d.iter().sum::<f64>() - 1.0).abs() <= 1e-6
        };
        if !ok(&self.state_probs) {
            return Err(Error::data(format!("state probabilities at t={} do not form a distribution", self.timestamp)));
        }
        if self.step_progress_dist.len() != self.substep_progress_dist.len() || self.step_progress_dist.is_empty() {
            return Err(Error::data(format!("progress histograms at t={} disagree in bin count", self.timestamp)));
        }
        if !ok(&self.step_progress_dist) || !ok(&self.substep_progress_dist) {
            return Err(Error::data(format!("progress histogram at t={} is not normalized", self.timestamp)));
        }
        Ok(())
    }
}

/// One invariant violation found by [`validate_annotations`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub index: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "instance {i}: {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ValidationOptions {
    /// Require every substep to lie inside some step.
    pub strict_nesting: bool,
}

/// Returns every violated invariant; an empty list means the set is valid.
pub fn validate_annotations(a: &AnnotationSet) -> Vec<Violation> {
    validate_annotations_with(a, ValidationOptions::default())
}

pub fn validate_annotations_with(a: &AnnotationSet, opts: ValidationOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |index: Option<usize>, reason: String| out.push(Violation { index, reason });

    if !(a.duration.is_finite() && a.duration >= 0.0) {
        push(None, format!("duration {} is not a non-negative number", a.duration));
    }
    if !(a.fps.is_finite() && a.fps > 0.0) {
        push(None, format!("fps {} must be positive", a.fps));
    }

    for (i, inst) in a.instances.iter().enumerate() {
        let iv = inst.interval;
        if !(iv.start.is_finite() && iv.end.is_finite()) {
            push(Some(i), "non-finite endpoint".into());
            continue;
        }
        if iv.start > iv.end {
            push(Some(i), format!("start {} after end {}", iv.start, iv.end));
        }
        if iv.start < 0.0 {
            push(Some(i), format!("starts before 0 at {}", iv.start));
        }
        if iv.end > a.duration + 1e-9 {
            push(Some(i), format!("exceeds duration {} (ends at {})", a.duration, iv.end));
        }
    }

    for level in HierarchyLevel::TEMPORAL {
        let members: Vec<(usize, &ActionInstance)> =
            a.instances.iter().enumerate().filter(|(_, x)| x.level == level).collect();
        for pair in members.windows(2) {
            let (_, prev) = pair[0];
            let (j, cur) = pair[1];
            if cur.interval.start < prev.interval.start {
                push(Some(j), format!("not sorted by start at level {level}"));
            } else if cur.interval.start < prev.interval.end {
                push(Some(j), format!("overlap at level {level}"));
            }
        }
    }

    if opts.strict_nesting {
        let steps = a.intervals(HierarchyLevel::Step);
        for (i, inst) in a.instances.iter().enumerate() {
            if inst.level == HierarchyLevel::Substep && !steps.iter().any(|s| s.contains_interval(&inst.interval)) {
                push(Some(i), "substep not nested inside any step".into());
            }
        }
    }
    out
}

/// Reads one [`AnnotationSet`] per non-empty line.
pub fn read_annotations_jsonl(reader: impl BufRead) -> Result<Vec<AnnotationSet>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let set: AnnotationSet = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("annotation line {}: {e}", n + 1)))?;
        out.push(set);
    }
    Ok(out)
}

pub fn write_annotations_jsonl(mut w: impl Write, sets: &[AnnotationSet]) -> Result<()> {
    for s in sets {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
