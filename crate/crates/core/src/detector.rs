//! Online boundary detection.
//!
//! Starts come from actionness crossing `start_threshold`; ends come either
//! from a sudden drop of the decoded progress (the instance closes at the
//! previous frame and the current frame is background for that level) or
//! from actionness falling back below the threshold. Substep and step levels
//! run independently off the shared state distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActionInstance, FrameScores, HierarchyLevel, Interval};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub start_threshold: f64,
    /// Minimum one-frame decrease of decoded progress that ends an instance.
    /// Values above 1 can never fire and disable progress-based ends.
    pub drop_delta: f64,
    pub min_progress_for_drop: f64,
    pub close_incomplete_at_eos: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { start_threshold: 0.5, drop_delta: 0.4, min_progress_for_drop: 0.5, close_incomplete_at_eos: true }
    }
}

impl DetectorConfig {
    /// Conventional actionness-only grouping.
    pub fn actionness_only() -> Self {
        Self { drop_delta: 2.0, ..Self::default() }
    }

    pub fn drops_enabled(&self) -> bool {
        self.drop_delta <= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_threshold > 0.0 && self.start_threshold < 1.0) {
            return Err(Error::config(format!("start_threshold {} not in (0, 1)", self.start_threshold)));
        }
        if !(self.drop_delta > 0.0) {
            return Err(Error::config(format!("drop_delta {} must be positive", self.drop_delta)));
        }
        if !(0.0..=1.0).contains(&self.min_progress_for_drop) {
            return Err(Error::config(format!(
                "min_progress_for_drop {} not in [0, 1]",
                self.min_progress_for_drop
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DetectionEvent {
    InstanceStarted { level: HierarchyLevel, start: f64 },
    InstanceEnded { level: HierarchyLevel, interval: Interval, emitted_at: f64 },
    GoalDue { interval: Interval, emitted_at: f64 },
}

impl DetectionEvent {
    pub fn level(&self) -> HierarchyLevel {
        match self {
            Self::InstanceStarted { level, .. } | Self::InstanceEnded { level, .. } => *level,
            Self::GoalDue { .. } => HierarchyLevel::Goal,
        }
    }
}

/// A finished instance and the frame time at which it was emitted.
#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    pub instance: ActionInstance,
    pub emit_time: f64,
}

/// On-disk emission line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    pub start: f64,
    pub end: f64,
    pub level: HierarchyLevel,
    pub emit_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl EmissionRecord {
    pub fn from_emission(e: &Emission, video_id: Option<&str>, with_description: bool) -> Self {
        Self {
            video_id: video_id.map(str::to_owned),
            start: e.instance.interval.start,
            end: e.instance.interval.end,
            level: e.instance.level,
            emit_time: e.emit_time,
            description: with_description.then(|| e.instance.description.clone()),
        }
    }

    pub fn to_emission(&self) -> Emission {
        Emission {
            instance: ActionInstance::new(
                Interval { start: self.start, end: self.end },
                self.level,
                self.description.clone().unwrap_or_default(),
            ),
            emit_time: self.emit_time,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct LevelState {
    open_start: Option<f64>,
    previous_progress: f64,
    suppressed_this_frame: bool,
}

/// Streaming state for one video. Feed frames with [`Detector::step`], then
/// call [`Detector::finish`] exactly once.
#[derive(Clone, Debug)]
pub struct Detector {
    cfg: DetectorConfig,
    substep: LevelState,
    step: LevelState,
    current: Option<f64>,
    finished: bool,
    log: Vec<DetectionEvent>,
}

/// Progress read off a histogram as the expectation over bin centers.
pub fn decode_progress(dist: &[f64]) -> f64 {
    let b = dist.len() as f64;
    let total: f64 = dist.iter().sum();
    dist.iter().enumerate().map(|(i, d)| d * (i as f64 + 0.5) / b).sum::<f64>() / total
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            substep: LevelState::default(),
            step: LevelState::default(),
            current: None,
            finished: false,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn current_timestamp(&self) -> Option<f64> {
        self.current
    }

    /// Start time of the ongoing instance at `level`, if any.
    pub fn ongoing(&self, level: HierarchyLevel) -> Option<f64> {
        match level {
            HierarchyLevel::Substep => self.substep.open_start,
            HierarchyLevel::Step => self.step.open_start,
            HierarchyLevel::Goal => None,
        }
    }

    /// Levels with an ongoing instance.
    pub fn ongoing_levels(&self) -> Vec<HierarchyLevel> {
        HierarchyLevel::TEMPORAL.into_iter().filter(|l| self.ongoing(*l).is_some()).collect()
    }

    /// Every event emitted so far, in order. Append-only.
    pub fn log(&self) -> &[DetectionEvent] {
        &self.log
    }

    pub fn step(&mut self, fs: &FrameScores) -> Result<Vec<DetectionEvent>> {
        if self.finished {
            return Err(Error::Detector("frame received after finish".into()));
        }
        if !fs.timestamp.is_finite() {
            return Err(Error::Detector(format!("non-finite timestamp {}", fs.timestamp)));
        }
        if let Some(prev) = self.current {
            if fs.timestamp <= prev {
                return Err(Error::Detector(format!(
                    "timestamps must increase strictly: {} after {prev}",
                    fs.timestamp
                )));
            }
        }
        let previous_ts = self.current;
        self.current = Some(fs.timestamp);

        let mut events = Vec::new();
        for level in HierarchyLevel::TEMPORAL {
            let cfg = self.cfg;
            let actionness = fs.actionness(level);
            let progress = decode_progress(fs.progress_dist(level));
            let st = match level {
                HierarchyLevel::Substep => &mut self.substep,
                _ => &mut self.step,
            };
            st.suppressed_this_frame = false;

            if let Some(open) = st.open_start {
                let drop = st.previous_progress - progress;
                if drop >= cfg.drop_delta && st.previous_progress >= cfg.min_progress_for_drop {
                    let end = previous_ts.expect("an open instance implies an earlier frame").max(open);
                    events.push(DetectionEvent::InstanceEnded {
                        level,
                        interval: Interval { start: open, end },
                        emitted_at: fs.timestamp,
                    });
                    st.open_start = None;
                    st.suppressed_this_frame = true;
                } else if actionness < cfg.start_threshold {
                    events.push(DetectionEvent::InstanceEnded {
                        level,
                        interval: Interval { start: open, end: fs.timestamp },
                        emitted_at: fs.timestamp,
                    });
                    st.open_start = None;
                } else {
                    st.previous_progress = progress;
                }
            } else if !st.suppressed_this_frame && actionness >= cfg.start_threshold {
                st.open_start = Some(fs.timestamp);
                st.previous_progress = progress;
                events.push(DetectionEvent::InstanceStarted { level, start: fs.timestamp });
            }
        }
        self.log.extend(events.iter().cloned());
        Ok(events)
    }

    /// Closes the stream at `final_timestamp`.
    pub fn finish(&mut self, final_timestamp: f64) -> Result<Vec<DetectionEvent>> {
        if self.finished {
            return Err(Error::Detector("finish called twice".into()));
        }
        if let Some(cur) = self.current {
            if final_timestamp < cur {
                return Err(Error::Detector(format!("final timestamp {final_timestamp} precedes last frame {cur}")));
            }
        }
        self.finished = true;
        let mut events = Vec::new();
        if self.cfg.close_incomplete_at_eos {
            for level in HierarchyLevel::TEMPORAL {
                let st = match level {
                    HierarchyLevel::Substep => &mut self.substep,
                    _ => &mut self.step,
                };
                if let Some(open) = st.open_start.take() {
                    events.push(DetectionEvent::InstanceEnded {
                        level,
                        interval: Interval { start: open, end: final_timestamp },
                        emitted_at: final_timestamp,
                    });
                }
            }
        }
        events.push(DetectionEvent::GoalDue {
            interval: Interval { start: 0.0, end: final_timestamp },
            emitted_at: final_timestamp,
        });
        self.log.extend(events.iter().cloned());
        Ok(events)
    }
}

/// Converts ended-instance events into emissions.
pub fn emissions(events: &[DetectionEvent]) -> Vec<Emission> {
    events
        .iter()
        .filter_map(|e| match e {
            DetectionEvent::InstanceEnded { level, interval, emitted_at } => Some(Emission {
                instance: ActionInstance::new(*interval, *level, ""),
                emit_time: *emitted_at,
            }),
            _ => None,
        })
        .collect()
}

/// Runs a whole stream and returns every ended substep/step instance in
/// emission order (the goal is not included).
pub fn run_stream(scores: &[FrameScores], cfg: &DetectorConfig) -> Result<Vec<Emission>> {
    let mut det = Detector::new(*cfg)?;
    for fs in scores {
        det.step(fs)?;
    }
    let last = scores.last().map(|f| f.timestamp).unwrap_or(0.0);
    det.finish(last)?;
    Ok(emissions(det.log()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{histogram_target, HistogramConfig};

    fn frame(t: f64, state: [f64; 3], step_p: Option<f64>, sub_p: Option<f64>) -> FrameScores {
        let h = HistogramConfig::default();
        let dist = |p: Option<f64>| p.map(|p| histogram_target(p, &h).unwrap()).unwrap_or_else(|| h.uniform());
        FrameScores {
            timestamp: t,
            state_probs: state,
            step_progress_dist: dist(step_p),
            substep_progress_dist: dist(sub_p),
        }
    }

    const BG: [f64; 3] = [1.0, 0.0, 0.0];
    const BOTH: [f64; 3] = [0.0, 0.0, 1.0];
    const STEP: [f64; 3] = [0.0, 1.0, 0.0];

    fn ended(events: &[DetectionEvent], level: HierarchyLevel) -> Vec<(f64, f64, f64)> {
        events
            .iter()
            .filter_map(|e| match e {
                DetectionEvent::InstanceEnded { level: l, interval, emitted_at } if *l == level => {
                    Some((interval.start, interval.end, *emitted_at))
                }
                _ => None,
            })
            .collect()
    }

    /// Two touching substeps [0,5] and [5,10] at 1 fps, frames at t = 0..=10.
    fn touching_substeps() -> Vec<FrameScores> {
        (0..=10)
            .map(|i| {
                let t = i as f64;
                let sub = if i < 5 { t / 5.0 } else { (t - 5.0) / 5.0 };
                frame(t, BOTH, Some(t / 10.0), Some(sub))
            })
            .collect()
    }

    #[test]
    fn drop_splits_touching_substeps() {
        let mut det = Detector::new(DetectorConfig::default()).unwrap();
        let mut events = Vec::new();
        for fs in touching_substeps() {
            events.extend(det.step(&fs).unwrap());
        }
        events.extend(det.finish(10.0).unwrap());
        // drop observed at t=5 closes the first instance at t=4; t=5 is
        // background for the substep level, the next instance opens at t=6
        assert_eq!(ended(&events, HierarchyLevel::Substep), vec![(0.0, 4.0, 5.0), (6.0, 10.0, 10.0)]);
        assert_eq!(ended(&events, HierarchyLevel::Step), vec![(0.0, 10.0, 10.0)]);
        assert!(matches!(events.last(), Some(DetectionEvent::GoalDue { .. })));
    }

    #[test]
    fn without_drops_touching_substeps_merge() {
        let out = run_stream(&touching_substeps(), &DetectorConfig::actionness_only()).unwrap();
        let subs: Vec<_> = out.iter().filter(|e| e.instance.level == HierarchyLevel::Substep).collect();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].instance.interval, Interval { start: 0.0, end: 10.0 });
    }

    #[test]
    fn all_background_emits_nothing_but_goal() {
        let mut det = Detector::new(DetectorConfig::default()).unwrap();
        for i in 0..20 {
            assert!(det.step(&frame(i as f64, BG, None, None)).unwrap().is_empty());
        }
        let fin = det.finish(19.0).unwrap();
        assert_eq!(fin.len(), 1);
        assert!(matches!(fin[0], DetectionEvent::GoalDue { .. }));
    }

    #[test]
    fn background_transition_closes_at_current_frame() {
        let mut det = Detector::new(DetectorConfig::default()).unwrap();
        let mut events = Vec::new();
        for i in 0..12 {
            let t = i as f64;
            let fs = if (3..8).contains(&i) { frame(t, STEP, Some((t - 3.0) / 5.0), None) } else { frame(t, BG, None, None) };
            events.extend(det.step(&fs).unwrap());
        }
        assert_eq!(events.len(), 2);
        assert_eq!(events[0], DetectionEvent::InstanceStarted { level: HierarchyLevel::Step, start: 3.0 });
        assert_eq!(ended(&events, HierarchyLevel::Step), vec![(3.0, 8.0, 8.0)]);
    }

    #[test]
    fn min_progress_gate_blocks_early_drops() {
        let one_hot = |t: f64, bin: usize| {
            let mut fs = frame(t, STEP, None, None);
            fs.step_progress_dist = vec![0.0; 10];
            fs.step_progress_dist[bin] = 1.0;
            fs
        };
        // 0.45 -> 0.05 clears drop_delta, but 0.45 is below the 0.5 gate
        let cfg = DetectorConfig { drop_delta: 0.3, ..Default::default() };
        let mut det = Detector::new(cfg).unwrap();
        det.step(&one_hot(0.0, 4)).unwrap();
        assert!(det.step(&one_hot(1.0, 0)).unwrap().is_empty());

        let cfg = DetectorConfig { drop_delta: 0.3, min_progress_for_drop: 0.4, ..Default::default() };
        let mut det = Detector::new(cfg).unwrap();
        det.step(&one_hot(0.0, 4)).unwrap();
        assert_eq!(ended(&det.step(&one_hot(1.0, 0)).unwrap(), HierarchyLevel::Step), vec![(0.0, 0.0, 1.0)]);
    }

    #[test]
    fn finish_contract() {
        let mut det = Detector::new(DetectorConfig::default()).unwrap();
        det.step(&frame(0.0, STEP, Some(0.1), None)).unwrap();
        let ev = det.finish(3.0).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ended(&ev, HierarchyLevel::Step), vec![(0.0, 3.0, 3.0)]);
        assert!(det.finish(3.0).is_err());

        let cfg = DetectorConfig { close_incomplete_at_eos: false, ..Default::default() };
        let mut det = Detector::new(cfg).unwrap();
        det.step(&frame(0.0, STEP, Some(0.1), None)).unwrap();
        let ev = det.finish(3.0).unwrap();
        assert_eq!(ev.len(), 1);
        assert!(matches!(ev[0], DetectionEvent::GoalDue { .. }));
    }

    #[test]
    fn non_monotonic_timestamps_are_rejected() {
        let mut det = Detector::new(DetectorConfig::default()).unwrap();
        det.step(&frame(1.0, BG, None, None)).unwrap();
        assert!(det.step(&frame(1.0, BG, None, None)).is_err());
        assert!(det.step(&frame(0.5, BG, None, None)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig { start_threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(DetectorConfig { drop_delta: 0.0, ..Default::default() }.validate().is_err());
        assert!(DetectorConfig { min_progress_for_drop: 1.5, ..Default::default() }.validate().is_err());
        assert!(DetectorConfig::actionness_only().validate().is_ok());
    }

    #[test]
    fn emission_record_shape() {
        let e = Emission {
            instance: ActionInstance::new(Interval { start: 1.0, end: 2.0 }, HierarchyLevel::Substep, "x"),
            emit_time: 2.5,
        };
        let s = serde_json::to_string(&EmissionRecord::from_emission(&e, None, false)).unwrap();
        assert_eq!(s, r#"{"start":1.0,"end":2.0,"level":1,"emit_time":2.5}"#);
    }
}
