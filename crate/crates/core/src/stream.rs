//! Per-video online loop: detect boundaries frame by frame, keep the
//! context memory up to date and describe every finished instance.

use serde::{Deserialize, Serialize};

use crate::describer::{Describer, DescriberResponse};
use crate::detector::{decode_progress, DetectionEvent, Detector, DetectorConfig, Emission, EmissionRecord};
use crate::error::{Error, Result};
use crate::memory::{ContextMemory, Prediction, SamplingConfig};
use crate::model::{ActionInstance, FrameScores, HierarchyLevel, Interval};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub detector: DetectorConfig,
    pub sampling: SamplingConfig,
    /// Frame handle pattern; `{video}`, `{index}` and `{t}` are substituted.
    pub handle_template: String,
    /// Progress fractions at which an ongoing instance is described early.
    pub partial_fractions: Vec<f64>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            sampling: SamplingConfig::default(),
            handle_template: "{video}/{index}".into(),
            partial_fractions: Vec::new(),
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if let Some(f) = self.partial_fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::config(format!("partial fraction {f} outside (0, 1)")));
        }
        Ok(())
    }

    pub fn handle(&self, video: &str, index: usize, t: f64) -> String {
        self.handle_template
            .replace("{video}", video)
            .replace("{index}", &format!("{index:06}"))
            .replace("{t}", &format!("{t:.3}"))
    }
}

/// Description of an instance that was still running.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialDescription {
    pub level: HierarchyLevel,
    pub fraction: f64,
    pub interval: Interval,
    pub emit_time: f64,
    pub response: DescriberResponse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput {
    /// Described substeps and steps in emission order, then the goal.
    pub emissions: Vec<Emission>,
    pub predictions: Vec<Prediction>,
    pub partials: Vec<PartialDescription>,
    pub describer_calls: usize,
}

impl StreamOutput {
    pub fn records(&self, video_id: &str) -> Vec<EmissionRecord> {
        self.emissions.iter().map(|e| EmissionRecord::from_emission(e, Some(video_id), true)).collect()
    }

    pub fn goal(&self) -> Option<&Emission> {
        self.emissions.iter().find(|e| e.instance.level == HierarchyLevel::Goal)
    }
}

struct Partial {
    start: f64,
    fired: usize,
}

struct Runner<'a> {
    cfg: &'a StreamConfig,
    memory: ContextMemory,
    describer: &'a dyn Describer,
    out: StreamOutput,
}

impl Runner<'_> {
    fn describe(&mut self, instance: &ActionInstance) -> Result<DescriberResponse> {
        let bundle = self.memory.query(instance)?;
        self.out.describer_calls += 1;
        self.describer.describe(&bundle)
    }

    fn on_event(&mut self, ev: &DetectionEvent) -> Result<()> {
        let (level, interval, emitted_at) = match *ev {
            DetectionEvent::InstanceStarted { .. } => {
                self.memory.observe(ev);
                return Ok(());
            }
            DetectionEvent::InstanceEnded { level, interval, emitted_at } => (level, interval, emitted_at),
            DetectionEvent::GoalDue { interval, emitted_at } => (HierarchyLevel::Goal, interval, emitted_at),
        };
        let mut instance = ActionInstance::new(interval, level, "");
        let r = self.describe(&instance)?;
        instance.description = r.short_form.clone();
        self.memory.commit_prediction(Prediction {
            level,
            interval,
            short_form: r.short_form,
            long_form: r.long_form_after,
            created_at: emitted_at,
        });
        self.memory.observe(ev);
        self.out.emissions.push(Emission { instance, emit_time: emitted_at });
        Ok(())
    }
}

/// Runs one video. The describer is called once per finished instance, once
/// for the goal, and once per crossed partial fraction when enabled.
pub fn run_video(video_id: &str, scores: &[FrameScores], cfg: &StreamConfig, describer: &dyn Describer) -> Result<StreamOutput> {
    cfg.validate()?;
    let mut det = Detector::new(cfg.detector)?;
    let mut runner = Runner {
        cfg,
        memory: ContextMemory::new(cfg.sampling),
        describer,
        out: StreamOutput { emissions: Vec::new(), predictions: Vec::new(), partials: Vec::new(), describer_calls: 0 },
    };
    let mut partial: [Option<Partial>; 2] = [None, None];
    let mut fractions = cfg.partial_fractions.clone();
    fractions.sort_by(f64::total_cmp);

    for (index, fs) in scores.iter().enumerate() {
        let events = det.step(fs)?;
        let levels = det.ongoing_levels();
        runner.memory.insert_frame(fs.timestamp, levels, runner.cfg.handle(video_id, index, fs.timestamp))?;
        for ev in &events {
            runner.on_event(ev)?;
        }
        if fractions.is_empty() {
            continue;
        }
        for (slot, level) in HierarchyLevel::TEMPORAL.into_iter().enumerate() {
            match det.ongoing(level) {
                None => partial[slot] = None,
                Some(start) => {
                    let p = partial[slot].get_or_insert(Partial { start, fired: 0 });
                    if p.start != start {
                        *p = Partial { start, fired: 0 };
                    }
                    let progress = decode_progress(fs.progress_dist(level));
                    while p.fired < fractions.len() && progress >= fractions[p.fired] {
                        let interval = Interval { start, end: fs.timestamp };
                        let response = runner.describe(&ActionInstance::new(interval, level, ""))?;
                        runner.out.partials.push(PartialDescription {
                            level,
                            fraction: fractions[p.fired],
                            interval,
                            emit_time: fs.timestamp,
                            response,
                        });
                        p.fired += 1;
                    }
                }
            }
        }
    }
    let final_ts = scores.last().map_or(0.0, |f| f.timestamp);
    for ev in det.finish(final_ts)? {
        runner.on_event(&ev)?;
    }
    runner.out.predictions = runner.memory.predictions().to_vec();
    Ok(runner.out)
}
