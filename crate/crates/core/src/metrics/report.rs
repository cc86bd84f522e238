//! Corpus-level evaluation of emitted instances against annotations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::embed::Embedder;
use super::eval::{emission_delays, goal_accuracy, summarize_delays, topk_f1_with_vectors, CorpusIndex, DelayStats};
use super::matching::{f1_from_counts, hungarian_f1_with, EMPTY_F1};
use crate::detector::EmissionRecord;
use crate::error::{Error, Result};
use crate::model::{ActionInstance, AnnotationSet, HierarchyLevel, Interval};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub topk: usize,
    /// F1 assigned when a video has neither references nor predictions at a level.
    pub empty_f1: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { thresholds: vec![0.3, 0.5, 0.7], topk: 5, empty_f1: EMPTY_F1 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::config("at least one tIoU threshold is required"));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::config(format!("tIoU threshold {t} outside (0, 1]")));
        }
        if self.topk == 0 {
            return Err(Error::config("topk must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub f1_loc: f64,
    pub f1_loc_desc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub tiou: f64,
    pub substep: LevelScores,
    pub step: LevelScores,
    /// Unweighted mean of the two levels.
    pub mean: LevelScores,
    pub aedt: Option<DelayStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: usize,
    pub topk: usize,
    pub thresholds: Vec<ThresholdReport>,
    pub goal_accuracy: Option<f64>,
}

/// Groups records by `video_id`; records without one are rejected.
pub fn group_by_video(records: &[EmissionRecord]) -> Result<BTreeMap<String, Vec<EmissionRecord>>> {
    let mut out: BTreeMap<String, Vec<EmissionRecord>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let id = r.video_id.clone().ok_or_else(|| Error::data(format!("emission {i} has no video_id")))?;
        out.entry(id).or_default().push(r.clone());
    }
    Ok(out)
}

struct LevelData {
    gt: Vec<ActionInstance>,
    pred: Vec<ActionInstance>,
    emit: Vec<Option<f64>>,
    vectors: Vec<Vec<f64>>,
}

/// Scores every annotated video. F1 values are computed per video and level
/// and then averaged over videos; delays are pooled over all TPs.
pub fn evaluate_corpus(
    annotations: &[AnnotationSet],
    predictions: &BTreeMap<String, Vec<EmissionRecord>>,
    cfg: &EvalConfig,
    embedder: &dyn Embedder,
) -> Result<EvalReport> {
    cfg.validate()?;
    if annotations.is_empty() {
        return Err(Error::data("no annotated videos to evaluate"));
    }
    if let Some(id) = predictions.keys().find(|id| !annotations.iter().any(|a| &a.video_id == *id)) {
        return Err(Error::data(format!("predictions for unknown video {id:?}")));
    }
    let levels = [HierarchyLevel::Substep, HierarchyLevel::Step];
    let empty = Vec::new();

    let mut per_level: Vec<Vec<LevelData>> = Vec::new();
    let mut corpora = Vec::new();
    for level in levels {
        let texts: Vec<String> = annotations.iter().flat_map(|a| a.level(level).map(|i| i.description.clone())).collect();
        corpora.push(if texts.is_empty() { None } else { Some(CorpusIndex::build(texts, embedder)?) });

        let mut videos: Vec<LevelData> = annotations
            .iter()
            .map(|a| {
                let recs = predictions.get(&a.video_id).unwrap_or(&empty);
                let recs: Vec<&EmissionRecord> = recs.iter().filter(|r| r.level == level).collect();
                LevelData {
                    gt: a.level(level).cloned().collect(),
                    pred: recs.iter().map(|r| r.to_emission().instance).collect(),
                    emit: recs.iter().map(|r| Some(r.emit_time)).collect(),
                    vectors: Vec::new(),
                }
            })
            .collect();
        let all_texts: Vec<String> = videos.iter().flat_map(|v| v.pred.iter().map(|p| p.description.clone())).collect();
        if !all_texts.is_empty() {
            let mut vecs = embedder.embed(&all_texts)?.into_iter();
            for v in &mut videos {
                v.vectors = vecs.by_ref().take(v.pred.len()).collect();
            }
        }
        per_level.push(videos);
    }

    let n = annotations.len() as f64;
    let mut thresholds = Vec::new();
    for &t in &cfg.thresholds {
        let mut scores = Vec::new();
        let mut delays = Vec::new();
        for (li, videos) in per_level.iter().enumerate() {
            let (mut loc, mut desc) = (0.0, 0.0);
            for v in videos {
                let gi: Vec<Interval> = v.gt.iter().map(|a| a.interval).collect();
                let pi: Vec<Interval> = v.pred.iter().map(|a| a.interval).collect();
                loc += hungarian_f1_with(&gi, &pi, t, cfg.empty_f1).0;
                desc += match &corpora[li] {
                    Some(c) => topk_f1_with_vectors(&v.gt, &v.pred, &v.vectors, t, cfg.topk, c, cfg.empty_f1)?.0,
                    // no references at this level in any video
                    None => f1_from_counts(0, 0, pi.len(), cfg.empty_f1),
                };
                delays.extend(emission_delays(&gi, &pi, &v.emit, t)?);
            }
            scores.push(LevelScores { f1_loc: loc / n, f1_loc_desc: desc / n });
        }
        let mean = LevelScores {
            f1_loc: (scores[0].f1_loc + scores[1].f1_loc) / 2.0,
            f1_loc_desc: (scores[0].f1_loc_desc + scores[1].f1_loc_desc) / 2.0,
        };
        thresholds.push(ThresholdReport {
            tiou: t,
            substep: scores[0].clone(),
            step: scores[1].clone(),
            mean,
            aedt: summarize_delays(&delays),
        });
    }

    let gt_goals: Vec<String> = annotations.iter().map(|a| a.goal.clone()).collect();
    let goal_acc = if gt_goals.iter().all(String::is_empty) {
        None
    } else {
        let preds: Vec<String> = annotations
            .iter()
            .map(|a| {
                predictions
                    .get(&a.video_id)
                    .and_then(|r| r.iter().rev().find(|r| r.level == HierarchyLevel::Goal))
                    .and_then(|r| r.description.clone())
                    .unwrap_or_default()
            })
            .collect();
        Some(goal_accuracy(&preds, &gt_goals, embedder)?)
    };

    Ok(EvalReport { videos: annotations.len(), topk: cfg.topk, thresholds, goal_accuracy: goal_acc })
}

/// Fixed-width text rendering of a report.
pub fn render_table(r: &EvalReport) -> String {
    let mut s = format!("videos: {}  top-k: {}\n", r.videos, r.topk);
    s.push_str("tIoU   substep(loc) substep(desc) step(loc) step(desc) aedt_abs aedt_signed\n");
    for t in &r.thresholds {
        let (a, b) = t.aedt.map_or(("-".to_string(), "-".to_string()), |d| {
            (format!("{:.3}", d.mean_abs), format!("{:.3}", d.mean_signed))
        });
        s.push_str(&format!(
            "{:<6} {:>12.4} {:>13.4} {:>9.4} {:>10.4} {:>8} {:>11}\n",
            t.tiou, t.substep.f1_loc, t.substep.f1_loc_desc, t.step.f1_loc, t.step.f1_loc_desc, a, b
        ));
    }
    match r.goal_accuracy {
        Some(g) => s.push_str(&format!("goal accuracy: {g:.4}\n")),
        None => s.push_str("goal accuracy: -\n"),
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::embed::MockEmbedder;

    fn video(id: &str) -> AnnotationSet {
        let sub = |s: f64, e: f64, d: &str| ActionInstance::new(Interval { start: s, end: e }, HierarchyLevel::Substep, d);
        AnnotationSet {
            video_id: id.into(),
            duration: 20.0,
            fps: 1.0,
            goal: format!("goal of {id}"),
            instances: vec![
                sub(0.0, 4.0, "wash cup"),
                sub(4.0, 9.0, "dry cup"),
                ActionInstance::new(Interval { start: 0.0, end: 9.0 }, HierarchyLevel::Step, "clean cup"),
            ],
        }
    }

    fn perfect(a: &AnnotationSet) -> Vec<EmissionRecord> {
        let mut v: Vec<EmissionRecord> = a
            .instances
            .iter()
            .map(|i| EmissionRecord {
                video_id: Some(a.video_id.clone()),
                start: i.interval.start,
                end: i.interval.end,
                level: i.level,
                emit_time: i.interval.end,
                description: Some(i.description.clone()),
            })
            .collect();
        v.push(EmissionRecord {
            video_id: Some(a.video_id.clone()),
            start: 0.0,
            end: a.duration,
            level: HierarchyLevel::Goal,
            emit_time: a.duration,
            description: Some(a.goal.clone()),
        });
        v
    }

    #[test]
    fn identical_predictions_score_perfectly() {
        let anns = vec![video("a"), video("b")];
        let recs: Vec<EmissionRecord> = anns.iter().flat_map(perfect).collect();
        let r = evaluate_corpus(&anns, &group_by_video(&recs).unwrap(), &EvalConfig::default(), &MockEmbedder::default())
            .unwrap();
        for t in &r.thresholds {
            assert_eq!(t.mean, LevelScores { f1_loc: 1.0, f1_loc_desc: 1.0 });
            assert_eq!(t.aedt.unwrap().mean_abs, 0.0);
        }
        assert_eq!(r.goal_accuracy, Some(1.0));
        assert!(render_table(&r).contains("goal accuracy: 1.0000"));
    }

    #[test]
    fn missing_predictions_score_zero() {
        let anns = vec![video("a")];
        let r = evaluate_corpus(&anns, &BTreeMap::new(), &EvalConfig::default(), &MockEmbedder::default()).unwrap();
        assert_eq!(r.thresholds[0].mean.f1_loc, 0.0);
        assert_eq!(r.thresholds[0].aedt, None);
    }

    #[test]
    fn unknown_video_is_rejected() {
        let recs = perfect(&video("zzz"));
        let err = evaluate_corpus(&[video("a")], &group_by_video(&recs).unwrap(), &EvalConfig::default(), &MockEmbedder::default());
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
