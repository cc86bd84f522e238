//! Description-aware F1, emission delay and goal accuracy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::embed::{cosine, Embedder};
use super::matching::{f1_from_counts, hungarian_match, MatchResult};
use crate::error::{Error, Result};
use crate::model::{ActionInstance, Interval};

/// Reference descriptions with their embeddings. Repeated texts resolve to
/// their first position.
#[derive(Clone, Debug)]
pub struct CorpusIndex {
    texts: Vec<String>,
    vectors: Vec<Vec<f64>>,
    first: HashMap<String, usize>,
}

impl CorpusIndex {
    pub fn build(texts: Vec<String>, embedder: &dyn Embedder) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::data("description corpus is empty"));
        }
        let vectors = embedder.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(Error::Dimension { expected: texts.len(), got: vectors.len() });
        }
        let mut first = HashMap::new();
        for (i, t) in texts.iter().enumerate() {
            first.entry(t.clone()).or_insert(i);
        }
        Ok(Self { texts, vectors, first })
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn position(&self, text: &str) -> Option<usize> {
        self.first.get(text).copied()
    }

    /// 1-based rank of entry `target` when the corpus is sorted by
    /// similarity to `query`, earlier entries first among equals.
    pub fn rank(&self, query: &[f64], target: usize) -> usize {
        let sims: Vec<f64> = self.vectors.iter().map(|v| cosine(query, v)).collect();
        let s = sims[target];
        1 + sims.iter().enumerate().filter(|&(i, &x)| x > s || (x == s && i < target)).count()
    }

    /// Index of the most similar entry, earliest among equals.
    pub fn top1(&self, query: &[f64]) -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, v) in self.vectors.iter().enumerate() {
            let s = cosine(query, v);
            if s > best_sim {
                best_sim = s;
                best = i;
            }
        }
        best
    }
}

/// Hungarian matching where a threshold-passing pair also needs the matched
/// reference text within the top `k` corpus entries for the prediction.
pub fn topk_f1(
    gt: &[ActionInstance],
    pred: &[ActionInstance],
    threshold: f64,
    k: usize,
    corpus: &CorpusIndex,
    embedder: &dyn Embedder,
) -> Result<(f64, MatchResult)> {
    let texts: Vec<String> = pred.iter().map(|p| p.description.clone()).collect();
    let vectors = if texts.is_empty() { Vec::new() } else { embedder.embed(&texts)? };
    topk_f1_with_vectors(gt, pred, &vectors, threshold, k, corpus, super::matching::EMPTY_F1)
}

/// [`topk_f1`] with prediction embeddings computed by the caller.
pub fn topk_f1_with_vectors(
    gt: &[ActionInstance],
    pred: &[ActionInstance],
    pred_vectors: &[Vec<f64>],
    threshold: f64,
    k: usize,
    corpus: &CorpusIndex,
    empty_value: f64,
) -> Result<(f64, MatchResult)> {
    if k == 0 {
        return Err(Error::config("top-k needs k >= 1"));
    }
    if corpus.is_empty() {
        return Err(Error::data("description corpus is empty"));
    }
    if pred_vectors.len() != pred.len() {
        return Err(Error::Dimension { expected: pred.len(), got: pred_vectors.len() });
    }
    let gi: Vec<Interval> = gt.iter().map(|a| a.interval).collect();
    let pi: Vec<Interval> = pred.iter().map(|a| a.interval).collect();
    let mut m = hungarian_match(&gi, &pi, threshold);
    let mut kept = Vec::with_capacity(m.pairs.len());
    for pair in m.pairs {
        // a prediction without text cannot describe anything
        if pred[pair.pred].description.trim().is_empty() {
            continue;
        }
        let text = &gt[pair.gt].description;
        let target = corpus
            .position(text)
            .ok_or_else(|| Error::data(format!("reference description {text:?} is not in the corpus")))?;
        if corpus.rank(&pred_vectors[pair.pred], target) <= k {
            kept.push(pair);
        }
    }
    m.tp = kept.len();
    m.fn_ = gt.len() - m.tp;
    m.fp = pred.len() - m.tp;
    m.pairs = kept;
    Ok((f1_from_counts(m.tp, gt.len(), pred.len(), empty_value), m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    /// Mean of |emit_time - reference end|.
    pub mean_abs: f64,
    /// Mean of emit_time - reference end.
    pub mean_signed: f64,
    pub count: usize,
}

/// Signed emission delays of the Hungarian TPs at `threshold`.
pub fn emission_delays(gt: &[Interval], pred: &[Interval], emit_times: &[Option<f64>], threshold: f64) -> Result<Vec<f64>> {
    if emit_times.len() != pred.len() {
        return Err(Error::Dimension { expected: pred.len(), got: emit_times.len() });
    }
    if let Some(j) = emit_times.iter().position(Option::is_none) {
        return Err(Error::data(format!("prediction {j} has no emit time")));
    }
    Ok(hungarian_match(gt, pred, threshold)
        .pairs
        .iter()
        .map(|p| emit_times[p.pred].unwrap() - gt[p.gt].end)
        .collect())
}

pub fn summarize_delays(delays: &[f64]) -> Option<DelayStats> {
    if delays.is_empty() {
        return None;
    }
    let n = delays.len() as f64;
    Some(DelayStats {
        mean_abs: delays.iter().map(|d| d.abs()).sum::<f64>() / n,
        mean_signed: delays.iter().sum::<f64>() / n,
        count: delays.len(),
    })
}

/// Average emission delay over Hungarian TPs; None without TPs.
pub fn aedt(gt: &[Interval], pred: &[Interval], emit_times: &[Option<f64>], threshold: f64) -> Result<Option<DelayStats>> {
    Ok(summarize_delays(&emission_delays(gt, pred, emit_times, threshold)?))
}

/// Fraction of videos whose own reference goal is the closest corpus entry
/// to the predicted goal. The corpus is the list of reference goals.
pub fn goal_accuracy(pred_goals: &[String], gt_goals: &[String], embedder: &dyn Embedder) -> Result<f64> {
    if pred_goals.len() != gt_goals.len() {
        return Err(Error::Dimension { expected: gt_goals.len(), got: pred_goals.len() });
    }
    let corpus = CorpusIndex::build(gt_goals.to_vec(), embedder)?;
    let vectors = embedder.embed(pred_goals)?;
    let correct = vectors
        .iter()
        .zip(gt_goals)
        .zip(pred_goals)
        .filter(|((v, g), p)| !p.trim().is_empty() && corpus.texts()[corpus.top1(v)] == **g)
        .count();
    Ok(correct as f64 / gt_goals.len() as f64)
}
