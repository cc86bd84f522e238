//! Builds step and goal annotations on top of substep-only annotations:
//! LLM grouping, repair, consistency checks and step-caption clustering.

use std::sync::OnceLock;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::describer::http::{api_key, build_agent, post_json, Failure, HttpConfig};
use crate::error::{Error, Result};
use crate::metrics::embed::Embedder;
use crate::model::{ActionInstance, AnnotationSet, HierarchyLevel, Interval};

/// Text-in, text-out chat model.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

const GROUPING_TAG: &str = "### SUBSTEPS";
const CAPTION_TAG: &str = "### CANDIDATES";

pub fn grouping_prompt(substeps: &[ActionInstance]) -> String {
    let items: Vec<Value> = substeps
        .iter()
        .enumerate()
        .map(|(i, s)| json!({ "index": i, "start": s.interval.start, "end": s.interval.end, "description": s.description }))
        .collect();
    format!(
        "The following are chronologically ordered substep annotations from one video. \
Group consecutive substeps into higher-level steps, describe each step in a short phrase, \
and state the overall goal of the video.\n\
Reply with JSON only, in the form \
{{\"steps\": [{{\"substep_indices\": [0, 1], \"description\": \"...\"}}], \"goal\": \"...\"}}. \
Every substep index must appear in exactly one step.\n\
{GROUPING_TAG}\n{}",
        serde_json::to_string(&items).expect("plain values serialize")
    )
}

pub fn caption_prompt(candidates: &[String]) -> String {
    format!(
        "The following step descriptions belong to one cluster, most typical first. \
Write one short caption that represents all of them. Reply with the caption only.\n\
{CAPTION_TAG}\n{}",
        serde_json::to_string(candidates).expect("strings serialize")
    )
}

fn tagged_json(prompt: &str, tag: &str) -> Option<Value> {
    let rest = &prompt[prompt.find(tag)? + tag.len()..];
    serde_json::from_str(rest.trim()).ok()
}

/// Deterministic stand-in: groups substeps in fixed windows and picks the
/// first candidate caption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MockLanguageModel {
    pub window: usize,
}

impl Default for MockLanguageModel {
    fn default() -> Self {
        Self { window: 2 }
    }
}

impl LanguageModel for MockLanguageModel {
    fn complete(&self, prompt: &str) -> Result<String> {
        if let Some(Value::Array(items)) = tagged_json(prompt, GROUPING_TAG) {
            let descs: Vec<String> =
                items.iter().map(|v| v["description"].as_str().unwrap_or_default().to_string()).collect();
            let steps: Vec<Value> = (0..descs.len())
                .collect::<Vec<_>>()
                .chunks(self.window.max(1))
                .map(|c| json!({ "substep_indices": c, "description": descs[c[0]] }))
                .collect();
            let goal = descs.first().cloned().unwrap_or_default();
            return Ok(json!({ "steps": steps, "goal": goal }).to_string());
        }
        if let Some(Value::Array(items)) = tagged_json(prompt, CAPTION_TAG) {
            return Ok(items.first().and_then(Value::as_str).unwrap_or_default().to_string());
        }
        Err(Error::Parse { reason: "mock model does not recognise the prompt".into(), raw: prompt.to_string() })
    }
}

/// Chat-completions client for text prompts.
pub struct HttpLanguageModel {
    cfg: HttpConfig,
    agent: ureq::Agent,
    key: Option<String>,
}

impl HttpLanguageModel {
    pub fn new(cfg: HttpConfig) -> Self {
        let key = api_key(&cfg.api_key_env);
        let agent = build_agent(cfg.timeout_secs);
        Self { cfg, agent, key }
    }
}

impl LanguageModel for HttpLanguageModel {
    fn complete(&self, prompt: &str) -> Result<String> {
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let body = json!({ "model": self.cfg.model, "messages": [{ "role": "user", "content": prompt }] });
        let mut last = Error::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match post_json(&self.agent, &url, self.key.as_deref(), &body) {
                Ok(reply) => {
                    return Ok(reply["choices"][0]["message"]["content"].as_str().unwrap_or_default().to_string())
                }
                Err(Failure::Retryable(m)) => last = Error::Transport(m),
                Err(Failure::Fatal(e)) => return Err(e),
            }
        }
        Err(last)
    }
}

/// Inclusive range of substep indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Group {
    pub first: usize,
    pub last: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingProposal {
    pub groups: Vec<Group>,
    pub step_descriptions: Vec<String>,
    pub goal_description: String,
}

impl GroupingProposal {
    pub fn interval(&self, g: usize, substeps: &[ActionInstance]) -> Interval {
        let grp = self.groups[g];
        Interval { start: substeps[grp.first].interval.start, end: substeps[grp.last].interval.end }
    }
}

fn json_object_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)\{.*\}").unwrap())
}

/// Parses a grouping reply for `n` substeps. Each step's indices become the
/// range from their minimum to their maximum.
pub fn parse_grouping(reply: &str, n: usize) -> Result<GroupingProposal> {
    let bad = |reason: &str| Error::Parse { reason: reason.to_string(), raw: reply.to_string() };
    let m = json_object_re().find(reply).ok_or_else(|| bad("no JSON object in reply"))?;
    let v: Value = serde_json::from_str(m.as_str()).map_err(|e| bad(&format!("invalid JSON: {e}")))?;
    let steps = v["steps"].as_array().ok_or_else(|| bad("missing \"steps\" array"))?;
    let mut groups = Vec::new();
    let mut descriptions = Vec::new();
    for s in steps {
        let idx = s["substep_indices"].as_array().ok_or_else(|| bad("step without \"substep_indices\""))?;
        let idx: Vec<usize> = idx
            .iter()
            .map(|x| x.as_u64().map(|x| x as usize).filter(|&x| x < n))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("substep index out of range"))?;
        if let (Some(&first), Some(&last)) = (idx.iter().min(), idx.iter().max()) {
            groups.push(Group { first, last });
            descriptions.push(s["description"].as_str().unwrap_or_default().to_string());
        }
    }
    Ok(GroupingProposal {
        groups,
        step_descriptions: descriptions,
        goal_description: v["goal"].as_str().unwrap_or_default().to_string(),
    })
}

/// Asks `llm` for a grouping, retrying unparseable replies `retries` times.
pub fn propose_grouping(substeps: &[ActionInstance], llm: &dyn LanguageModel, retries: usize) -> Result<GroupingProposal> {
    if substeps.is_empty() {
        return Err(Error::data("grouping needs at least one substep"));
    }
    if substeps.windows(2).any(|w| w[1].interval.start < w[0].interval.start) {
        return Err(Error::data("substeps must be sorted by start"));
    }
    let prompt = grouping_prompt(substeps);
    let mut last = None;
    for _ in 0..=retries {
        let reply = llm.complete(&prompt)?;
        match parse_grouping(&reply, substeps.len()) {
            Ok(p) => return Ok(p),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Repairs a proposal: sorts groups, splits overlaps at the middle of the
/// shared range and gives every uncovered substep to the temporally closer
/// neighbouring group (the earlier one on ties).
pub fn postprocess(proposal: &GroupingProposal, substeps: &[ActionInstance]) -> GroupingProposal {
    let n = substeps.len();
    let mut items: Vec<(Group, String)> = proposal
        .groups
        .iter()
        .zip(proposal.step_descriptions.iter().chain(std::iter::repeat(&String::new())))
        .filter(|(g, _)| g.first <= g.last && g.first < n)
        .map(|(g, d)| (Group { first: g.first, last: g.last.min(n.saturating_sub(1)) }, d.clone()))
        .collect();
    items.sort_by_key(|(g, _)| (g.first, g.last));

    let mut merged: Vec<(Group, String)> = Vec::new();
    for (mut g, d) in items {
        if let Some((prev, _)) = merged.last_mut() {
            if g.first <= prev.last {
                // prev may already have been pushed right by an earlier split
                g.first = g.first.max(prev.first);
                let mid = g.first + (prev.last - g.first) / 2;
                let tail = prev.last;
                prev.last = mid;
                g.first = mid + 1;
                g.last = g.last.max(tail);
                if g.first > g.last {
                    continue;
                }
            }
        }
        merged.push((g, d));
    }

    if merged.is_empty() && n > 0 {
        merged.push((Group { first: 0, last: n - 1 }, String::new()));
    }
    if !merged.is_empty() {
        // leading and trailing orphans have only one neighbour
        merged[0].0.first = 0;
        let k = merged.len();
        merged[k - 1].0.last = n - 1;
        for i in 0..k - 1 {
            let (a, b) = (merged[i].0, merged[i + 1].0);
            if b.first <= a.last + 1 {
                continue;
            }
            let prev_end = substeps[a.last].interval.end;
            let next_start = substeps[b.first].interval.start;
            let mut split = a.last;
            for j in a.last + 1..b.first {
                let to_prev = substeps[j].interval.start - prev_end;
                let to_next = next_start - substeps[j].interval.end;
                if to_prev <= to_next {
                    split = j;
                }
            }
            merged[i].0.last = split;
            merged[i + 1].0.first = split + 1;
        }
    }

    GroupingProposal {
        step_descriptions: merged.iter().map(|(_, d)| d.clone()).collect(),
        groups: merged.into_iter().map(|(g, _)| g).collect(),
        goal_description: proposal.goal_description.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationBounds {
    pub min: f64,
    pub max: f64,
}

impl DurationBounds {
    /// 1% and 50% of the video duration.
    pub fn for_video(duration: f64) -> Self {
        Self { min: 0.01 * duration, max: 0.5 * duration }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundViolated {
    TooShort,
    TooLong,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Abnormal {
    pub group: usize,
    pub duration: f64,
    pub bound: BoundViolated,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub missing: Vec<usize>,
    pub abnormal: Vec<Abnormal>,
}

impl ConsistencyReport {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.abnormal.is_empty()
    }
}

pub fn check_consistency(proposal: &GroupingProposal, substeps: &[ActionInstance], bounds: DurationBounds) -> ConsistencyReport {
    let mut covered = vec![false; substeps.len()];
    let mut abnormal = Vec::new();
    for (gi, g) in proposal.groups.iter().enumerate() {
        if g.first > g.last || g.last >= substeps.len() {
            continue;
        }
        covered[g.first..=g.last].iter_mut().for_each(|c| *c = true);
        let duration = proposal.interval(gi, substeps).length();
        if duration < bounds.min {
            abnormal.push(Abnormal { group: gi, duration, bound: BoundViolated::TooShort });
        } else if duration > bounds.max {
            abnormal.push(Abnormal { group: gi, duration, bound: BoundViolated::TooLong });
        }
    }
    ConsistencyReport { missing: covered.iter().enumerate().filter(|(_, c)| !**c).map(|(i, _)| i).collect(), abnormal }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Objective after every assignment pass.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

/// Lloyd's algorithm with k-means++ seeding on squared Euclidean distance.
/// Empty clusters keep their previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::config(format!("k = {k} needs 1 <= k <= {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            // rounding can leave r just past the last positive weight
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|d| *d > 0.0).expect("total is positive");
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let dim = points[0].len();
    let mut trace = Vec::new();
    let mut assignment = vec![0; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignment[i] = c;
            objective += d;
        }
        let done = trace.last().is_some_and(|&prev: &f64| prev - objective <= KMEANS_TOL * prev.abs());
        trace.push(objective);
        if done || objective == 0.0 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeansResult { assignment, centroids, objective_trace: trace, iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Canonicalization {
    pub kmeans: KMeansResult,
    pub representatives: Vec<String>,
}

impl Canonicalization {
    pub fn caption_of(&self, i: usize) -> &str {
        &self.representatives[self.kmeans.assignment[i]]
    }
}

/// Clusters step descriptions and asks `llm` for one caption per cluster,
/// listing members nearest the centroid first.
pub fn kmeans_canonicalize(
    descriptions: &[String],
    k: usize,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
    seed: u64,
) -> Result<Canonicalization> {
    let mut distinct = descriptions.to_vec();
    distinct.sort();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::config(format!("k = {k} exceeds the {} distinct descriptions", distinct.len())));
    }
    let points = embedder.embed(descriptions)?;
    let km = kmeans(&points, k, seed)?;
    let mut representatives = Vec::with_capacity(k);
    for c in 0..k {
        let mut members: Vec<(f64, usize)> = (0..descriptions.len())
            .filter(|&i| km.assignment[i] == c)
            .map(|i| (sq_dist(&points[i], &km.centroids[c]), i))
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut candidates: Vec<String> = Vec::new();
        for (_, i) in members {
            if !candidates.contains(&descriptions[i]) {
                candidates.push(descriptions[i].clone());
            }
        }
        let caption = if candidates.is_empty() { String::new() } else { llm.complete(&caption_prompt(&candidates))?.trim().to_string() };
        representatives.push(caption);
    }
    Ok(Canonicalization { kmeans: km, representatives })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Clusters for step captions; 0 keeps the proposed descriptions.
    pub k: usize,
    /// Fixed bounds in seconds; per-video defaults when absent.
    pub bounds: Option<DurationBounds>,
    pub retries: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { k: 0, bounds: None, retries: 2, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub video_id: String,
    pub proposal: GroupingProposal,
    pub report: ConsistencyReport,
}

/// Groups one video's substeps and repairs the result.
pub fn process_video(a: &AnnotationSet, llm: &dyn LanguageModel, cfg: &PipelineConfig) -> Result<VideoOutcome> {
    let substeps: Vec<ActionInstance> = a.level(HierarchyLevel::Substep).cloned().collect();
    let raw = propose_grouping(&substeps, llm, cfg.retries)?;
    let proposal = postprocess(&raw, &substeps);
    let bounds = cfg.bounds.unwrap_or_else(|| DurationBounds::for_video(a.duration));
    let report = check_consistency(&proposal, &substeps, bounds);
    Ok(VideoOutcome { video_id: a.video_id.clone(), proposal, report })
}

/// Hierarchical annotations from a processed video: substeps, one step per
/// group spanning its members, and the proposed goal.
pub fn assemble(a: &AnnotationSet, outcome: &VideoOutcome, captions: Option<&[String]>) -> AnnotationSet {
    let substeps: Vec<ActionInstance> = a.level(HierarchyLevel::Substep).cloned().collect();
    let p = &outcome.proposal;
    let mut instances: Vec<ActionInstance> = (0..p.groups.len())
        .map(|g| {
            let d = captions.map_or(&p.step_descriptions[g], |c| &c[g]);
            ActionInstance::new(p.interval(g, &substeps), HierarchyLevel::Step, d.clone())
        })
        .collect();
    instances.extend(substeps);
    AnnotationSet {
        video_id: a.video_id.clone(),
        duration: a.duration,
        fps: a.fps,
        goal: p.goal_description.clone(),
        instances,
    }
}

/// Runs the whole pipeline over a corpus; with `k > 0` every step caption
/// is replaced by its cluster's representative.
pub fn run_pipeline(
    videos: &[AnnotationSet],
    outcomes: &[VideoOutcome],
    cfg: &PipelineConfig,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
) -> Result<(Vec<AnnotationSet>, Option<Canonicalization>)> {
    if cfg.k == 0 {
        return Ok((videos.iter().zip(outcomes).map(|(a, o)| assemble(a, o, None)).collect(), None));
    }
    let all: Vec<String> = outcomes.iter().flat_map(|o| o.proposal.step_descriptions.iter().cloned()).collect();
    let canon = kmeans_canonicalize(&all, cfg.k, embedder, llm, cfg.seed)?;
    let mut offset = 0;
    let mut out = Vec::with_capacity(videos.len());
    for (a, o) in videos.iter().zip(outcomes) {
        let n = o.proposal.groups.len();
        let captions: Vec<String> = (offset..offset + n).map(|i| canon.caption_of(i).to_string()).collect();
        offset += n;
        out.push(assemble(a, o, Some(&captions)));
    }
    Ok((out, Some(canon)))
}
