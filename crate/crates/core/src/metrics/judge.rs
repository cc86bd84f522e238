//! Request builder and reply parser for LLM-judged description quality.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::matching::MatchPair;

const CI_TEMPLATE: &str = include_str!("templates/ci.txt");
const DO_TEMPLATE: &str = include_str!("templates/do.txt");
const CU_TEMPLATE: &str = include_str!("templates/cu.txt");
const TU_TEMPLATE: &str = include_str!("templates/tu.txt");

/// Question attached to every judged pair unless the caller overrides it.
pub const DEFAULT_QUESTION: &str = "What is the person doing in this segment of the video?";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Criterion {
    /// Correctness of information.
    Ci,
    /// Detail orientation.
    Do,
    /// Contextual understanding.
    Cu,
    /// Temporal understanding.
    Tu,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Ci, Criterion::Do, Criterion::Cu, Criterion::Tu];

    pub fn template(self) -> &'static str {
        match self {
            Criterion::Ci => CI_TEMPLATE,
            Criterion::Do => DO_TEMPLATE,
            Criterion::Cu => CU_TEMPLATE,
            Criterion::Tu => TU_TEMPLATE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// One judge call: the filled template verbatim and the same text split
/// into chat messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgePayload {
    pub gt: usize,
    pub pred: usize,
    pub criterion: Criterion,
    pub rendered: String,
    pub messages: Vec<ChatMessage>,
}

pub fn fill_template(criterion: Criterion, question: &str, answer: &str, pred: &str) -> String {
    criterion
        .template()
        .replace("{question}", question)
        .replace("{answer}", answer)
        .replace("{pred}", pred)
}

/// Splits a rendered template into its `role:` / `content:` blocks,
/// dropping the block indentation.
pub fn split_messages(rendered: &str) -> Vec<ChatMessage> {
    let mut out: Vec<ChatMessage> = Vec::new();
    let mut lines: Vec<&str> = Vec::new();
    let mut role: Option<String> = None;
    let flush = |role: &mut Option<String>, lines: &mut Vec<&str>, out: &mut Vec<ChatMessage>| {
        if let Some(r) = role.take() {
            let content = lines.iter().map(|l| l.strip_prefix("    ").unwrap_or(l)).collect::<Vec<_>>().join("\n");
            out.push(ChatMessage { role: r, content: content.trim().to_string() });
        }
        lines.clear();
    };
    for line in rendered.lines() {
        if let Some(r) = line.strip_prefix("role:") {
            flush(&mut role, &mut lines, &mut out);
            role = Some(r.trim().trim_end_matches(',').to_string());
        } else if let Some(rest) = line.strip_prefix("content:") {
            if !rest.trim().is_empty() {
                lines.push(rest.trim());
            }
        } else {
            lines.push(line);
        }
    }
    flush(&mut role, &mut lines, &mut out);
    out
}

/// One payload per (pair, criterion). `texts(pair)` yields the reference
/// and predicted descriptions.
pub fn judge_requests<F>(pairs: &[MatchPair], criteria: &[Criterion], question: &str, texts: F) -> Vec<JudgePayload>
where
    F: Fn(&MatchPair) -> (String, String),
{
    let mut out = Vec::with_capacity(pairs.len() * criteria.len());
    for pair in pairs {
        let (answer, pred) = texts(pair);
        for &criterion in criteria {
            let rendered = fill_template(criterion, question, &answer, &pred);
            out.push(JudgePayload {
                gt: pair.gt,
                pred: pair.pred,
                criterion,
                messages: split_messages(&rendered),
                rendered,
            });
        }
    }
    out
}

fn score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"['"]+score['"]+\s*:\s*['"]?(-?[0-9]+(?:\.[0-9]+)?)"#).unwrap())
}

/// Score from a `{'score': n}` reply; None when absent or outside [0, 5].
pub fn parse_judge(reply: &str) -> Option<f64> {
    let caps = score_re().captures(reply)?;
    let v: f64 = caps[1].parse().ok()?;
    (0.0..=5.0).contains(&v).then_some(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: Option<f64>,
    pub scored: usize,
    pub missing: usize,
}

/// Mean over parseable replies; unparseable ones are counted, not averaged.
pub fn gpt_score<S: AsRef<str>>(replies: &[S]) -> ScoreSummary {
    let scores: Vec<f64> = replies.iter().filter_map(|r| parse_judge(r.as_ref())).collect();
    let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    ScoreSummary { mean, scored: scores.len(), missing: replies.len() - scores.len() }
}
