//! Localization and description metrics.

pub mod assignment;
pub mod embed;
pub mod eval;
pub mod judge;
pub mod matching;
pub mod report;

pub use assignment::max_profit_assignment;
pub use embed::{cosine, Embedder, HttpEmbedder, HttpEmbedderConfig, MockEmbedder};
pub use eval::{aedt, emission_delays, goal_accuracy, topk_f1, topk_f1_with_vectors, CorpusIndex, DelayStats};
pub use judge::{gpt_score, judge_requests, parse_judge, Criterion, JudgePayload, ScoreSummary};
pub use matching::{
    f1_from_counts, greedy_match, hungarian_f1, hungarian_f1_with, hungarian_match, tiou, MatchPair, MatchResult, EMPTY_F1,
};
pub use report::{evaluate_corpus, group_by_video, render_table, EvalConfig, EvalReport, LevelScores, ThresholdReport};
