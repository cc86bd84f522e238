use serde::{Deserialize, Serialize};

use super::assignment::max_profit_assignment;
use crate::model::Interval;

/// Temporal intersection over union; 0 when the union has zero length.
pub fn tiou(a: &Interval, b: &Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt: usize,
    pub pred: usize,
    pub tiou: f64,
}

/// Matched pairs that pass the threshold, with confusion counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

/// F1 when both sides are empty.
pub const EMPTY_F1: f64 = 1.0;

pub fn f1_from_counts(tp: usize, n_gt: usize, n_pred: usize, empty_value: f64) -> f64 {
    if n_gt + n_pred == 0 {
        empty_value
    } else {
        2.0 * tp as f64 / (n_gt + n_pred) as f64
    }
}

fn profit_matrix(gt: &[Interval], pred: &[Interval]) -> Vec<Vec<f64>> {
    gt.iter().map(|g| pred.iter().map(|p| tiou(g, p)).collect()).collect()
}

/// One-to-one matching maximizing total tIoU; pairs at or above `threshold` are TPs.
pub fn hungarian_match(gt: &[Interval], pred: &[Interval], threshold: f64) -> MatchResult {
    let profit = profit_matrix(gt, pred);
    let pairs: Vec<MatchPair> = max_profit_assignment(&profit)
        .into_iter()
        .map(|(g, p)| MatchPair { gt: g, pred: p, tiou: profit[g][p] })
        .filter(|m| m.tiou >= threshold)
        .collect();
    let tp = pairs.len();
    MatchResult { tp, fn_: gt.len() - tp, fp: pred.len() - tp, pairs }
}

pub fn hungarian_f1(gt: &[Interval], pred: &[Interval], threshold: f64) -> (f64, MatchResult) {
    hungarian_f1_with(gt, pred, threshold, EMPTY_F1)
}

pub fn hungarian_f1_with(gt: &[Interval], pred: &[Interval], threshold: f64, empty_value: f64) -> (f64, MatchResult) {
    let m = hungarian_match(gt, pred, threshold);
    (f1_from_counts(m.tp, gt.len(), pred.len(), empty_value), m)
}

/// Each prediction goes to its best-overlapping ground truth (earliest on
/// ties) if that overlap reaches `threshold`. Ground truths may repeat.
pub fn greedy_match(gt: &[Interval], pred: &[Interval], threshold: f64) -> MatchResult {
    let mut pairs = Vec::new();
    for (j, p) in pred.iter().enumerate() {
        let best = gt
            .iter()
            .enumerate()
            .map(|(i, g)| (i, tiou(g, p)))
            .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((i, v)),
            });
        if let Some((i, v)) = best {
            if v >= threshold {
                pairs.push(MatchPair { gt: i, pred: j, tiou: v });
            }
        }
    }
    let mut covered = vec![false; gt.len()];
    pairs.iter().for_each(|m| covered[m.gt] = true);
    MatchResult {
        tp: pairs.len(),
        fn_: covered.iter().filter(|c| !**c).count(),
        fp: pred.len() - pairs.len(),
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: f64, e: f64) -> Interval {
        Interval { start: s, end: e }
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou(&iv(0.0, 10.0), &iv(0.0, 10.0)), 1.0);
        assert_eq!(tiou(&iv(0.0, 1.0), &iv(2.0, 3.0)), 0.0);
        assert!((tiou(&iv(0.0, 10.0), &iv(5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tiou(&iv(1.0, 1.0), &iv(1.0, 1.0)), 0.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(hungarian_f1(&[iv(0.0, 10.0)], &[iv(0.0, 10.0)], 0.5).0, 1.0);
        let (f1, m) = hungarian_f1(&[iv(0.0, 10.0), iv(10.0, 20.0)], &[iv(0.0, 9.0)], 0.5);
        assert_eq!(m.tp, 1);
        assert!((m.pairs[0].tiou - 0.9).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(hungarian_f1(&[], &[], 0.5).0, 1.0);
        assert_eq!(hungarian_f1_with(&[], &[], 0.5, 0.0).0, 0.0);
        assert_eq!(hungarian_f1(&[iv(0.0, 1.0)], &[], 0.5).0, 0.0);
        assert_eq!(hungarian_f1(&[], &[iv(0.0, 1.0)], 0.5).0, 0.0);
    }

    #[test]
    fn greedy_allows_duplicate_ground_truth() {
        let gt = [iv(0.0, 10.0), iv(20.0, 30.0)];
        let pred = [iv(0.0, 8.0), iv(1.0, 10.0)];
        let m = greedy_match(&gt, &pred, 0.5);
        assert_eq!(m.pairs.iter().map(|p| p.gt).collect::<Vec<_>>(), vec![0, 0]);
        assert_eq!((m.tp, m.fn_, m.fp), (2, 1, 0));
        // hungarian keeps only one of them
        assert_eq!(hungarian_match(&gt, &pred, 0.5).tp, 1);
    }

    #[test]
    fn greedy_below_threshold_is_false_positive() {
        let m = greedy_match(&[iv(0.0, 10.0)], &[iv(9.0, 20.0)], 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!(m.fp, 1);
        assert!(greedy_match(&[iv(0.0, 1.0)], &[], 0.5).pairs.is_empty());
    }

    #[test]
    fn greedy_ties_go_to_earliest_ground_truth() {
        let m = greedy_match(&[iv(0.0, 2.0), iv(2.0, 4.0)], &[iv(1.0, 3.0)], 0.1);
        assert_eq!(m.pairs[0].gt, 0);
    }
}
