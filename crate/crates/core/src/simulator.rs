//! Synthetic hierarchical annotations with matching score streams and
//! feature sequences.
//!
//! All boundaries are whole frames on the `i / fps` grid. Every generator is
//! deterministic in `(seed, video index)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActionInstance, AnnotationSet, FrameScores, HierarchyLevel, Interval, StateClass};
use crate::scoring::histogram::{histogram_target, HistogramConfig};
use crate::scoring::io::FeatureSequence;
use crate::scoring::loss::softmax;
use crate::scoring::targets::{level_progress, state_target};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub videos: usize,
    /// Seconds, inclusive.
    pub duration_range: (f64, f64),
    pub steps_range: (usize, usize),
    pub substeps_range: (usize, usize),
    /// Probability that a gap between neighbouring instances is exactly zero.
    pub zero_gap_prob: f64,
    /// Seconds, used for every gap that is not zero.
    pub gap_range: (f64, f64),
    pub min_instance_len: f64,
    /// Standard deviation of the logit noise in score streams.
    pub noise_sigma: f64,
    pub fps: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            videos: 8,
            duration_range: (90.0, 150.0),
            steps_range: (2, 4),
            substeps_range: (1, 3),
            zero_gap_prob: 0.5,
            gap_range: (1.0, 3.0),
            min_instance_len: 2.0,
            noise_sigma: 0.0,
            fps: 10.0,
            feature_dim: 8,
            feature_noise: 0.05,
        }
    }
}

const VERBS: [&str; 12] =
    ["cut", "wash", "peel", "stir", "pour", "mix", "fold", "press", "heat", "rinse", "measure", "place"];
const NOUNS: [&str; 12] =
    ["onion", "tomato", "dough", "pan", "rice", "bowl", "garlic", "pepper", "carrot", "sauce", "bread", "bottle"];
const GOALS: [&str; 6] = ["make soup", "bake bread", "repair bike", "cook rice", "brew coffee", "build shelf"];

#[derive(Clone, Copy)]
enum Stream {
    Annotations = 0,
    Scores = 1,
    Features = 2,
}

fn rng_for(seed: u64, video: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(video as u64 * 4 + stream as u64);
    rng
}

pub fn video_id(index: usize) -> String {
    format!("vid{index:05}")
}

struct Frames {
    duration: (u64, u64),
    gap: (u64, u64),
    min_len: u64,
}

impl SimConfig {
    fn frames(&self, secs: f64) -> f64 {
        secs * self.fps
    }

    fn frame_ranges(&self) -> Result<Frames> {
        let up = |s: f64| (self.frames(s) - 1e-9).ceil().max(0.0) as u64;
        let down = |s: f64| (self.frames(s) + 1e-9).floor() as u64;
        let duration = (up(self.duration_range.0), down(self.duration_range.1));
        let gap = (up(self.gap_range.0), down(self.gap_range.1));
        if duration.0 > duration.1 {
            return Err(Error::config("duration range holds no whole frame count"));
        }
        if gap.0 > gap.1 && self.zero_gap_prob < 1.0 {
            return Err(Error::config("gap range holds no whole frame count"));
        }
        Ok(Frames { duration, gap, min_len: up(self.min_instance_len).max(1) })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::config("fps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.zero_gap_prob) {
            return Err(Error::config("zero_gap_prob must lie in [0, 1]"));
        }
        if self.duration_range.0 > self.duration_range.1 || self.duration_range.0 < 0.0 {
            return Err(Error::config("duration range is empty"));
        }
        if self.gap_range.0 > self.gap_range.1 || self.gap_range.0 < 0.0 {
            return Err(Error::config("gap range is empty"));
        }
        if self.steps_range.0 == 0 || self.steps_range.0 > self.steps_range.1 {
            return Err(Error::config("steps range must be non-empty and start at 1 or more"));
        }
        if self.substeps_range.0 == 0 || self.substeps_range.0 > self.substeps_range.1 {
            return Err(Error::config("substeps range must be non-empty and start at 1 or more"));
        }
        if !(self.noise_sigma >= 0.0 && self.feature_noise >= 0.0) {
            return Err(Error::config("noise levels must be non-negative"));
        }
        if self.feature_dim < 4 {
            return Err(Error::config("feature_dim must be at least 4"));
        }
        let f = self.frame_ranges()?;
        // worst case: most instances, every gap at its maximum, shortest video
        let (steps, subs) = (self.steps_range.1 as u64, self.substeps_range.1 as u64);
        let gaps = (steps + 1) + steps * (subs - 1);
        let need = gaps * f.gap.1 + steps * subs * f.min_len;
        if need > f.duration.0 {
            return Err(Error::config(format!(
                "instances cannot fit: worst case needs {:.3} s but the shortest video is {:.3} s",
                need as f64 / self.fps,
                f.duration.0 as f64 / self.fps
            )));
        }
        Ok(())
    }
}

fn draw_gap(rng: &mut ChaCha8Rng, cfg: &SimConfig, f: &Frames) -> u64 {
    if rng.gen::<f64>() < cfg.zero_gap_prob {
        0
    } else {
        rng.gen_range(f.gap.0..=f.gap.1)
    }
}

fn slug(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", VERBS.choose(rng).unwrap(), NOUNS.choose(rng).unwrap())
}

/// Splits `extra` frames over `n` slots in proportion to uniform weights.
fn split_extra(rng: &mut ChaCha8Rng, n: usize, extra: u64) -> Vec<u64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.1).collect();
    let total: f64 = w.iter().sum();
    let mut out: Vec<u64> = w.iter().map(|x| (extra as f64 * x / total).floor() as u64).collect();
    let mut left = extra - out.iter().sum::<u64>();
    let mut i = 0;
    while left > 0 {
        out[i % n] += 1;
        left -= 1;
        i += 1;
    }
    out
}

/// One synthetic video. Fails only if the configuration is infeasible.
pub fn gen_video(cfg: &SimConfig, index: usize) -> Result<AnnotationSet> {
    cfg.validate()?;
    let f = cfg.frame_ranges()?;
    let mut rng = rng_for(cfg.seed, index, Stream::Annotations);

    let total = rng.gen_range(f.duration.0..=f.duration.1);
    let n_steps = rng.gen_range(cfg.steps_range.0..=cfg.steps_range.1);
    let subs: Vec<usize> = (0..n_steps).map(|_| rng.gen_range(cfg.substeps_range.0..=cfg.substeps_range.1)).collect();

    // substeps tile their step from its first to its last frame, so the
    // only gaps are the video lead, gaps between substeps of one step and
    // the gap after each step
    let video_lead = draw_gap(&mut rng, cfg, &f);
    let mut step_gaps: Vec<(Vec<u64>, u64)> = Vec::new();
    for &n in &subs {
        let inner: Vec<u64> = (1..n).map(|_| draw_gap(&mut rng, cfg, &f)).collect();
        let after = draw_gap(&mut rng, cfg, &f);
        step_gaps.push((inner, after));
    }
    let n_sub: usize = subs.iter().sum();
    let gap_total: u64 =
        video_lead + step_gaps.iter().map(|(inner, a)| inner.iter().sum::<u64>() + a).sum::<u64>();
    let used = gap_total + n_sub as u64 * f.min_len;
    debug_assert!(used <= total, "feasibility is checked up front");
    let extra = split_extra(&mut rng, n_sub, total - used);

    let to_t = |frame: u64| frame as f64 / cfg.fps;
    let mut instances = Vec::new();
    let mut cursor = video_lead;
    let mut k = 0;
    for (si, &n) in subs.iter().enumerate() {
        let (inner, after) = &step_gaps[si];
        let step_start = cursor;
        let mut substeps = Vec::new();
        for j in 0..n {
            if j > 0 {
                cursor += inner[j - 1];
            }
            let len = f.min_len + extra[k];
            k += 1;
            substeps.push(ActionInstance::new(
                Interval { start: to_t(cursor), end: to_t(cursor + len) },
                HierarchyLevel::Substep,
                slug(&mut rng),
            ));
            cursor += len;
        }
        instances.push(ActionInstance::new(
            Interval { start: to_t(step_start), end: to_t(cursor) },
            HierarchyLevel::Step,
            format!("step {} {}", si + 1, slug(&mut rng)),
        ));
        instances.extend(substeps);
        cursor += after;
    }
    // the gap after the last step is the trailing background
    debug_assert_eq!(cursor, total);
    let duration = to_t(total);
    instances.sort_by(|a, b| {
        (a.level, a.interval.start).partial_cmp(&(b.level, b.interval.start)).expect("finite endpoints")
    });
    Ok(AnnotationSet {
        video_id: video_id(index),
        duration,
        fps: cfg.fps,
        goal: GOALS.choose(&mut rng).unwrap().to_string(),
        instances,
    })
}

pub fn gen_annotations(cfg: &SimConfig) -> Result<Vec<AnnotationSet>> {
    cfg.validate()?;
    (0..cfg.videos).map(|i| gen_video(cfg, i)).collect()
}

fn noisy_softmax(logits: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma > 0.0 {
        for l in logits.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *l += sigma * z;
        }
    }
    softmax(logits)
}

fn progress_dist(p: Option<f64>, sigma: f64, hist: &HistogramConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut logits = match p {
        Some(p) => histogram_target(p, hist)?.iter().map(|x| x.max(1e-300).ln()).collect(),
        None => vec![0.0; hist.bins],
    };
    Ok(noisy_softmax(&mut logits, sigma, rng))
}

/// Score stream for `a` on its frame grid: one-hot state logits scaled by 10
/// and histogram progress logits, both perturbed by N(0, sigma²).
pub fn gen_scores(a: &AnnotationSet, noise_sigma: f64, hist: &HistogramConfig, seed: u64) -> Result<Vec<FrameScores>> {
    hist.validate()?;
    if noise_sigma < 0.0 {
        return Err(Error::config("noise_sigma must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(Stream::Scores as u64);
    a.timestamps()
        .into_iter()
        .map(|t| {
            let mut state = [0.0; 3];
            state[state_target(t, a).index()] = 10.0;
            let probs = noisy_softmax(&mut state, noise_sigma, &mut rng);
            let step = progress_dist(level_progress(t, a, HierarchyLevel::Step), noise_sigma, hist, &mut rng)?;
            let substep = progress_dist(level_progress(t, a, HierarchyLevel::Substep), noise_sigma, hist, &mut rng)?;
            Ok(FrameScores {
                timestamp: t,
                state_probs: [probs[0], probs[1], probs[2]],
                step_progress_dist: step,
                substep_progress_dist: substep,
            })
        })
        .collect()
}

/// [`gen_scores`] with the per-video seed derived from the config.
pub fn gen_scores_for(cfg: &SimConfig, index: usize, a: &AnnotationSet, hist: &HistogramConfig) -> Result<Vec<FrameScores>> {
    let seed = rng_for(cfg.seed, index, Stream::Scores).gen();
    gen_scores(a, cfg.noise_sigma, hist, seed)
}

/// Coordinates of the progress encoding inside each feature vector.
pub const STEP_PROGRESS: usize = 0;
pub const STEP_REMAINING: usize = 1;
pub const SUBSTEP_PROGRESS: usize = 2;
pub const SUBSTEP_REMAINING: usize = 3;

/// Per-state prototype vectors for the coordinates after the progress block.
pub fn state_prototypes(seed: u64, dim: usize) -> [Vec<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let extra = dim.saturating_sub(4);
    std::array::from_fn(|_| (0..extra).map(|_| StandardNormal.sample(&mut rng)).collect())
}

/// Feature rows: progress and its complement per level (zero outside an
/// instance), then the state prototype, all plus Gaussian noise.
pub fn gen_features(a: &AnnotationSet, cfg: &SimConfig, index: usize) -> Result<FeatureSequence> {
    if cfg.feature_dim < 4 {
        return Err(Error::config("feature_dim must be at least 4"));
    }
    let protos = state_prototypes(cfg.seed, cfg.feature_dim);
    let mut rng = rng_for(cfg.seed, index, Stream::Features);
    let timestamps = a.timestamps();
    let rows = timestamps
        .iter()
        .map(|&t| {
            let mut row = vec![0.0; cfg.feature_dim];
            if let Some(p) = level_progress(t, a, HierarchyLevel::Step) {
                row[STEP_PROGRESS] = p;
                row[STEP_REMAINING] = 1.0 - p;
            }
            if let Some(p) = level_progress(t, a, HierarchyLevel::Substep) {
                row[SUBSTEP_PROGRESS] = p;
                row[SUBSTEP_REMAINING] = 1.0 - p;
            }
            let state: StateClass = state_target(t, a);
            row[4..].copy_from_slice(&protos[state.index()]);
            if cfg.feature_noise > 0.0 {
                for x in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x += cfg.feature_noise * z;
                }
            }
            row
        })
        .collect();
    Ok(FeatureSequence { timestamps, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_annotations;
    use crate::scoring::targets::frame_inside;

    fn gaps(a: &AnnotationSet, level: HierarchyLevel) -> Vec<f64> {
        a.intervals(level).windows(2).map(|w| w[1].start - w[0].end).collect()
    }

    #[test]
    fn output_is_valid_and_deterministic() {
        let cfg = SimConfig { videos: 20, seed: 5, ..Default::default() };
        let a = gen_annotations(&cfg).unwrap();
        assert_eq!(a, gen_annotations(&cfg).unwrap());
        for v in &a {
            assert!(validate_annotations(v).is_empty(), "{:?}", validate_annotations(v));
            assert!(crate::model::validate_annotations_with(v, crate::model::ValidationOptions { strict_nesting: true })
                .is_empty());
            assert!(v.duration >= 90.0 - 1e-9 && v.duration <= 150.0 + 1e-9);
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn zero_gap_prob_one_touches() {
        let cfg = SimConfig { videos: 10, zero_gap_prob: 1.0, ..Default::default() };
        for v in gen_annotations(&cfg).unwrap() {
            for level in HierarchyLevel::TEMPORAL {
                assert!(gaps(&v, level).iter().all(|g| *g == 0.0));
            }
        }
    }

    #[test]
    fn zero_gap_prob_zero_respects_range() {
        let cfg = SimConfig { videos: 10, zero_gap_prob: 0.0, gap_range: (1.0, 2.0), ..Default::default() };
        for v in gen_annotations(&cfg).unwrap() {
            for level in HierarchyLevel::TEMPORAL {
                for g in gaps(&v, level) {
                    assert!((1.0 - 1e-9..=2.0 + 1e-9).contains(&g), "gap {g}");
                }
            }
        }
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let cfg = SimConfig { duration_range: (10.0, 20.0), ..Default::default() };
        assert!(matches!(gen_annotations(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn noise_free_scores_match_targets() {
        let cfg = SimConfig { videos: 1, ..Default::default() };
        let a = &gen_annotations(&cfg).unwrap()[0];
        let hist = HistogramConfig::default();
        let s = gen_scores_for(&cfg, 0, a, &hist).unwrap();
        assert_eq!(s.len(), a.frame_count());
        for fs in &s {
            fs.check().unwrap();
            let argmax = (0..3).max_by(|&i, &j| fs.state_probs[i].total_cmp(&fs.state_probs[j])).unwrap();
            assert_eq!(argmax, state_target(fs.timestamp, a).index());
            if let Some(p) = level_progress(fs.timestamp, a, HierarchyLevel::Substep) {
                let target = histogram_target(p, &hist).unwrap();
                for (x, y) in fs.substep_progress_dist.iter().zip(&target) {
                    assert!((x - y).abs() < 1e-12);
                }
            } else {
                assert!(fs.substep_progress_dist.iter().all(|x| (x - 0.1).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn noisy_scores_stay_normalized_and_seeded() {
        let cfg = SimConfig { videos: 1, noise_sigma: 2.0, ..Default::default() };
        let a = &gen_annotations(&cfg).unwrap()[0];
        let hist = HistogramConfig::default();
        let s = gen_scores_for(&cfg, 0, a, &hist).unwrap();
        s.iter().for_each(|f| f.check().unwrap());
        assert_eq!(s, gen_scores_for(&cfg, 0, a, &hist).unwrap());
    }

    #[test]
    fn noise_free_features_encode_progress() {
        let cfg = SimConfig { videos: 1, feature_noise: 0.0, ..Default::default() };
        let a = &gen_annotations(&cfg).unwrap()[0];
        let f = gen_features(a, &cfg, 0).unwrap();
        for (t, row) in f.timestamps.iter().zip(&f.rows) {
            let sub = a.intervals(HierarchyLevel::Substep).into_iter().find(|iv| frame_inside(*t, iv, a.duration));
            match sub {
                Some(iv) => assert_eq!(row[SUBSTEP_PROGRESS], (t - iv.start) / (iv.end - iv.start)),
                None => assert_eq!(row[SUBSTEP_PROGRESS] + row[SUBSTEP_REMAINING], 0.0),
            }
        }
        let noisy = SimConfig { feature_noise: 0.3, ..cfg };
        assert_eq!(gen_features(a, &noisy, 0).unwrap(), gen_features(a, &noisy, 0).unwrap());
    }

    #[test]
    fn noise_free_round_trip_through_detector() {
        use crate::detector::{run_stream, DetectorConfig};
        use crate::metrics::hungarian_f1;
        let hist = HistogramConfig::default();
        for zero_gap_prob in [0.0, 0.5, 1.0] {
            let cfg = SimConfig { videos: 6, zero_gap_prob, seed: 11, ..Default::default() };
            for (i, a) in gen_annotations(&cfg).unwrap().iter().enumerate() {
                let scores = gen_scores_for(&cfg, i, a, &hist).unwrap();
                let em = run_stream(&scores, &DetectorConfig::default()).unwrap();
                for level in HierarchyLevel::TEMPORAL {
                    let pred: Vec<Interval> =
                        em.iter().filter(|e| e.instance.level == level).map(|e| e.instance.interval).collect();
                    let (f1, _) = hungarian_f1(&a.intervals(level), &pred, 0.7);
                    assert_eq!(f1, 1.0, "{level} zero_gap_prob {zero_gap_prob} video {i}");
                }
            }
        }
    }
}
