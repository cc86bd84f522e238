use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::histogram::{histogram_target, HistogramConfig};
use super::io::FeatureSequence;
use super::rnn::{FrameTarget, Hidden, LossWeights, ScorerDims, ScorerModel};
use super::targets::{level_progress, state_target};
use crate::error::{Error, Result};
use crate::model::{AnnotationSet, HierarchyLevel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub feature_dim: usize,
    pub recurrent_layers: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub bptt_window: usize,
    pub histogram: HistogramConfig,
    pub loss_weights: LossWeights,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            recurrent_layers: 3,
            hidden_dim: 32,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 30,
            bptt_window: 64,
            histogram: HistogramConfig::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl ScorerConfig {
    pub fn dims(&self) -> ScorerDims {
        ScorerDims {
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            layers: self.recurrent_layers,
            bins: self.histogram.bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        self.histogram.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.bptt_window == 0 {
            return Err(Error::config("batch_size, epochs and bptt_window must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::config("learning rate must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay and standard bias correction.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Per-frame supervision for a feature sequence.
pub fn frame_targets(timestamps: &[f64], a: &AnnotationSet, hist: &HistogramConfig) -> Vec<FrameTarget> {
    let hist_at = |t: f64, level| {
        level_progress(t, a, level).map(|p| histogram_target(p.clamp(0.0, 1.0), hist).expect("progress clamped"))
    };
    timestamps
        .iter()
        .map(|&t| FrameTarget {
            state: state_target(t, a),
            step_progress: hist_at(t, HierarchyLevel::Step),
            substep_progress: hist_at(t, HierarchyLevel::Substep),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ScorerModel,
    /// Mean per-frame loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains a fresh scorer with truncated BPTT and AdamW. Deterministic given `seed`.
///
/// Each optimizer step consumes one `bptt_window` chunk from every video of a
/// batch; hidden state is carried across chunks of the same video but not
/// differentiated through.
pub fn train_scorer(
    features: &[FeatureSequence],
    annotations: &[AnnotationSet],
    cfg: &ScorerConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::data("empty training set"));
    }
    if features.len() != annotations.len() {
        return Err(Error::data(format!(
            "{} feature sequences for {} annotation sets",
            features.len(),
            annotations.len()
        )));
    }
    for seq in features {
        if seq.dim() != Some(cfg.feature_dim) && !seq.rows.is_empty() {
            return Err(Error::Dimension { expected: cfg.feature_dim, got: seq.dim().unwrap_or(0) });
        }
    }

    let targets: Vec<Vec<FrameTarget>> = features
        .iter()
        .zip(annotations)
        .map(|(f, a)| frame_targets(&f.timestamps, a, &cfg.histogram))
        .collect();
    let total_frames: usize = features.iter().map(|f| f.rows.len()).sum();
    if total_frames == 0 {
        return Err(Error::data("training set has no frames"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_seed = rand::Rng::gen::<u64>(&mut rng);
    let mut model = ScorerModel::random(cfg.dims(), cfg.histogram, init_seed)?;
    let mut opt = AdamW::new(model.num_params(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let w = cfg.bptt_window;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut hidden: Vec<Hidden> = batch.iter().map(|_| model.initial_hidden()).collect();
            let longest = batch.iter().map(|&i| features[i].rows.len()).max().unwrap_or(0);
            let mut start = 0;
            while start < longest {
                let mut grad = vec![0.0; model.num_params()];
                let mut frames = 0usize;
                for (slot, &vid) in batch.iter().enumerate() {
                    let n = features[vid].rows.len();
                    if start >= n {
                        continue;
                    }
                    let end = (start + w).min(n);
                    let (loss, g, last) = model.loss_and_grad(
                        &features[vid].rows[start..end],
                        &targets[vid][start..end],
                        &hidden[slot],
                        &cfg.loss_weights,
                    )?;
                    epoch_loss += loss;
                    frames += end - start;
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    hidden[slot] = last;
                }
                let scale = 1.0 / frames as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                opt.step(model.params_mut(), &grad);
                start += w;
            }
        }
        trace.push(epoch_loss / total_frames as f64);
    }
    Ok(TrainOutcome { model, loss_trace: trace })
}

/// Runs the trained model over a feature sequence.
pub fn infer_scores(model: &ScorerModel, seq: &FeatureSequence) -> Result<Vec<crate::model::FrameScores>> {
    model.infer(&seq.timestamps, &seq.rows)
}
