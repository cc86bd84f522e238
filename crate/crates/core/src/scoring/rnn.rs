//! Stacked Elman recurrence with three linear heads, hand-written backprop.
//!
//! All parameters live in one flat vector so the optimizer and the gradient
//! checks can treat the model as a point in `R^n`. Tensor order is:
//! per layer `w_x (H×in)`, `w_h (H×H)`, `b (H)`; then the state head
//! `(3×H, 3)`, the step-progress head `(B×H, B)` and the substep-progress
//! head `(B×H, B)`. Matrices are row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::histogram::HistogramConfig;
use super::loss::{soft_cross_entropy, softmax};
use crate::error::{Error, Result};
use crate::model::{FrameScores, StateClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerDims {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub bins: usize,
}

impl ScorerDims {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.layers == 0 || self.bins == 0 {
            return Err(Error::config(format!("all scorer dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Tensor {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Debug)]
struct LayerTensors {
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
}

#[derive(Clone, Debug)]
struct Head {
    w: Tensor,
    b: Tensor,
}

#[derive(Clone, Debug)]
struct Layout {
    layers: Vec<LayerTensors>,
    state: Head,
    step: Head,
    substep: Head,
    total: usize,
}

impl Layout {
    fn new(d: &ScorerDims) -> Self {
        let mut offset = 0;
        let mut take = |rows: usize, cols: usize| {
            let t = Tensor { offset, rows, cols };
            offset += rows * cols;
            t
        };
        let h = d.hidden_dim;
        let mut layers = Vec::with_capacity(d.layers);
        for l in 0..d.layers {
            let input = if l == 0 { d.feature_dim } else { h };
            layers.push(LayerTensors { wx: take(h, input), wh: take(h, h), b: take(h, 1) });
        }
        let state = Head { w: take(3, h), b: take(3, 1) };
        let step = Head { w: take(d.bins, h), b: take(d.bins, 1) };
        let substep = Head { w: take(d.bins, h), b: take(d.bins, 1) };
        Self { layers, state, step, substep, total: offset }
    }

    /// `(name, offset, len)` for every tensor, in storage order.
    fn named(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w_x"), l.wx.offset, l.wx.len()));
            out.push((format!("layer{i}.w_h"), l.wh.offset, l.wh.len()));
            out.push((format!("layer{i}.b"), l.b.offset, l.b.len()));
        }
        for (name, head) in [("state", &self.state), ("step_progress", &self.step), ("substep_progress", &self.substep)] {
            out.push((format!("{name}.w"), head.w.offset, head.w.len()));
            out.push((format!("{name}.b"), head.b.offset, head.b.len()));
        }
        out
    }
}

/// `out += M x`
fn matvec_acc(p: &[f64], t: Tensor, x: &[f64], out: &mut [f64]) {
    let m = &p[t.offset..t.offset + t.len()];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * t.cols..(r + 1) * t.cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ y`
fn matvec_t_acc(p: &[f64], t: Tensor, y: &[f64], out: &mut [f64]) {
    let m = &p[t.offset..t.offset + t.len()];
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &m[r * t.cols..(r + 1) * t.cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

/// `G += y xᵀ`
fn outer_acc(g: &mut [f64], t: Tensor, y: &[f64], x: &[f64]) {
    let m = &mut g[t.offset..t.offset + t.len()];
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut m[r * t.cols..(r + 1) * t.cols];
        for (o, xv) in row.iter_mut().zip(x) {
            *o += yr * xv;
        }
    }
}

fn vec_acc(g: &mut [f64], t: Tensor, y: &[f64]) {
    for (o, v) in g[t.offset..t.offset + t.len()].iter_mut().zip(y) {
        *o += v;
    }
}

/// Supervision for one frame. Progress targets are histograms and are
/// `None` where the frame lies in no instance of that level.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTarget {
    pub state: StateClass,
    pub step_progress: Option<Vec<f64>>,
    pub substep_progress: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub state: f64,
    pub step_progress: f64,
    pub substep_progress: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { state: 1.0, step_progress: 1.0, substep_progress: 1.0 }
    }
}

/// Hidden state of every layer.
pub type Hidden = Vec<Vec<f64>>;

struct Trace {
    /// `hidden[t][l]` after processing frame `t`.
    hidden: Vec<Hidden>,
    logits: Vec<[Vec<f64>; 3]>,
}

/// The recurrent scorer: shared backbone, state head and two progress heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub dims: ScorerDims,
    pub histogram: HistogramConfig,
    params: Vec<f64>,
}

impl ScorerModel {
    pub fn zeros(dims: ScorerDims, histogram: HistogramConfig) -> Result<Self> {
        dims.validate()?;
        if histogram.bins != dims.bins {
            return Err(Error::Dimension { expected: dims.bins, got: histogram.bins });
        }
        let total = Layout::new(&dims).total;
        Ok(Self { dims, histogram, params: vec![0.0; total] })
    }

    /// Uniform `(-1/√H, 1/√H)` initialization.
    pub fn random(dims: ScorerDims, histogram: HistogramConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dims, histogram)?;
        let bound = 1.0 / (dims.hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.params.iter_mut().for_each(|p| *p = rng.gen_range(-bound..bound));
        Ok(m)
    }

    /// Checks that the parameter vector fits the dimensions, e.g. after loading.
    pub fn check_shape(&self) -> Result<()> {
        self.dims.validate()?;
        if self.histogram.bins != self.dims.bins {
            return Err(Error::Dimension { expected: self.dims.bins, got: self.histogram.bins });
        }
        let expected = Layout::new(&self.dims).total;
        if self.params.len() != expected {
            return Err(Error::Dimension { expected, got: self.params.len() });
        }
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter tensors as `(name, offset, len)`.
    pub fn tensor_names(&self) -> Vec<(String, usize, usize)> {
        Layout::new(&self.dims).named()
    }

    pub fn initial_hidden(&self) -> Hidden {
        vec![vec![0.0; self.dims.hidden_dim]; self.dims.layers]
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        for row in features {
            if row.len() != self.dims.feature_dim {
                return Err(Error::Dimension { expected: self.dims.feature_dim, got: row.len() });
            }
        }
        Ok(())
    }

    fn run(&self, layout: &Layout, features: &[Vec<f64>], h0: &Hidden) -> Trace {
        let p = &self.params;
        let mut hidden = Vec::with_capacity(features.len());
        let mut logits = Vec::with_capacity(features.len());
        let mut prev = h0.clone();
        for x in features {
            let mut cur: Hidden = Vec::with_capacity(self.dims.layers);
            for (l, lt) in layout.layers.iter().enumerate() {
                let input: &[f64] = if l == 0 { x } else { &cur[l - 1] };
                let mut a = p[lt.b.offset..lt.b.offset + lt.b.len()].to_vec();
                matvec_acc(p, lt.wx, input, &mut a);
                matvec_acc(p, lt.wh, &prev[l], &mut a);
                a.iter_mut().for_each(|v| *v = v.tanh());
                cur.push(a);
            }
            let top = cur.last().expect("at least one layer");
            let head = |h: &Head| {
                let mut z = p[h.b.offset..h.b.offset + h.b.len()].to_vec();
                matvec_acc(p, h.w, top, &mut z);
                z
            };
            logits.push([head(&layout.state), head(&layout.step), head(&layout.substep)]);
            prev = cur.clone();
            hidden.push(cur);
        }
        Trace { hidden, logits }
    }

    /// Causal forward pass: the output at `t` depends only on `features[..=t]`.
    pub fn infer(&self, timestamps: &[f64], features: &[Vec<f64>]) -> Result<Vec<FrameScores>> {
        if timestamps.len() != features.len() {
            return Err(Error::data(format!(
                "{} timestamps for {} feature rows",
                timestamps.len(),
                features.len()
            )));
        }
        self.check_features(features)?;
        let layout = Layout::new(&self.dims);
        let trace = self.run(&layout, features, &self.initial_hidden());
        Ok(trace
            .logits
            .iter()
            .zip(timestamps)
            .map(|([s, step, sub], &t)| {
                let sp = softmax(s);
                FrameScores {
                    timestamp: t,
                    state_probs: [sp[0], sp[1], sp[2]],
                    step_progress_dist: softmax(step),
                    substep_progress_dist: softmax(sub),
                }
            })
            .collect())
    }

    /// Summed loss over a window and its gradient, starting from hidden state `h0`.
    /// Returns `(loss, grad, final hidden state)`; the hidden state is detached.
    pub fn loss_and_grad(
        &self,
        features: &[Vec<f64>],
        targets: &[FrameTarget],
        h0: &Hidden,
        weights: &LossWeights,
    ) -> Result<(f64, Vec<f64>, Hidden)> {
        if features.len() != targets.len() {
            return Err(Error::data("feature and target windows differ in length"));
        }
        self.check_features(features)?;
        let layout = Layout::new(&self.dims);
        let trace = self.run(&layout, features, h0);
        let p = &self.params;
        let h = self.dims.hidden_dim;
        let nl = self.dims.layers;
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;

        // head gradients, collected as dL/d(top hidden) per frame
        let mut dtop: Vec<Vec<f64>> = Vec::with_capacity(features.len());
        for (t, target) in targets.iter().enumerate() {
            let top = &trace.hidden[t][nl - 1];
            let mut dh = vec![0.0; h];
            let mut one_hot = [0.0; 3];
            one_hot[target.state.index()] = 1.0;
            let heads: [(&Head, Option<&[f64]>, f64); 3] = [
                (&layout.state, Some(&one_hot[..]), weights.state),
                (&layout.step, target.step_progress.as_deref(), weights.step_progress),
                (&layout.substep, target.substep_progress.as_deref(), weights.substep_progress),
            ];
            for (k, (head, tgt, w)) in heads.into_iter().enumerate() {
                let Some(tgt) = tgt else { continue };
                if w == 0.0 {
                    continue;
                }
                let (l, mut dz) = soft_cross_entropy(&trace.logits[t][k], tgt);
                loss += w * l;
                dz.iter_mut().for_each(|v| *v *= w);
                outer_acc(&mut grad, head.w, &dz, top);
                vec_acc(&mut grad, head.b, &dz);
                matvec_t_acc(p, head.w, &dz, &mut dh);
            }
            dtop.push(dh);
        }

        // backprop through time
        let mut dnext: Hidden = vec![vec![0.0; h]; nl];
        for t in (0..features.len()).rev() {
            let mut from_above = dtop[t].clone();
            for l in (0..nl).rev() {
                let lt = &layout.layers[l];
                let hcur = &trace.hidden[t][l];
                let hprev: &[f64] = if t == 0 { &h0[l] } else { &trace.hidden[t - 1][l] };
                let input: &[f64] = if l == 0 { &features[t] } else { &trace.hidden[t][l - 1] };
                let da: Vec<f64> = from_above
                    .iter()
                    .zip(&dnext[l])
                    .zip(hcur)
                    .map(|((a, b), hv)| (a + b) * (1.0 - hv * hv))
                    .collect();
                outer_acc(&mut grad, lt.wx, &da, input);
                outer_acc(&mut grad, lt.wh, &da, hprev);
                vec_acc(&mut grad, lt.b, &da);
                let mut dprev = vec![0.0; h];
                matvec_t_acc(p, lt.wh, &da, &mut dprev);
                dnext[l] = dprev;
                if l > 0 {
                    let mut dbelow = vec![0.0; h];
                    matvec_t_acc(p, lt.wx, &da, &mut dbelow);
                    from_above = dbelow;
                }
            }
        }

        let last = trace.hidden.last().cloned().unwrap_or_else(|| h0.clone());
        Ok((loss, grad, last))
    }

    /// Loss only; used by finite-difference checks.
    pub fn loss(&self, features: &[Vec<f64>], targets: &[FrameTarget], h0: &Hidden, weights: &LossWeights) -> Result<f64> {
        Ok(self.loss_and_grad(features, targets, h0, weights)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(f: usize, h: usize, l: usize) -> ScorerDims {
        ScorerDims { feature_dim: f, hidden_dim: h, layers: l, bins: 10 }
    }

    fn feats(t: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_model_gives_uniform_outputs() {
        let m = ScorerModel::zeros(dims(4, 5, 2), HistogramConfig::default()).unwrap();
        let x = feats(6, 4, 1);
        let ts: Vec<f64> = (0..6).map(|i| i as f64).collect();
        for fs in m.infer(&ts, &x).unwrap() {
            assert!(fs.state_probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
            assert!(fs.step_progress_dist.iter().all(|p| (p - 0.1).abs() < 1e-15));
            assert!(fs.substep_progress_dist.iter().all(|p| (p - 0.1).abs() < 1e-15));
        }
    }

    #[test]
    fn one_output_per_frame_and_normalized() {
        let m = ScorerModel::random(dims(3, 8, 3), HistogramConfig::default(), 4).unwrap();
        let x = feats(17, 3, 2);
        let ts: Vec<f64> = (0..17).map(|i| i as f64 * 0.5).collect();
        let out = m.infer(&ts, &x).unwrap();
        assert_eq!(out.len(), 17);
        for fs in &out {
            assert!((fs.state_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            fs.check().unwrap();
        }
    }

    #[test]
    fn inference_is_causal() {
        let m = ScorerModel::random(dims(3, 6, 2), HistogramConfig::default(), 9).unwrap();
        let x = feats(20, 3, 3);
        let ts: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let full = m.infer(&ts, &x).unwrap();
        for cut in [1, 5, 13, 20] {
            let part = m.infer(&ts[..cut], &x[..cut]).unwrap();
            assert_eq!(part[..], full[..cut]);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = ScorerModel::zeros(dims(3, 4, 1), HistogramConfig::default()).unwrap();
        assert!(matches!(m.infer(&[0.0], &[vec![1.0, 2.0]]), Err(Error::Dimension { .. })));
    }
}
