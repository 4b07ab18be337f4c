//! Learned frame-distance metric.
//!
//! Triplets of frames are labelled by pixel similarity, and an affine map
//! over pixel features is trained so that embedding distances agree with
//! those labels. The loss is a binary cross-entropy on the sigmoid of the
//! difference between the anchor-negative and anchor-positive distances.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_pixel_feature, psnr, DEFAULT_FEATURE_SIDE, MIN_FEATURE_SIDE};
use crate::media_io::{EmbeddingSet, FrameSet, TAG_BUILTIN_LEARNED};

/// Clamp for the sigmoid output inside the logarithms.
pub const LOSS_EPSILON: f64 = 1e-7;
pub const DEFAULT_EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub z: u8,
}

/// How the PSNR comparison turns into the label `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// `z = 1` when the positive is more PSNR-similar to the anchor than
    /// the negative is (PSNR read as a similarity, `-PSNR` as the distance).
    #[default]
    PositiveCloser,
    /// `z = 1` when the negative has the higher PSNR.
    NegativeCloser,
}

impl LabelRule {
    /// Label for a triplet given the anchor's PSNR to the positive and the
    /// negative, or `None` on an exact tie.
    pub fn label(self, psnr_ap: f64, psnr_an: f64) -> Option<u8> {
        if psnr_ap == psnr_an {
            return None;
        }
        let positive_closer = psnr_ap > psnr_an;
        Some(match self {
            LabelRule::PositiveCloser => positive_closer as u8,
            LabelRule::NegativeCloser => (!positive_closer) as u8,
        })
    }
}

/// Temporal sampling prior for triplets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletSampling {
    /// Positives are drawn within this many frames of the anchor.
    pub positive_window: usize,
    /// Negatives are drawn farther than this many frames from the anchor.
    pub negative_gap: usize,
    pub label_rule: LabelRule,
}

impl Default for TripletSampling {
    fn default() -> Self {
        Self {
            positive_window: 3,
            negative_gap: 8,
            label_rule: LabelRule::default(),
        }
    }
}

pub fn build_triplets(frames: &FrameSet, count: usize, rng: &mut impl Rng) -> Result<Vec<Triplet>> {
    build_triplets_with(frames, count, rng, &TripletSampling::default())
}

/// Samples `count` candidate triplets and labels each by PSNR. Exact ties
/// are dropped, so fewer than `count` may come back.
pub fn build_triplets_with(
    frames: &FrameSet,
    count: usize,
    rng: &mut impl Rng,
    sampling: &TripletSampling,
) -> Result<Vec<Triplet>> {
    let n = frames.len();
    if n < 3 {
        return Err(Error::TooFewFrames(n));
    }
    if count == 0 {
        return Err(Error::BadParams("triplet count must be at least 1".into()));
    }
    let mut psnr_cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pair_psnr = |a: usize, b: usize| -> Result<f64> {
        let key = (a.min(b), a.max(b));
        if let Some(&v) = psnr_cache.get(&key) {
            return Ok(v);
        }
        let v = psnr(frames.frame(a), frames.frame(b))?;
        psnr_cache.insert(key, v);
        Ok(v)
    };

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = rng.random_range(0..n);
        let lo = anchor.saturating_sub(sampling.positive_window.max(1));
        let hi = (anchor + sampling.positive_window.max(1)).min(n - 1);
        let near: Vec<usize> = (lo..=hi).filter(|&i| i != anchor).collect();
        let positive = near[rng.random_range(0..near.len())];
        let far: Vec<usize> = (0..n)
            .filter(|&i| anchor.abs_diff(i) > sampling.negative_gap)
            .collect();
        let negative = if far.is_empty() {
            let rest: Vec<usize> = (0..n).filter(|&i| i != anchor && i != positive).collect();
            rest[rng.random_range(0..rest.len())]
        } else {
            far[rng.random_range(0..far.len())]
        };
        let ap = pair_psnr(anchor, positive)?;
        let an = pair_psnr(anchor, negative)?;
        if let Some(z) = sampling.label_rule.label(ap, an) {
            out.push(Triplet {
                anchor,
                positive,
                negative,
                z,
            });
        }
    }
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Loss from the signed distance gap `s = |a - n| - |a - p|`.
fn loss_from_gap(s: f64, z: u8) -> f64 {
    let xi = sigmoid(s).clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
    let z = z as f64;
    -z * xi.ln() + (z - 1.0) * (1.0 - xi).ln()
}

/// `dL/ds`; zero where the clamp is active.
fn loss_gap_derivative(s: f64, z: u8) -> f64 {
    let xi = sigmoid(s);
    if !(LOSS_EPSILON..=1.0 - LOSS_EPSILON).contains(&xi) {
        return 0.0;
    }
    xi - z as f64
}

/// Triplet distance loss for embeddings of an anchor, positive, and negative.
pub fn distance_loss(r_a: &[f64], r_p: &[f64], r_n: &[f64], z: u8) -> Result<f64> {
    if r_a.len() != r_p.len() || r_a.len() != r_n.len() {
        return Err(Error::DimensionMismatch(format!(
            "triplet embeddings of length {}, {}, {}",
            r_a.len(),
            r_p.len(),
            r_n.len()
        )));
    }
    if r_a.iter().chain(r_p).chain(r_n).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValues);
    }
    let s = euclidean(r_a, r_n) - euclidean(r_a, r_p);
    Ok(loss_from_gap(s, z))
}

/// Euclidean distance between two embeddings.
pub fn learned_distance(v_i: &[f64], v_j: &[f64]) -> Result<f64> {
    if v_i.len() != v_j.len() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings of length {} and {}",
            v_i.len(),
            v_j.len()
        )));
    }
    Ok(euclidean(v_i, v_j))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Affine map `x -> W x + b` applied to pixel features.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedEmbedding {
    side: usize,
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out x d_in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub meta: TrainingMeta,
}

impl LearnedEmbedding {
    pub fn new(side: usize, d_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if side < MIN_FEATURE_SIDE {
            return Err(Error::SideTooSmall(side));
        }
        let d_in = 3 * side * side;
        if d_out == 0 || d_out > d_in {
            return Err(Error::BadParams(format!(
                "output dimension {d_out} must be in 1..={d_in}"
            )));
        }
        if weights.len() != d_out * d_in || bias.len() != d_out {
            return Err(Error::DimensionMismatch(format!(
                "affine map {d_out} x {d_in} has {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValues);
        }
        Ok(Self {
            side,
            d_in,
            d_out,
            weights,
            bias,
            meta: TrainingMeta::default(),
        })
    }

    /// Gaussian initialization with variance `1 / d_out`, which preserves
    /// pixel-feature distances in expectation.
    pub fn random(side: usize, d_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(side, d_out, &mut rng)
    }

    fn random_with(side: usize, d_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let d_in = 3 * side * side;
        let normal = Normal::new(0.0, 1.0 / (d_out.max(1) as f64).sqrt())
            .map_err(|e| Error::BadParams(e.to_string()))?;
        let weights = (0..d_out * d_in)
            .map(|_| round_f32(normal.sample(rng)))
            .collect();
        Self::new(side, d_out, weights, vec![0.0; d_out])
    }

    /// The identity map: embedding distances equal pixel-feature distances.
    pub fn identity(side: usize) -> Result<Self> {
        let d = 3 * side * side;
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Self::new(side, d, w, vec![0.0; d])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch(format!(
                "map expects {} inputs, got {}",
                self.d_in,
                x.len()
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect())
    }

    /// Stores the map as a `d_out x (d_in + 1)` matrix, bias in the last
    /// column, tagged `builtin-learned`.
    pub fn to_embedding_set(&self) -> EmbeddingSet {
        let mut values = Vec::with_capacity(self.d_out * (self.d_in + 1));
        for (row, b) in self.weights.chunks_exact(self.d_in).zip(&self.bias) {
            values.extend(row.iter().map(|&v| v as f32));
            values.push(*b as f32);
        }
        EmbeddingSet::new(self.d_out, self.d_in + 1, values, TAG_BUILTIN_LEARNED)
            .expect("learned parameters are finite")
    }

    pub fn from_embedding_set(set: &EmbeddingSet) -> Result<Self> {
        if set.provider_tag != TAG_BUILTIN_LEARNED {
            return Err(Error::HeaderMismatch(format!(
                "expected provider tag {TAG_BUILTIN_LEARNED}, found {}",
                set.provider_tag
            )));
        }
        let d_in = set.dim() - 1;
        let side = ((d_in / 3) as f64).sqrt().round() as usize;
        if 3 * side * side != d_in {
            return Err(Error::HeaderMismatch(format!(
                "{d_in} inputs is not a square RGB feature"
            )));
        }
        let mut weights = Vec::with_capacity(set.len() * d_in);
        let mut bias = Vec::with_capacity(set.len());
        for r in 0..set.len() {
            let row = set.row(r);
            weights.extend(row[..d_in].iter().map(|&v| v as f64));
            bias.push(row[d_in] as f64);
        }
        Self::new(side, set.len(), weights, bias)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    dot2(a, b, b).0
}

/// `(row . a, row . b)` in one pass. Lane-wise partial sums let the
/// compiler vectorize without reassociating a single accumulator.
fn dot2(row: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    const L: usize = 8;
    let mut sa = [0.0f64; L];
    let mut sb = [0.0f64; L];
    let n = row.len() / L * L;
    for ((r, x), y) in row[..n].chunks_exact(L).zip(a[..n].chunks_exact(L)).zip(b[..n].chunks_exact(L)) {
        for k in 0..L {
            sa[k] += r[k] * x[k];
            sb[k] += r[k] * y[k];
        }
    }
    let mut ta: f64 = sa.iter().sum();
    let mut tb: f64 = sb.iter().sum();
    for i in n..row.len() {
        ta += row[i] * a[i];
        tb += row[i] * b[i];
    }
    (ta, tb)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Optimizer and schedule settings for [`train_metric`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Stop after this many epochs without validation improvement.
    pub early_stop_patience: usize,
    /// Halve the learning rate after this many epochs without improvement.
    pub lr_halving_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub side: usize,
    pub embedding_dim: usize,
    /// Candidate triplets to sample; `None` means 50 per frame.
    pub triplet_count: Option<usize>,
    pub validation_fraction: f64,
    pub sampling: TripletSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            early_stop_patience: 10,
            lr_halving_patience: 3,
            max_epochs: 200,
            seed: 0,
            side: DEFAULT_FEATURE_SIDE,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            triplet_count: None,
            validation_fraction: 0.1,
            sampling: TripletSampling::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::BadParams("batch size must be at least 1".into()));
        }
        if self.early_stop_patience == 0 || self.lr_halving_patience == 0 {
            return Err(Error::BadParams("patience values must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::BadParams("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::BadParams("validation fraction must be in [0, 1)".into()));
        }
        if self.side < MIN_FEATURE_SIDE {
            return Err(Error::SideTooSmall(self.side));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub best_validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub triplets: usize,
    pub train_triplets: usize,
    pub validation_triplets: usize,
    /// Mean loss over all triplets before the first update.
    pub initial_loss: f64,
    /// Mean loss over all triplets with the restored best parameters.
    pub final_loss: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

/// Mean loss and its gradient with respect to the row-major weights.
///
/// The bias cancels in every embedding difference, so its gradient is
/// identically zero and is not returned.
pub fn loss_and_weight_gradient(
    model: &LearnedEmbedding,
    features: &[Vec<f64>],
    triplets: &[Triplet],
) -> (f64, Vec<f64>) {
    let (loss, terms) = triplet_terms(model, features, triplets);
    let grad = accumulate_gradient(model, features, triplets, &terms);
    (loss, grad)
}

/// Mean loss over `triplets`.
pub fn mean_loss(model: &LearnedEmbedding, features: &[Vec<f64>], triplets: &[Triplet]) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let total: f64 = triplets
        .par_iter()
        .map(|t| {
            let (s, ..) = gap(model, features, t);
            loss_from_gap(s, t.z)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / triplets.len() as f64
}

/// Projected differences and the distance gap for one triplet.
fn gap(model: &LearnedEmbedding, features: &[Vec<f64>], t: &Triplet) -> (f64, Vec<f64>, Vec<f64>) {
    let a = &features[t.anchor];
    let dn: Vec<f64> = a.iter().zip(&features[t.negative]).map(|(x, y)| x - y).collect();
    let dp: Vec<f64> = a.iter().zip(&features[t.positive]).map(|(x, y)| x - y).collect();
    let mut qn = Vec::with_capacity(model.d_out);
    let mut qp = Vec::with_capacity(model.d_out);
    for row in model.weights.chunks_exact(model.d_in) {
        let (n, p) = dot2(row, &dn, &dp);
        qn.push(n);
        qp.push(p);
    }
    let rn = qn.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rp = qp.iter().map(|x| x * x).sum::<f64>().sqrt();
    (rn - rp, scaled_unit(qn, rn), scaled_unit(qp, rp))
}

fn scaled_unit(mut q: Vec<f64>, norm: f64) -> Vec<f64> {
    if norm > 0.0 {
        q.iter_mut().for_each(|x| *x /= norm);
    } else {
        q.iter_mut().for_each(|x| *x = 0.0);
    }
    q
}

/// Per-triplet coefficient vectors: `dL/dW = sum_t cn_t dn_t^T - cp_t dp_t^T`.
struct Terms {
    cn: Vec<f64>,
    cp: Vec<f64>,
}

fn triplet_terms(model: &LearnedEmbedding, features: &[Vec<f64>], triplets: &[Triplet]) -> (f64, Vec<Terms>) {
    let scale = 1.0 / triplets.len().max(1) as f64;
    let per: Vec<(f64, Terms)> = triplets
        .par_iter()
        .map(|t| {
            let (s, un, up) = gap(model, features, t);
            let g = loss_gap_derivative(s, t.z) * scale;
            let cn = un.into_iter().map(|x| x * g).collect();
            let cp = up.into_iter().map(|x| x * g).collect();
            (loss_from_gap(s, t.z), Terms { cn, cp })
        })
        .collect();
    let mut loss = 0.0;
    let mut terms = Vec::with_capacity(per.len());
    for (l, t) in per {
        loss += l;
        terms.push(t);
    }
    (loss * scale, terms)
}

fn accumulate_gradient(
    model: &LearnedEmbedding,
    features: &[Vec<f64>],
    triplets: &[Triplet],
    terms: &[Terms],
) -> Vec<f64> {
    let d_in = model.d_in;
    let diffs: Vec<(Vec<f64>, Vec<f64>)> = triplets
        .iter()
        .map(|t| {
            let a = &features[t.anchor];
            (
                a.iter().zip(&features[t.negative]).map(|(x, y)| x - y).collect(),
                a.iter().zip(&features[t.positive]).map(|(x, y)| x - y).collect(),
            )
        })
        .collect();
    let mut grad = vec![0.0; model.d_out * d_in];
    grad.par_chunks_mut(d_in).enumerate().for_each(|(r, row)| {
        for ((dn, dp), term) in diffs.iter().zip(terms) {
            let (a, b) = (term.cn[r], term.cp[r]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            for ((g, x), y) in row.iter_mut().zip(dn).zip(dp) {
                *g += a * x - b * y;
            }
        }
    });
    grad
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.adam_epsilon);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        params
            .par_iter_mut()
            .zip(self.m.par_iter_mut())
            .zip(self.v.par_iter_mut())
            .zip(grad.par_iter())
            .for_each(|(((p, m), v), &g)| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}

pub fn train_metric(frames: &FrameSet, cfg: &TrainConfig) -> Result<LearnedEmbedding> {
    train_metric_with_report(frames, cfg).map(|(m, _)| m)
}

/// Minibatch Adam on the mean triplet loss, with validation-driven learning
/// rate halving and early stopping. The best validation checkpoint is
/// returned, with weights rounded to `f32` so the saved form is exact.
pub fn train_metric_with_report(frames: &FrameSet, cfg: &TrainConfig) -> Result<(LearnedEmbedding, TrainReport)> {
    cfg.validate()?;
    let n = frames.len();
    if n < 3 {
        return Err(Error::TooFewFrames(n));
    }
    let d_in = 3 * cfg.side * cfg.side;
    let d_out = cfg.embedding_dim.min(d_in);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let features = frames
        .frames()
        .par_iter()
        .map(|f| extract_pixel_feature(f, cfg.side))
        .collect::<Result<Vec<_>>>()?;
    let count = cfg.triplet_count.unwrap_or(50 * n);
    let mut triplets = build_triplets_with(frames, count, &mut rng, &cfg.sampling)?;
    if triplets.is_empty() {
        return Err(Error::NoValidTriplets);
    }
    triplets.shuffle(&mut rng);
    let n_val = if triplets.len() < 2 {
        0
    } else {
        ((triplets.len() as f64 * cfg.validation_fraction).ceil() as usize).clamp(1, triplets.len() - 1)
    };
    let (val, train) = triplets.split_at(n_val);
    let val: &[Triplet] = if val.is_empty() { train } else { val };

    let mut model = LearnedEmbedding::random_with(cfg.side, d_out, &mut rng)?;
    let initial_loss = mean_loss(&model, &features, &triplets);
    let mut adam = Adam::new(model.weights.len());
    let mut lr = cfg.learning_rate;
    let mut best_val = mean_loss(&model, &features, val);
    let mut best_weights = model.weights.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut since_lr_cut = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Triplet> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grad) = loss_and_weight_gradient(&model, &features, &batch);
            running += loss * batch.len() as f64;
            adam.update(&mut model.weights, &grad, lr, cfg);
        }
        let train_loss = running / train.len() as f64;
        let val_loss = mean_loss(&model, &features, val);
        if val_loss < best_val {
            best_val = val_loss;
            best_weights.clone_from(&model.weights);
            best_epoch = epoch;
            since_best = 0;
            since_lr_cut = 0;
        } else {
            since_best += 1;
            since_lr_cut += 1;
            if since_lr_cut >= cfg.lr_halving_patience {
                lr *= 0.5;
                since_lr_cut = 0;
            }
        }
        history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            validation_loss: val_loss,
            best_validation_loss: best_val,
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");
        if since_best >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    model.weights = best_weights.into_iter().map(round_f32).collect();
    let final_loss = mean_loss(&model, &features, &triplets);
    model.meta = TrainingMeta {
        epochs_run: history.len(),
        initial_loss,
        final_loss,
    };
    let report = TrainReport {
        triplets: triplets.len(),
        train_triplets: train.len(),
        validation_triplets: n_val,
        initial_loss,
        final_loss,
        best_epoch,
        stopped_early,
        history,
    };
    Ok((model, report))
}
