//! Motion-aware candidate distillation and the seeded path search.
//!
//! Each step starts from the content candidates (`S1`) of the current
//! frame, keeps those that respect the directional constraint (`C_d`,
//! active inside linear motion segments) and the coherence constraint
//! (`C_t`, motion distance at most `omega`), then draws the next frame
//! from a softmax over negated motion distances.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{EmbedInput, EmbeddingProvider};
use crate::flow::{
    detect_lms, estimate_flow, frame_tendencies, motion_tendency, normalize_magnitude, wrapped_angle_dist,
    LmsMask, MagnitudeMap, MotionTendency, DEFAULT_BLOCK, DEFAULT_DELTA, DEFAULT_MIN_WINDOW, DEFAULT_RADIUS,
    DEFAULT_SIGMA,
};
use crate::graph::{content_candidates, CandidateSet, Layer, Srg};
use crate::media_io::{FlowField, Frame, FrameSet};

pub const DEFAULT_XI: f64 = PI / 3.0;
pub const DEFAULT_MU0: f64 = 0.5;
pub const DEFAULT_NE_MIN: usize = 224;
const MU_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdpfParams {
    /// Normalized-magnitude threshold for motion tendency.
    pub sigma: f64,
    /// LMS angular tolerance.
    pub delta: f64,
    /// Directional-constraint angular tolerance.
    pub xi: f64,
    /// Initial significance threshold for pseudo-images.
    pub mu0: f64,
    /// Minimum significant pixel count before the threshold is halved.
    pub ne_min: usize,
    pub temperature: f64,
    pub max_length: Option<usize>,
    pub seed: u64,
    pub disable_cd: bool,
    pub disable_ct: bool,
    /// Under an active `C_d`, require the candidate itself to be an LMS
    /// frame. When false, non-LMS candidates pass and only LMS candidates
    /// are bounded by `xi`.
    pub require_lms_candidate: bool,
    pub min_window: usize,
}

impl Default for SdpfParams {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            delta: DEFAULT_DELTA,
            xi: DEFAULT_XI,
            mu0: DEFAULT_MU0,
            ne_min: DEFAULT_NE_MIN,
            temperature: 1.0,
            max_length: None,
            seed: 0,
            disable_cd: false,
            disable_ct: false,
            require_lms_candidate: true,
            min_window: DEFAULT_MIN_WINDOW,
        }
    }
}

impl SdpfParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma),
            ("delta", self.delta),
            ("xi", self.xi),
            ("mu0", self.mu0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::BadParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::BadParams(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_length == Some(0) {
            return Err(Error::BadParams("max_length must be at least 1".into()));
        }
        if self.min_window < 2 {
            return Err(Error::BadParams("min_window must be at least 2".into()));
        }
        Ok(())
    }
}

/// Values of a magnitude map above the final threshold, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificantSet {
    pub values: Vec<f64>,
    pub mu: f64,
}

impl SignificantSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Smallest significant value; pixels of `M` at or above it are flagged.
    pub fn cutoff(&self) -> Option<f64> {
        self.values.first().copied()
    }
}

/// Values strictly above `mu`, halving `mu` from `mu0` while fewer than
/// `ne_min` qualify and `mu` stays above `1e-6`.
pub fn significant_set(m: &MagnitudeMap, mu0: f64, ne_min: usize) -> SignificantSet {
    let collect = |mu: f64| -> Vec<f64> { m.values().iter().copied().filter(|&v| v > mu).collect() };
    let mut mu = mu0;
    let mut e = collect(mu);
    while e.len() < ne_min && mu > MU_FLOOR {
        mu *= 0.5;
        e = collect(mu);
    }
    e.sort_by(f64::total_cmp);
    SignificantSet { values: e, mu }
}

/// Elementwise maximum of two normalized magnitude maps.
pub fn significant_motion_map(fc_norm: &MagnitudeMap, fk_norm: &MagnitudeMap) -> Result<MagnitudeMap> {
    fc_norm.same_dims(fk_norm)?;
    let values = fc_norm
        .values()
        .iter()
        .zip(fk_norm.values())
        .map(|(&a, &b)| a.max(b))
        .collect();
    MagnitudeMap::new(fc_norm.width(), fc_norm.height(), values)
}

/// Three-channel encoding of a flow's significant directions: translated
/// unit direction in the first two channels and a significance flag in
/// the third.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage(pub Frame);

impl PseudoImage {
    pub fn frame(&self) -> &Frame {
        &self.0
    }
}

pub fn pseudo_image(f: &FlowField, m: &MagnitudeMap, e: &SignificantSet) -> Result<PseudoImage> {
    if f.dims() != m.dims() {
        return Err(Error::DimensionMismatch(format!(
            "flow {:?} vs significance map {:?}",
            f.dims(),
            m.dims()
        )));
    }
    let cutoff = e.cutoff();
    let mut data = Vec::with_capacity(3 * f.len());
    for (i, &mv) in m.values().iter().enumerate() {
        match cutoff {
            Some(c) if mv >= c => {
                let (u, v) = f.vector(i);
                let norm = u.hypot(v);
                if norm > 0.0 {
                    data.push((u / (2.0 * norm) + 0.5) as f32);
                    data.push((v / (2.0 * norm) + 0.5) as f32);
                } else {
                    data.extend([0.5, 0.5]);
                }
                data.push(1.0);
            }
            _ => data.extend([0.5, 0.5, 0.0]),
        }
    }
    Ok(PseudoImage(Frame::new(f.width(), f.height(), data)?))
}

/// Both pseudo-images of a flow pair, sharing one significance map.
pub fn pseudo_image_pair(
    fc: &FlowField,
    fk: &FlowField,
    mu0: f64,
    ne_min: usize,
) -> Result<(PseudoImage, PseudoImage)> {
    fc.same_dims(fk)?;
    let nc = normalize_magnitude(fc)?;
    let nk = normalize_magnitude(fk)?;
    let m = significant_motion_map(&nc, &nk)?;
    let ec = significant_set(&nc, mu0, ne_min);
    let ek = significant_set(&nk, mu0, ne_min);
    Ok((pseudo_image(fc, &m, &ec)?, pseudo_image(fk, &m, &ek)?))
}

fn embedding_distance(embedder: &EmbeddingProvider, a: &PseudoImage, b: &PseudoImage) -> Result<f64> {
    let ra = embedder.embed(EmbedInput::Pseudo(a.frame()))?;
    let rb = embedder.embed(EmbedInput::Pseudo(b.frame()))?;
    Ok(ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Unsigned embedding distance between the pseudo-images of two flows.
/// Smaller means a smoother motion transition.
pub fn motion_distance(fc: &FlowField, fk: &FlowField, embedder: &EmbeddingProvider, params: &SdpfParams) -> Result<f64> {
    let (pc, pk) = pseudo_image_pair(fc, fk, params.mu0, params.ne_min)?;
    embedding_distance(embedder, &pc, &pk)
}

/// Distances from a flow to its quarter-turn rotations, `(+pi/2, -pi/2)`.
pub fn rotation_distances(fc: &FlowField, embedder: &EmbeddingProvider, params: &SdpfParams) -> Result<(f64, f64)> {
    let plus = motion_distance(fc, &fc.rotated(FRAC_PI_2), embedder, params)?;
    let minus = motion_distance(fc, &fc.rotated(-FRAC_PI_2), embedder, params)?;
    Ok((plus, minus))
}

/// Mean of the candidate distances when there are at least two, otherwise
/// the smaller of the two rotation distances.
pub fn coherence_threshold(dists: &[f64], rotations: impl FnOnce() -> Result<(f64, f64)>) -> Result<f64> {
    if dists.len() >= 2 {
        return Ok(dists.iter().sum::<f64>() / dists.len() as f64);
    }
    let (a, b) = rotations()?;
    Ok(a.min(b))
}

/// Directional constraint for moving from `c` to `k`.
pub fn directional_ok(
    t_c: MotionTendency,
    t_k: MotionTendency,
    lms_c: bool,
    lms_k: bool,
    any_lms_in_s1: bool,
    xi: f64,
) -> bool {
    directional_ok_with(t_c, t_k, lms_c, lms_k, any_lms_in_s1, xi, true)
}

pub fn directional_ok_with(
    t_c: MotionTendency,
    t_k: MotionTendency,
    lms_c: bool,
    lms_k: bool,
    any_lms_in_s1: bool,
    xi: f64,
    require_lms_candidate: bool,
) -> bool {
    if !(lms_c && any_lms_in_s1) {
        return true;
    }
    if !lms_k {
        return !require_lms_candidate;
    }
    t_c.valid && t_k.valid && wrapped_angle_dist(t_c.angle, t_k.angle) <= xi
}

/// Softmax over `-d / temperature`. A temperature of zero puts uniform
/// mass on the minimum-distance candidates.
pub fn selection_probabilities(dists: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if dists.is_empty() {
        return Err(Error::EmptyInput);
    }
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFiniteValues);
    }
    if temperature.is_nan() || temperature < 0.0 {
        return Err(Error::BadParams(format!("temperature {temperature} is negative")));
    }
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    if temperature == 0.0 {
        let ties = dists.iter().filter(|&&d| d == min).count() as f64;
        return Ok(dists.iter().map(|&d| if d == min { 1.0 / ties } else { 0.0 }).collect());
    }
    // max of -d/t is -min/t
    let w: Vec<f64> = dists.iter().map(|&d| (-(d - min) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Inverse-CDF draw from a probability vector with one uniform sample.
fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Block-matching settings used when a flow is not supplied externally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub block: usize,
    pub radius: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            block: DEFAULT_BLOCK,
            radius: DEFAULT_RADIUS,
        }
    }
}

/// Per-frame motion data the search consults.
#[derive(Debug, Clone)]
pub struct MotionContext {
    /// Flow from frame `c` to `c - 1`; frame 0 uses its negated forward flow.
    pub backward: Vec<FlowField>,
    /// Tendencies of the `n - 1` forward pairs `(i, i + 1)`.
    pub pair_tendencies: Vec<MotionTendency>,
    /// Per-frame tendencies.
    pub tendencies: Vec<MotionTendency>,
    pub lms: LmsMask,
}

impl MotionContext {
    /// Uses external flows where available, otherwise block matching.
    ///
    /// External fields whose size differs from the frames are resampled and
    /// their vectors rescaled.
    pub fn build(
        frames: &FrameSet,
        external: &BTreeMap<(usize, usize), FlowField>,
        flow: FlowOptions,
        params: &SdpfParams,
    ) -> Result<Self> {
        let (forward, backward) = source_flows(frames, external, flow)?;
        Self::from_flows(forward, backward, params)
    }

    /// `forward[i]` is the flow `i -> i + 1`; `backward[c - 1]` is the flow
    /// `c -> c - 1`.
    pub fn from_flows(forward: Vec<FlowField>, backward: Vec<FlowField>, params: &SdpfParams) -> Result<Self> {
        if forward.is_empty() {
            return Err(Error::EmptyInput);
        }
        if backward.len() != forward.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} forward flows but {} backward flows",
                forward.len(),
                backward.len()
            )));
        }
        let pair_tendencies = forward
            .par_iter()
            .map(|f| motion_tendency(f, params.sigma))
            .collect::<Result<Vec<_>>>()?;
        let tendencies = frame_tendencies(&pair_tendencies)?;
        let lms = detect_lms(&pair_tendencies, params.delta, params.min_window)?;
        let mut fc = Vec::with_capacity(forward.len() + 1);
        fc.push(forward[0].negated());
        fc.extend(backward);
        let dims = fc[0].dims();
        if fc.iter().chain(&forward).any(|f| f.dims() != dims) {
            return Err(Error::DimensionMismatch("flows differ in size".into()));
        }
        Ok(Self {
            backward: fc,
            pair_tendencies,
            tendencies,
            lms,
        })
    }

    pub fn len(&self) -> usize {
        self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backward.is_empty()
    }
}

/// Forward `(i, i + 1)` and backward `(c, c - 1)` flows for consecutive
/// source pairs.
pub fn source_flows(
    frames: &FrameSet,
    external: &BTreeMap<(usize, usize), FlowField>,
    opts: FlowOptions,
) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    let n = frames.len();
    let (w, h) = (frames.width(), frames.height());
    let pick = |src: usize, dst: usize| -> Result<FlowField> {
        if let Some(f) = external.get(&(src, dst)) {
            return Ok(resample_flow(f, w, h).with_pair(src, dst));
        }
        if let Some(f) = external.get(&(dst, src)) {
            return Ok(resample_flow(f, w, h).negated().with_pair(src, dst));
        }
        Ok(estimate_flow(frames.frame(src), frames.frame(dst), opts.block, opts.radius)?.with_pair(src, dst))
    };
    let forward = (0..n - 1).into_par_iter().map(|i| pick(i, i + 1)).collect::<Result<Vec<_>>>()?;
    let backward = (1..n).into_par_iter().map(|c| pick(c, c - 1)).collect::<Result<Vec<_>>>()?;
    Ok((forward, backward))
}

/// Nearest-neighbour resample to `w x h`, scaling vectors by the size ratio.
pub fn resample_flow(f: &FlowField, w: usize, h: usize) -> FlowField {
    if f.dims() == (w, h) {
        return f.clone();
    }
    let sx = w as f64 / f.width() as f64;
    let sy = h as f64 / f.height() as f64;
    let out = FlowField::from_fn(w, h, |x, y| {
        let xs = (((x as f64 + 0.5) / sx) as usize).min(f.width() - 1);
        let ys = (((y as f64 + 0.5) / sy) as usize).min(f.height() - 1);
        let (u, v) = f.vector(ys * f.width() + xs);
        ((u * sx) as f32, (v * sy) as f32)
    });
    match f.pair {
        Some((a, b)) => out.with_pair(a, b),
        None => out,
    }
}

/// Motion distances between frames' backward flows, memoized.
pub struct MotionScorer {
    ctx: Arc<MotionContext>,
    embedder: EmbeddingProvider,
    mu0: f64,
    ne_min: usize,
    norms: Vec<MagnitudeMap>,
    sets: Vec<SignificantSet>,
    pairs: RwLock<HashMap<(usize, usize), f64>>,
    rotations: RwLock<HashMap<usize, f64>>,
}

impl MotionScorer {
    /// `embedder` must accept pseudo-images; see
    /// [`EmbeddingProvider::for_pseudo_images`].
    pub fn new(ctx: Arc<MotionContext>, embedder: EmbeddingProvider, params: &SdpfParams) -> Result<Self> {
        if !embedder.supports_pseudo() {
            return Err(Error::ProviderNotReady(
                "motion distance needs a provider that encodes pseudo-images".into(),
            ));
        }
        let norms = ctx
            .backward
            .par_iter()
            .map(normalize_magnitude)
            .collect::<Result<Vec<_>>>()?;
        let sets = norms
            .par_iter()
            .map(|m| significant_set(m, params.mu0, params.ne_min))
            .collect();
        Ok(Self {
            ctx,
            embedder,
            mu0: params.mu0,
            ne_min: params.ne_min,
            norms,
            sets,
            pairs: RwLock::new(HashMap::new()),
            rotations: RwLock::new(HashMap::new()),
        })
    }

    pub fn embedder(&self) -> &EmbeddingProvider {
        &self.embedder
    }

    /// Motion distance between the backward flows of frames `c` and `k`.
    pub fn distance(&self, c: usize, k: usize) -> Result<f64> {
        let key = (c.min(k), c.max(k));
        if let Some(&d) = self.pairs.read().unwrap().get(&key) {
            return Ok(d);
        }
        let d = if c == k {
            0.0
        } else {
            let m = significant_motion_map(&self.norms[c], &self.norms[k])?;
            let pc = pseudo_image(&self.ctx.backward[c], &m, &self.sets[c])?;
            let pk = pseudo_image(&self.ctx.backward[k], &m, &self.sets[k])?;
            embedding_distance(&self.embedder, &pc, &pk)?
        };
        self.pairs.write().unwrap().insert(key, d);
        Ok(d)
    }

    /// `min` of the distances from frame `c`'s flow to its quarter-turn
    /// rotations.
    pub fn rotation_threshold(&self, c: usize) -> Result<f64> {
        if let Some(&d) = self.rotations.read().unwrap().get(&c) {
            return Ok(d);
        }
        let params = SdpfParams {
            mu0: self.mu0,
            ne_min: self.ne_min,
            ..SdpfParams::default()
        };
        let (a, b) = rotation_distances(&self.ctx.backward[c], &self.embedder, &params)?;
        let d = a.min(b);
        self.rotations.write().unwrap().insert(c, d);
        Ok(d)
    }
}

/// Outcome of the second distillation layer for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Distillation {
    pub s2: CandidateSet,
    /// Motion distance of each `s2` node, aligned with `s2.nodes`.
    pub dists: Vec<f64>,
    /// Motion distance of each `S1` node, aligned with the input.
    pub s1_dists: Vec<f64>,
    pub omega: Option<f64>,
    pub cd_active: bool,
}

pub fn distill_s2(
    current: usize,
    s1: &CandidateSet,
    ctx: &MotionContext,
    scorer: &MotionScorer,
    params: &SdpfParams,
) -> Result<Distillation> {
    if s1.is_empty() {
        return Ok(Distillation {
            s2: CandidateSet {
                nodes: Vec::new(),
                layer: Layer::S2,
            },
            dists: Vec::new(),
            s1_dists: Vec::new(),
            omega: None,
            cd_active: false,
        });
    }
    let s1_dists = s1
        .nodes
        .par_iter()
        .map(|&k| scorer.distance(current, k))
        .collect::<Result<Vec<_>>>()?;
    let omega = coherence_threshold(&s1_dists, || {
        let d = scorer.rotation_threshold(current)?;
        Ok((d, d))
    })?;
    let lms = &ctx.lms.is_lms;
    let cd_active = !params.disable_cd && lms[current] && s1.nodes.iter().any(|&k| lms[k]);
    let mut nodes = Vec::new();
    let mut dists = Vec::new();
    for (&k, &d) in s1.nodes.iter().zip(&s1_dists) {
        let dir = !cd_active
            || directional_ok_with(
                ctx.tendencies[current],
                ctx.tendencies[k],
                lms[current],
                lms[k],
                true,
                params.xi,
                params.require_lms_candidate,
            );
        let coherent = params.disable_ct || d <= omega;
        if dir && coherent {
            nodes.push(k);
            dists.push(d);
        }
    }
    Ok(Distillation {
        s2: CandidateSet { nodes, layer: Layer::S2 },
        dists,
        s1_dists,
        omega: Some(omega),
        cd_active,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "exhausted")]
    Exhausted,
    #[serde(rename = "empty_S2")]
    EmptyS2,
    #[serde(rename = "max_length")]
    MaxLength,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Exhausted => "exhausted",
            StopReason::EmptyS2 => "empty_S2",
            StopReason::MaxLength => "max_length",
        })
    }
}

/// Diagnostics for one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub from: usize,
    pub to: usize,
    pub s1_size: usize,
    pub s2_size: usize,
    pub edge_weight: f64,
    pub eta: f64,
    pub omega: f64,
    pub motion_distance: f64,
    pub probability: f64,
    pub cd_active: bool,
    pub ct_applied: bool,
}

/// Why the walk ended at the last frame, with the final candidate counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRecord {
    pub at: usize,
    pub s1_size: usize,
    pub s2_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePath {
    pub indices: Vec<usize>,
    pub seed: u64,
    pub stop_reason: StopReason,
    pub params: SdpfParams,
    pub steps: Vec<StepRecord>,
    pub terminal: TerminalRecord,
}

impl SequencePath {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Shared, read-only search state; runs with different seeds may proceed
/// concurrently.
pub struct Resequencer {
    graph: Arc<Srg>,
    ctx: Arc<MotionContext>,
    scorer: MotionScorer,
    params: SdpfParams,
}

impl Resequencer {
    pub fn new(graph: Arc<Srg>, ctx: Arc<MotionContext>, embedder: &EmbeddingProvider, params: SdpfParams) -> Result<Self> {
        params.validate()?;
        if graph.len() != ctx.len() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} nodes, motion context {} frames",
                graph.len(),
                ctx.len()
            )));
        }
        let scorer = MotionScorer::new(ctx.clone(), embedder.for_pseudo_images(), &params)?;
        Ok(Self {
            graph,
            ctx,
            scorer,
            params,
        })
    }

    pub fn params(&self) -> &SdpfParams {
        &self.params
    }

    pub fn scorer(&self) -> &MotionScorer {
        &self.scorer
    }

    pub fn graph(&self) -> &Srg {
        &self.graph
    }

    pub fn context(&self) -> &MotionContext {
        &self.ctx
    }

    /// Runs with the stored parameters.
    pub fn run(&self, start: usize) -> Result<SequencePath> {
        self.run_with(start, &self.params)
    }

    /// Runs with per-call overrides of the search knobs. Thresholds that
    /// shape the cached motion data (`mu0`, `ne_min`, `sigma`, `delta`,
    /// `min_window`) are taken from the stored parameters.
    pub fn run_with(&self, start: usize, overrides: &SdpfParams) -> Result<SequencePath> {
        let params = SdpfParams {
            temperature: overrides.temperature,
            max_length: overrides.max_length,
            seed: overrides.seed,
            disable_cd: overrides.disable_cd,
            disable_ct: overrides.disable_ct,
            require_lms_candidate: overrides.require_lms_candidate,
            xi: overrides.xi,
            ..self.params.clone()
        };
        params.validate()?;
        let n = self.graph.len();
        if start >= n {
            return Err(Error::StartOutOfRange { start, n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut path = vec![start];
        let mut visited = HashSet::from([start]);
        let mut steps = Vec::new();
        let mut current = start;
        let (stop_reason, terminal) = loop {
            if path.len() == n {
                break (StopReason::Exhausted, TerminalRecord { at: current, s1_size: 0, s2_size: 0 });
            }
            if params.max_length.is_some_and(|m| path.len() >= m) {
                break (StopReason::MaxLength, TerminalRecord { at: current, s1_size: 0, s2_size: 0 });
            }
            let s1 = content_candidates(&self.graph, current, &visited)?;
            let dist = distill_s2(current, &s1, &self.ctx, &self.scorer, &params)?;
            if dist.s2.is_empty() {
                break (
                    StopReason::EmptyS2,
                    TerminalRecord {
                        at: current,
                        s1_size: s1.len(),
                        s2_size: 0,
                    },
                );
            }
            let probs = selection_probabilities(&dist.dists, params.temperature)?;
            let pick = draw(&probs, &mut rng);
            let next = dist.s2.nodes[pick];
            steps.push(StepRecord {
                from: current,
                to: next,
                s1_size: s1.len(),
                s2_size: dist.s2.len(),
                edge_weight: self.graph.weight(current, next),
                eta: self.graph.eta(),
                omega: dist.omega.expect("non-empty S1 has a threshold"),
                motion_distance: dist.dists[pick],
                probability: probs[pick],
                cd_active: dist.cd_active,
                ct_applied: !params.disable_ct,
            });
            path.push(next);
            visited.insert(next);
            current = next;
        };
        Ok(SequencePath {
            indices: path,
            seed: params.seed,
            stop_reason,
            params,
            steps,
            terminal,
        })
    }
}

/// One-shot search; copies the graph and context and builds a fresh scorer.
pub fn sdpf_run(
    g: &Srg,
    start: usize,
    ctx: &MotionContext,
    embedder: &EmbeddingProvider,
    params: &SdpfParams,
) -> Result<SequencePath> {
    if start >= g.len() {
        return Err(Error::StartOutOfRange { start, n: g.len() });
    }
    Resequencer::new(Arc::new(g.clone()), Arc::new(ctx.clone()), embedder, params.clone())?.run(start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EtaDivisor;

    fn map(values: Vec<f64>, w: usize) -> MagnitudeMap {
        let h = values.len() / w;
        MagnitudeMap::new(w, h, values).unwrap()
    }

    #[test]
    fn significant_set_no_halving() {
        let mut v = vec![0.9; 300];
        v.extend(vec![0.0; 100]);
        let e = significant_set(&map(v, 20), 0.5, 224);
        assert_eq!(e.len(), 300);
        assert_eq!(e.mu, 0.5);
    }

    #[test]
    fn significant_set_one_halving() {
        let mut v = vec![0.9; 100];
        v.extend(vec![0.3; 300]);
        v.extend(vec![0.0; 100]);
        let e = significant_set(&map(v, 25), 0.5, 224);
        assert_eq!(e.mu, 0.25);
        assert_eq!(e.len(), 400);
        assert_eq!(e.cutoff(), Some(0.3));
    }

    #[test]
    fn significant_set_all_zero_terminates() {
        let e = significant_set(&map(vec![0.0; 64], 8), 0.5, 224);
        assert!(e.is_empty());
        assert!(e.mu <= 1e-6);
    }

    #[test]
    fn max_map_identity() {
        let zero = map(vec![0.0; 4], 2);
        let k = map(vec![0.1, 0.7, 0.0, 1.0], 2);
        assert_eq!(significant_motion_map(&zero, &k).unwrap(), k);
        let other = map(vec![0.0; 6], 3);
        assert!(significant_motion_map(&zero, &other).is_err());
    }

    #[test]
    fn pseudo_image_pixels() {
        let f = FlowField::new(3, 1, vec![1.0, 0.0, 5.0], vec![0.0, 0.0, 5.0]).unwrap();
        let m = map(vec![1.0, 0.8, 0.1], 3);
        let e = SignificantSet {
            values: vec![0.8, 1.0],
            mu: 0.5,
        };
        let p = pseudo_image(&f, &m, &e).unwrap();
        assert_eq!(p.frame().pixel(0, 0), [1.0, 0.5, 1.0]);
        assert_eq!(p.frame().pixel(1, 0), [0.5, 0.5, 1.0]);
        assert_eq!(p.frame().pixel(2, 0), [0.5, 0.5, 0.0]);
    }

    #[test]
    fn empty_significant_set_gives_flat_pseudo_image() {
        let f = FlowField::from_fn(4, 4, |x, _| (x as f32, 1.0));
        let m = map(vec![0.5; 16], 4);
        let e = SignificantSet { values: vec![], mu: 0.0 };
        let p = pseudo_image(&f, &m, &e).unwrap();
        assert!(p.frame().data().chunks(3).all(|c| c == [0.5, 0.5, 0.0]));
    }

    #[test]
    fn selection_probabilities_basic() {
        assert_eq!(selection_probabilities(&[3.0, 3.0], 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(selection_probabilities(&[7.0], 1.0).unwrap(), vec![1.0]);
        let p = selection_probabilities(&[1.0, 2.0, 0.5], 0.7).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[0] && p[0] > p[1]);
        assert!(matches!(selection_probabilities(&[], 1.0), Err(Error::EmptyInput)));
        assert_eq!(selection_probabilities(&[2.0, 1.0, 1.0], 0.0).unwrap(), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn large_distances_do_not_underflow() {
        let p = selection_probabilities(&[1000.0, 1001.0], 1e-3).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn directional_rules() {
        let t0 = MotionTendency::new(0.0);
        assert!(directional_ok(t0, MotionTendency::new(PI), false, true, true, DEFAULT_XI));
        assert!(!directional_ok(t0, MotionTendency::new(PI / 2.0), true, true, true, DEFAULT_XI));
        assert!(directional_ok(t0, MotionTendency::new(PI / 4.0), true, true, true, DEFAULT_XI));
        assert!(!directional_ok(t0, MotionTendency::new(0.0), true, false, true, DEFAULT_XI));
        assert!(directional_ok_with(t0, MotionTendency::new(2.0), true, false, true, DEFAULT_XI, false));
        assert!(directional_ok(t0, MotionTendency::new(PI), true, true, false, DEFAULT_XI));
    }

    #[test]
    fn coherence_threshold_rules() {
        assert_eq!(coherence_threshold(&[2.0, 4.0], || unreachable!()).unwrap(), 3.0);
        assert_eq!(coherence_threshold(&[5.0], || Ok((1.5, 0.5))).unwrap(), 0.5);
    }

    fn moving_flow(w: usize, angle: f64, speed: f32) -> FlowField {
        let (s, c) = angle.sin_cos();
        FlowField::from_fn(w, w, |x, y| {
            if (x / 4 + y / 4) % 2 == 0 {
                (speed * c as f32, speed * s as f32)
            } else {
                (0.0, 0.0)
            }
        })
    }

    #[test]
    fn motion_distance_identity_symmetry_rotation() {
        let p = SdpfParams {
            ne_min: 16,
            ..Default::default()
        };
        let e = EmbeddingProvider::pixel(8).unwrap();
        let a = moving_flow(16, 0.3, 2.0);
        let b = moving_flow(16, 1.1, 3.0);
        assert_eq!(motion_distance(&a, &a, &e, &p).unwrap(), 0.0);
        let ab = motion_distance(&a, &b, &e, &p).unwrap();
        assert_eq!(ab, motion_distance(&b, &a, &e, &p).unwrap());
        assert!(motion_distance(&a, &a.rotated(FRAC_PI_2), &e, &p).unwrap() > 0.0);
    }

    fn uniform_graph(n: usize, w: f64) -> Srg {
        let mut m = vec![w; n * n];
        for i in 0..n {
            m[i * n + i] = 0.0;
        }
        Srg::from_weights(n, m, EtaDivisor::EdgeCount).unwrap()
    }

    #[test]
    fn two_frames_exhaust() {
        let f = moving_flow(16, 0.0, 1.0);
        let ctx = MotionContext::from_flows(vec![f.clone()], vec![f.negated()], &SdpfParams::default()).unwrap();
        let g = uniform_graph(2, 1.0).with_eta(2.0);
        let e = EmbeddingProvider::pixel(8).unwrap();
        let params = SdpfParams {
            ne_min: 16,
            ..Default::default()
        };
        let p = sdpf_run(&g, 1, &ctx, &e, &params).unwrap();
        assert_eq!(p.indices, vec![1, 0]);
        assert_eq!(p.stop_reason, StopReason::Exhausted);
    }

    #[test]
    fn isolated_start_stops_immediately() {
        let f = moving_flow(16, 0.0, 1.0);
        let ctx = MotionContext::from_flows(vec![f.clone(); 2], vec![f.negated(); 2], &SdpfParams::default()).unwrap();
        // eta = 2; node 0's edges are both 3, the remaining edge is 0.
        let w = vec![0.0, 3.0, 3.0, 3.0, 0.0, 0.0, 3.0, 0.0, 0.0];
        let g = Srg::from_weights(3, w, EtaDivisor::EdgeCount).unwrap();
        let e = EmbeddingProvider::pixel(8).unwrap();
        let p = sdpf_run(&g, 0, &ctx, &e, &SdpfParams::default()).unwrap();
        assert_eq!(p.indices, vec![0]);
        assert_eq!(p.stop_reason, StopReason::EmptyS2);
        assert_eq!(p.terminal.s1_size, 0);
    }

    #[test]
    fn start_out_of_range() {
        let f = moving_flow(16, 0.0, 1.0);
        let ctx = MotionContext::from_flows(vec![f.clone()], vec![f.negated()], &SdpfParams::default()).unwrap();
        let g = uniform_graph(2, 1.0);
        let e = EmbeddingProvider::pixel(8).unwrap();
        assert!(matches!(
            sdpf_run(&g, 7, &ctx, &e, &SdpfParams::default()),
            Err(Error::StartOutOfRange { start: 7, n: 2 })
        ));
    }

    #[test]
    fn max_length_stop() {
        let flows: Vec<FlowField> = (0..5).map(|_| moving_flow(16, 0.0, 1.0)).collect();
        let ctx = MotionContext::from_flows(flows.clone(), flows, &SdpfParams::default()).unwrap();
        let g = uniform_graph(6, 1.0).with_eta(2.0);
        let e = EmbeddingProvider::pixel(8).unwrap();
        let params = SdpfParams {
            max_length: Some(3),
            ne_min: 16,
            ..Default::default()
        };
        let p = sdpf_run(&g, 0, &ctx, &e, &params).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.stop_reason, StopReason::MaxLength);
        assert_eq!(p.steps.len(), 2);
    }

    #[test]
    fn stop_reason_serialization() {
        assert_eq!(serde_json::to_string(&StopReason::EmptyS2).unwrap(), "\"empty_S2\"");
        assert_eq!(StopReason::MaxLength.to_string(), "max_length");
    }

    #[test]
    fn resample_scales_vectors() {
        let f = FlowField::from_fn(4, 4, |_, _| (1.0, -2.0));
        let r = resample_flow(&f, 8, 2);
        assert_eq!(r.dims(), (8, 2));
        assert!(r.u().iter().all(|&u| u == 2.0));
        assert!(r.v().iter().all(|&v| v == -1.0));
    }
}
