//! Block-matching flow, magnitude normalization, motion tendency, and
//! linear-motion-segment detection.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media_io::{FlowField, Frame};

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_RADIUS: usize = 7;
pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = PI / 4.0;
/// Smallest LMS window in frames (`k > 2`, inclusive).
pub const DEFAULT_MIN_WINDOW: usize = 4;

/// Dense flow from `a` to `b` by exhaustive block matching.
///
/// Each `block x block` tile of `a` (partial tiles at the right and bottom
/// edges included) is compared against `b` at every integer displacement
/// within `radius`, using the sum of absolute RGB differences with
/// coordinates clamped to the frame. The winning displacement is written
/// to every pixel of the tile.
pub fn estimate_flow(a: &Frame, b: &Frame, block: usize, radius: usize) -> Result<FlowField> {
    a.same_dims(b)?;
    if block < 4 {
        return Err(Error::BadParams(format!("block size {block} is below 4")));
    }
    if radius < 1 {
        return Err(Error::BadParams("search radius must be at least 1".into()));
    }
    let (w, h) = a.dims();
    let r = radius as i64;
    // Search order encodes the tie-break: smaller magnitude, then (du, dv).
    let mut offsets: Vec<(i64, i64)> = (-r..=r).flat_map(|du| (-r..=r).map(move |dv| (du, dv))).collect();
    offsets.sort_by_key(|&(du, dv)| (du * du + dv * dv, du, dv));

    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);
    let (da, db) = (a.data(), b.data());
    let best: Vec<(i64, i64)> = (0..bw * bh)
        .into_par_iter()
        .map(|bi| {
            let x0 = (bi % bw) * block;
            let y0 = (bi / bw) * block;
            let x1 = (x0 + block).min(w);
            let y1 = (y0 + block).min(h);
            let mut best = (0, 0);
            let mut best_sad = f64::INFINITY;
            for &(du, dv) in &offsets {
                let mut sad = 0.0f64;
                for y in y0..y1 {
                    let ys = (y as i64 + dv).clamp(0, h as i64 - 1) as usize;
                    for x in x0..x1 {
                        let xs = (x as i64 + du).clamp(0, w as i64 - 1) as usize;
                        let pa = 3 * (y * w + x);
                        let pb = 3 * (ys * w + xs);
                        for c in 0..3 {
                            sad += (da[pa + c] - db[pb + c]).abs() as f64;
                        }
                    }
                    if sad >= best_sad {
                        break;
                    }
                }
                if sad < best_sad {
                    best_sad = sad;
                    best = (du, dv);
                }
            }
            best
        })
        .collect();

    Ok(FlowField::from_fn(w, h, |x, y| {
        let (du, dv) = best[(y / block) * bw + x / block];
        (du as f32, dv as f32)
    }))
}

/// Per-pixel flow magnitude rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl MagnitudeMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "magnitude map {width}x{height} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValues);
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_dims(&self, other: &MagnitudeMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "magnitude maps {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Min-max normalized vector magnitudes. A constant-magnitude field has no
/// range to normalize and maps to all zeros.
pub fn normalize_magnitude(f: &FlowField) -> Result<MagnitudeMap> {
    f.check_finite()?;
    let mags: Vec<f64> = (0..f.len()).map(|i| f.magnitude(i)).collect();
    let (lo, hi) = mags
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    let range = hi - lo;
    let values = if range > 0.0 {
        mags.iter().map(|m| (m - lo) / range).collect()
    } else {
        vec![0.0; mags.len()]
    };
    MagnitudeMap::new(f.width(), f.height(), values)
}

/// Dominant direction of a flow field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionTendency {
    /// Radians in `(-pi, pi]`; 0 when invalid.
    pub angle: f64,
    pub valid: bool,
}

impl MotionTendency {
    pub const INVALID: MotionTendency = MotionTendency { angle: 0.0, valid: false };

    pub fn new(angle: f64) -> Self {
        Self {
            angle: canonical_angle(angle),
            valid: true,
        }
    }

    pub fn degrees(&self) -> Option<f64> {
        self.valid.then(|| self.angle.to_degrees())
    }
}

fn canonical_angle(a: f64) -> f64 {
    let mut t = a.rem_euclid(TAU);
    if t > PI {
        t -= TAU;
    }
    if t <= -PI {
        t += TAU;
    }
    t
}

/// Angle of the mean vector over pixels whose normalized magnitude exceeds
/// `sigma`. Invalid when no pixel qualifies or the mean vector is zero.
pub fn motion_tendency(f: &FlowField, sigma: f64) -> Result<MotionTendency> {
    let norm = normalize_magnitude(f)?;
    let (mut su, mut sv, mut count) = (0.0, 0.0, 0usize);
    for (i, &m) in norm.values().iter().enumerate() {
        if m > sigma {
            let (u, v) = f.vector(i);
            su += u;
            sv += v;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(MotionTendency::INVALID);
    }
    let (mu, mv) = (su / count as f64, sv / count as f64);
    if mu == 0.0 && mv == 0.0 {
        return Ok(MotionTendency::INVALID);
    }
    Ok(MotionTendency::new(mv.atan2(mu)))
}

/// Angular distance on the circle, in `[0, pi]`.
pub fn wrapped_angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Per-frame tendencies from the `n - 1` consecutive-pair tendencies:
/// frame `i` takes pair `(i, i + 1)`, and the last frame repeats the last pair.
pub fn frame_tendencies(pair_tendencies: &[MotionTendency]) -> Result<Vec<MotionTendency>> {
    let last = *pair_tendencies.last().ok_or(Error::EmptyInput)?;
    let mut out = pair_tendencies.to_vec();
    out.push(last);
    Ok(out)
}

/// Per-frame LMS membership and the merged segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmsMask {
    pub is_lms: Vec<bool>,
    /// Inclusive `(start, end)` frame ranges, ordered and non-overlapping.
    pub segments: Vec<(usize, usize)>,
}

impl LmsMask {
    pub fn none(n: usize) -> Self {
        Self {
            is_lms: vec![false; n],
            segments: Vec::new(),
        }
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn len(&self) -> usize {
        self.is_lms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_lms.is_empty()
    }

    pub fn segment_of(&self, frame: usize) -> Option<usize> {
        self.segments.iter().position(|&(s, e)| s <= frame && frame <= e)
    }
}

/// Marks every frame covered by a window `[j, j + k]` of at least
/// `min_window` frames whose tendencies are all valid and within `delta`
/// of frame `j`'s.
///
/// `pair_tendencies` holds one entry per consecutive source pair, so the
/// mask covers `pair_tendencies.len() + 1` frames.
pub fn detect_lms(pair_tendencies: &[MotionTendency], delta: f64, min_window: usize) -> Result<LmsMask> {
    let t = frame_tendencies(pair_tendencies)?;
    Ok(detect_lms_frames(&t, delta, min_window))
}

/// [`detect_lms`] over tendencies that are already per frame.
pub fn detect_lms_frames(t: &[MotionTendency], delta: f64, min_window: usize) -> LmsMask {
    let n = t.len();
    let min_window = min_window.max(1);
    let mut mask = LmsMask::none(n);
    let mut current: Option<(usize, usize)> = None;
    for j in 0..n {
        if !t[j].valid {
            continue;
        }
        // Longest window anchored at j; any qualifying window is a prefix of it.
        let mut end = j;
        while end + 1 < n && t[end + 1].valid && wrapped_angle_dist(t[j].angle, t[end + 1].angle) <= delta {
            end += 1;
        }
        if end + 1 - j < min_window {
            continue;
        }
        mask.is_lms[j..=end].iter_mut().for_each(|b| *b = true);
        current = match current {
            Some((s, e)) if j <= e => Some((s, e.max(end))),
            Some(seg) => {
                mask.segments.push(seg);
                Some((j, end))
            }
            None => Some((j, end)),
        };
    }
    if let Some(seg) = current {
        mask.segments.push(seg);
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn identical_frames_give_zero_field() {
        let a = textured(32, 24, 1);
        let f = estimate_flow(&a, &a, 8, 3).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&x| x == 0.0));
        let flat = Frame::filled(16, 16, [0.3; 3]);
        let f = estimate_flow(&flat, &flat, 4, 2).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&x| x == 0.0));
    }

    #[test]
    fn bad_params() {
        let a = textured(16, 16, 2);
        assert!(matches!(estimate_flow(&a, &a, 8, 0), Err(Error::BadParams(_))));
        assert!(matches!(estimate_flow(&a, &a, 3, 2), Err(Error::BadParams(_))));
        let b = textured(16, 8, 2);
        assert!(matches!(estimate_flow(&a, &b, 8, 2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn recovers_wraparound_shift() {
        let (w, h) = (64, 48);
        let a = textured(w, h, 3);
        let b = Frame::from_fn(w, h, |x, y| a.pixel((x + w - 3) % w, (y + h - 1) % h));
        let f = estimate_flow(&a, &b, 8, 4).unwrap();
        let mut ok = 0;
        let mut total = 0;
        for y in 8..h - 8 {
            for x in 8..w - 8 {
                let i = y * w + x;
                total += 1;
                if f.u()[i] == 3.0 && f.v()[i] == 1.0 {
                    ok += 1;
                }
            }
        }
        assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
    }

    #[test]
    fn normalize_known_values() {
        let f = FlowField::new(3, 1, vec![0.0, 3.0, 6.0], vec![0.0, 4.0, 8.0]).unwrap();
        assert_eq!(normalize_magnitude(&f).unwrap().values(), &[0.0, 0.5, 1.0]);
        let c = FlowField::from_fn(4, 4, |_, _| (1.0, 1.0));
        assert!(normalize_magnitude(&c).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_moving_field_tendency() {
        let f = FlowField::from_fn(8, 8, |x, _| if x < 4 { (1.0, 0.0) } else { (0.0, 0.0) });
        let t = motion_tendency(&f, 0.5).unwrap();
        assert!(t.valid);
        assert_eq!(t.angle, 0.0);
        let g = FlowField::from_fn(8, 8, |x, _| if x < 4 { (0.0, 1.0) } else { (0.0, 0.0) });
        assert!((motion_tendency(&g, 0.5).unwrap().angle - PI / 2.0).abs() < 1e-12);
        let leftward = FlowField::from_fn(8, 8, |x, _| if x < 4 { (-1.0, 0.0) } else { (0.0, 0.0) });
        assert_eq!(motion_tendency(&leftward, 0.5).unwrap().angle, PI);
    }

    #[test]
    fn constant_field_is_invalid() {
        let f = FlowField::from_fn(8, 8, |_, _| (2.0, 0.0));
        assert!(!motion_tendency(&f, 0.5).unwrap().valid);
    }

    #[test]
    fn wrapped_distance_across_seam() {
        assert!((wrapped_angle_dist(PI - 0.1, -PI + 0.1) - 0.2).abs() < 1e-12);
        assert!((wrapped_angle_dist(0.0, PI) - PI).abs() < 1e-12);
        assert_eq!(wrapped_angle_dist(1.0, 1.0), 0.0);
    }

    #[test]
    fn constant_tendency_is_one_segment() {
        let t = vec![MotionTendency::new(0.3); 5];
        let m = detect_lms(&t, DEFAULT_DELTA, DEFAULT_MIN_WINDOW).unwrap();
        assert_eq!(m.is_lms, vec![true; 6]);
        assert_eq!(m.segments, vec![(0, 5)]);
    }

    #[test]
    fn alternating_tendency_has_no_lms() {
        let t: Vec<_> = (0..9).map(|i| MotionTendency::new(if i % 2 == 0 { 0.0 } else { PI })).collect();
        let m = detect_lms(&t, DEFAULT_DELTA, DEFAULT_MIN_WINDOW).unwrap();
        assert!(m.is_lms.iter().all(|b| !b));
        assert_eq!(m.segment_count(), 0);
    }

    #[test]
    fn invalid_breaks_window() {
        let mut t = vec![MotionTendency::new(0.0); 7];
        t[3] = MotionTendency::INVALID;
        // Frames 0..=2 and 3..=7 (frame 7 repeats pair 6); frame 3 is invalid.
        let m = detect_lms(&t, DEFAULT_DELTA, DEFAULT_MIN_WINDOW).unwrap();
        assert_eq!(m.is_lms, vec![false, false, false, false, true, true, true, true]);
        assert_eq!(m.segments, vec![(4, 7)]);
    }

    #[test]
    fn adjacent_windows_stay_separate_segments() {
        let mut t = vec![MotionTendency::new(0.0); 4];
        t.extend(vec![MotionTendency::new(PI); 4]);
        let m = detect_lms_frames(&t, DEFAULT_DELTA, 4);
        assert_eq!(m.segments, vec![(0, 3), (4, 7)]);
        assert_eq!(m.segment_of(5), Some(1));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(detect_lms(&[], DEFAULT_DELTA, 4), Err(Error::EmptyInput)));
    }
}
