//! Sequence quality measures: transition stability, overlap with a
//! reference ordering, and rating aggregation.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media_io::{Frame, FrameSet};

/// Root-mean-square channel difference; 0 iff identical, 1 for black vs white.
pub fn frame_difference(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok((sum / a.data().len() as f64).sqrt())
}

/// Per-pixel RMS difference over the three channels as an 8-bit image.
pub fn difference_map(a: &Frame, b: &Frame) -> Result<image::GrayImage> {
    a.same_dims(b)?;
    let (w, h) = a.dims();
    let px: Vec<u8> = a
        .data()
        .chunks_exact(3)
        .zip(b.data().chunks_exact(3))
        .map(|(p, q)| {
            let s: f32 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
            ((s / 3.0).sqrt().clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    Ok(image::GrayImage::from_raw(w as u32, h as u32, px).expect("buffer matches dimensions"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Difference of each transition along the path.
    pub differences: Vec<f64>,
    pub mean: f64,
    /// Mean transition difference of the source ordering.
    pub source_mean: f64,
}

fn check_universe(path: &[usize], n: usize) -> Result<()> {
    match path.iter().find(|&&i| i >= n) {
        Some(&index) => Err(Error::UniverseMismatch { index, n }),
        None => Ok(()),
    }
}

fn transition_differences(frames: &FrameSet, path: &[usize]) -> Result<Vec<f64>> {
    path.windows(2)
        .map(|w| frame_difference(frames.frame(w[1]), frames.frame(w[0])))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn stability(frames: &FrameSet, path: &[usize]) -> Result<StabilityReport> {
    if path.len() < 2 {
        return Err(Error::PathTooShort(path.len()));
    }
    check_universe(path, frames.len())?;
    let differences = transition_differences(frames, path)?;
    let source: Vec<usize> = (0..frames.len()).collect();
    let source_mean = mean(&transition_differences(frames, &source)?);
    Ok(StabilityReport {
        mean: mean(&differences),
        differences,
        source_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapStrategy {
    /// Positions covered by shared runs of consecutive frames.
    #[default]
    Runs,
    /// Longest common subsequence length.
    Lcs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub precision: f64,
    pub recall: f64,
    /// Harmonic combination of precision and recall, in percent.
    pub delta_o: f64,
    pub overlap_len: usize,
    pub len_g: usize,
    pub len_t: usize,
    pub strategy: OverlapStrategy,
}

/// Number of positions of `g` lying on a run that also appears, in the same
/// consecutive order, in `t`. Runs must span two frames unless one path is
/// a single frame.
pub fn run_overlap(g: &[usize], t: &[usize]) -> usize {
    if g.len() == 1 || t.len() == 1 {
        return usize::from(g.iter().any(|i| t.contains(i)));
    }
    let edges: HashSet<(usize, usize)> = t.windows(2).map(|w| (w[0], w[1])).collect();
    let mut covered = vec![false; g.len()];
    for (i, w) in g.windows(2).enumerate() {
        if edges.contains(&(w[0], w[1])) {
            covered[i] = true;
            covered[i + 1] = true;
        }
    }
    covered.iter().filter(|&&c| c).count()
}

pub fn lcs_len(g: &[usize], t: &[usize]) -> usize {
    let mut prev = vec![0usize; t.len() + 1];
    let mut cur = vec![0usize; t.len() + 1];
    for &a in g {
        for (j, &b) in t.iter().enumerate() {
            cur[j + 1] = if a == b {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[t.len()]
}

/// Overlap of a generated path `g` with a reference path `t`:
/// `P = overlap / |g|`, `R = overlap / |t|`, `delta_o = 2PR / (P + R)` in percent.
pub fn overlap_measure(g: &[usize], t: &[usize], strategy: OverlapStrategy) -> Result<OverlapReport> {
    if g.is_empty() || t.is_empty() {
        return Err(Error::EmptyPath);
    }
    let overlap = match strategy {
        OverlapStrategy::Runs => run_overlap(g, t),
        OverlapStrategy::Lcs => lcs_len(g, t),
    };
    let (precision, recall, delta_o) = if overlap == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let p = overlap as f64 / g.len() as f64;
        let r = overlap as f64 / t.len() as f64;
        (p, r, 2.0 * p * r / (p + r) * 100.0)
    };
    Ok(OverlapReport {
        precision,
        recall,
        delta_o,
        overlap_len: overlap,
        len_g: g.len(),
        len_t: t.len(),
        strategy,
    })
}

/// Counts of ratings 1 through 5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingTally {
    pub counts: [u64; 5],
    pub raters: u64,
}

impl RatingTally {
    pub fn uniform(score: usize, raters: u64) -> Self {
        let mut counts = [0; 5];
        counts[score.clamp(1, 5) - 1] = raters;
        Self { counts, raters }
    }
}

/// `sum(s * N_s) / (5 * raters)`.
pub fn rating_aggregate(tally: &RatingTally) -> Result<f64> {
    let counted: u64 = tally.counts.iter().sum();
    if counted != tally.raters || tally.raters == 0 {
        return Err(Error::TallyMismatch {
            counted,
            raters: tally.raters,
        });
    }
    let weighted: u64 = tally.counts.iter().zip(1u64..).map(|(n, s)| n * s).sum();
    Ok(weighted as f64 / (5 * tally.raters) as f64)
}

/// Stability and overlap of one path against the source ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub label: String,
    pub stability: StabilityReport,
    pub overlap: OverlapReport,
}

pub fn evaluate_path(
    label: impl Into<String>,
    frames: &FrameSet,
    path: &[usize],
    strategy: OverlapStrategy,
) -> Result<EvaluationReport> {
    if path.is_empty() {
        return Err(Error::EmptyPath);
    }
    check_universe(path, frames.len())?;
    let source: Vec<usize> = (0..frames.len()).collect();
    Ok(EvaluationReport {
        label: label.into(),
        stability: stability(frames, path)?,
        overlap: overlap_measure(path, &source, strategy)?,
    })
}

/// Plain-text table with columns for source and path stability and the
/// overlap score; an `Average` row follows when there is more than one report.
pub fn format_table(reports: &[EvaluationReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .chain(["Average".len(), "Clip".len()])
        .max()
        .unwrap_or(4);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>12}  {:>12}  {:>9}", "Clip", "M_D source", "M_D path", "Delta_o");
    let _ = writeln!(out, "{}", "-".repeat(width + 39));
    let row = |out: &mut String, label: &str, src: f64, path: f64, d: f64| {
        let _ = writeln!(out, "{label:<width$}  {src:>12.4}  {path:>12.4}  {:>8.2}%", d);
    };
    for r in reports {
        row(&mut out, &r.label, r.stability.source_mean, r.stability.mean, r.overlap.delta_o);
    }
    if reports.len() > 1 {
        let k = reports.len() as f64;
        let avg = |f: &dyn Fn(&EvaluationReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        row(
            &mut out,
            "Average",
            avg(&|r| r.stability.source_mean),
            avg(&|r| r.stability.mean),
            avg(&|r| r.overlap.delta_o),
        );
    }
    out
}
