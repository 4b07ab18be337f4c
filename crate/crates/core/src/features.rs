//! Frame features, pixel-level similarity, and embedding providers.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::media_io::{EmbeddingSet, Frame, FrameSet, TAG_BUILTIN_LEARNED, TAG_BUILTIN_PIXEL, TAG_EXTERNAL};
use crate::metric::LearnedEmbedding;

pub const DEFAULT_FEATURE_SIDE: usize = 32;
pub const MIN_FEATURE_SIDE: usize = 4;

/// Downsampled, mean-centered, unit-norm pixel vector of length `3 * side^2`.
///
/// A constant frame centers to the zero vector and stays zero.
pub fn extract_pixel_feature(frame: &Frame, side: usize) -> Result<Vec<f64>> {
    if side < MIN_FEATURE_SIDE {
        return Err(Error::SideTooSmall(side));
    }
    let small = frame.resize_bilinear(side, side);
    let mut v: Vec<f64> = small.data().iter().map(|&x| x as f64).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Rounding residue of a constant frame is not a direction.
    if norm > 1e-9 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(v)
}

pub fn mean_squared_error(a: &Frame, b: &Frame) -> Result<f64> {
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
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` channels.
///
/// Identical frames give `f64::INFINITY`, which orders above every finite
/// value.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let mse = mean_squared_error(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// What an embedding is computed from.
#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a> {
    /// A source frame, with its index for providers backed by a file.
    Frame { index: usize, frame: &'a Frame },
    /// A synthetic image such as a motion pseudo-image.
    Pseudo(&'a Frame),
}

impl<'a> EmbedInput<'a> {
    fn image(&self) -> &'a Frame {
        match *self {
            EmbedInput::Frame { frame, .. } => frame,
            EmbedInput::Pseudo(frame) => frame,
        }
    }
}

/// Maps frames to the vectors whose distances weight the relation graph.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    /// Raw pixel features; distances are plain Euclidean.
    Pixel { side: usize },
    /// Pixel features passed through a trained affine map.
    Learned(Arc<LearnedEmbedding>),
    /// Precomputed per-frame vectors loaded from disk.
    External(Arc<EmbeddingSet>),
}

impl EmbeddingProvider {
    pub fn pixel(side: usize) -> Result<Self> {
        if side < MIN_FEATURE_SIDE {
            return Err(Error::SideTooSmall(side));
        }
        Ok(EmbeddingProvider::Pixel { side })
    }

    pub fn tag(&self) -> &str {
        match self {
            EmbeddingProvider::Pixel { .. } => TAG_BUILTIN_PIXEL,
            EmbeddingProvider::Learned(_) => TAG_BUILTIN_LEARNED,
            EmbeddingProvider::External(_) => TAG_EXTERNAL,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Pixel { side } => 3 * side * side,
            EmbeddingProvider::Learned(m) => m.output_dim(),
            EmbeddingProvider::External(set) => set.dim(),
        }
    }

    /// Whether this provider can encode images that are not source frames.
    pub fn supports_pseudo(&self) -> bool {
        !matches!(self, EmbeddingProvider::External(_))
    }

    pub fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f64>> {
        match self {
            EmbeddingProvider::Pixel { side } => extract_pixel_feature(input.image(), *side),
            EmbeddingProvider::Learned(model) => {
                let x = extract_pixel_feature(input.image(), model.side())?;
                model.apply(&x)
            }
            EmbeddingProvider::External(set) => match input {
                EmbedInput::Frame { index, .. } => {
                    Ok(set.get(index)?.iter().map(|&v| v as f64).collect())
                }
                EmbedInput::Pseudo(_) => Err(Error::ProviderNotReady(
                    "external embeddings only cover source frames".into(),
                )),
            },
        }
    }

    /// Embeds every frame of a set, in source order.
    pub fn embed_all(&self, frames: &FrameSet) -> Result<EmbeddingSet> {
        if let EmbeddingProvider::External(set) = self {
            if set.len() != frames.len() {
                return Err(Error::ProviderNotReady(format!(
                    "embedding file has {} rows for {} frames",
                    set.len(),
                    frames.len()
                )));
            }
            return Ok((**set).clone());
        }
        let rows = frames
            .frames()
            .par_iter()
            .enumerate()
            .map(|(index, frame)| {
                self.embed(EmbedInput::Frame { index, frame })
                    .map(|v| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>())
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::from_rows(rows, self.tag())
    }

    /// Provider used for motion pseudo-images: itself when it can encode
    /// arbitrary images, otherwise the pixel feature at the default side.
    pub fn for_pseudo_images(&self) -> EmbeddingProvider {
        if self.supports_pseudo() {
            self.clone()
        } else {
            EmbeddingProvider::Pixel {
                side: DEFAULT_FEATURE_SIDE,
            }
        }
    }
}
