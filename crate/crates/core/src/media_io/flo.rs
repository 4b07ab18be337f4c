//! Dense flow fields and the Middlebury `.flo` container.
//!
//! Layout: the float `202021.25` (bytes `PIEH`), little-endian `i32` width
//! and height, then `width * height` interleaved `(u, v)` pairs of
//! little-endian `f32` in row-major order.

use std::path::Path;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

/// Per-pixel displacement from `src` to `dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    /// Source-order frame indices this field was computed between, if known.
    pub pair: Option<(usize, usize)>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadDimensions {
                width: width as i64,
                height: height as i64,
            });
        }
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "flow {}x{} needs {} values per component",
                width,
                height,
                width * height
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValues);
        }
        Ok(Self {
            width,
            height,
            u,
            v,
            pair: None,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
            pair: None,
        }
    }

    /// Builds a field from `f(x, y) -> (u, v)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self {
            width,
            height,
            u,
            v,
            pair: None,
        }
    }

    pub fn with_pair(mut self, src: usize, dst: usize) -> Self {
        self.pair = Some((src, dst));
        self
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

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn vector(&self, i: usize) -> (f64, f64) {
        (self.u[i] as f64, self.v[i] as f64)
    }

    #[inline]
    pub fn magnitude(&self, i: usize) -> f64 {
        let (a, b) = self.vector(i);
        a.hypot(b)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.u.iter().chain(self.v.iter()).all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteValues)
        }
    }

    pub fn same_dims(&self, other: &FlowField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "flow {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Every vector negated; spatial layout unchanged.
    pub fn negated(&self) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
            pair: self.pair.map(|(a, b)| (b, a)),
        }
    }

    /// Every vector rotated by `theta` radians; spatial layout unchanged.
    pub fn rotated(&self, theta: f64) -> FlowField {
        let (s, c) = theta.sin_cos();
        let mut u = Vec::with_capacity(self.len());
        let mut v = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let (a, b) = self.vector(i);
            u.push((a * c - b * s) as f32);
            v.push((a * s + b * c) as f32);
        }
        FlowField {
            width: self.width,
            height: self.height,
            u,
            v,
            pair: self.pair,
        }
    }
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::BadDimensions {
            width: width as i64,
            height: height as i64,
        });
    }
    let count = (width as usize)
        .checked_mul(height as usize)
        .ok_or(Error::BadDimensions {
            width: width as i64,
            height: height as i64,
        })?;
    let expected = HEADER_LEN + count * 8;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let mut u = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for pair in bytes[HEADER_LEN..].chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[0..4].try_into().unwrap()));
        v.push(f32::from_le_bytes(pair[4..8].try_into().unwrap()));
    }
    FlowField::new(width as usize, height as usize, u, v)
}

pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    flow.check_finite()?;
    let mut out = Vec::with_capacity(HEADER_LEN + flow.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for (a, b) in flow.u.iter().zip(&flow.v) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    Ok(out)
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    decode_flo(&std::fs::read(path)?)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, encode_flo(flow)?)?;
    Ok(())
}
