//! Frame decoding, flow and embedding files, and the dataset manifest.

mod embedding_file;
mod flo;
mod frame;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embedding_file::{
    read_embeddings, write_embeddings, EmbeddingSet, EMBEDDING_MAGIC, EMBEDDING_VERSION,
    TAG_BUILTIN_LEARNED, TAG_BUILTIN_PIXEL, TAG_EXTERNAL,
};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FlowField, FLO_MAGIC};
pub use frame::{srgb_to_linear, Frame};

pub const DEFAULT_RESIZE: usize = 224;
const IMAGE_EXTENSIONS: &[&str] = &["png", "ppm", "pnm"];

/// Decoded frames in source order.
#[derive(Debug, Clone)]
pub struct FrameSet {
    frames: Vec<Frame>,
    source_order: Vec<usize>,
    names: Vec<String>,
    width: usize,
    height: usize,
}

impl FrameSet {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let names = (0..frames.len()).map(|i| format!("{i:05}")).collect();
        Self::with_names(frames, names)
    }

    pub fn with_names(frames: Vec<Frame>, names: Vec<String>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::FewerThanTwoFrames(frames.len()));
        }
        let first = frames[0].dims();
        for (f, name) in frames.iter().zip(&names) {
            if f.dims() != first {
                return Err(Error::MixedDimensions {
                    first,
                    other: f.dims(),
                    path: name.clone(),
                });
            }
        }
        Ok(Self {
            source_order: (0..frames.len()).collect(),
            width: first.0,
            height: first.1,
            frames,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn source_order(&self) -> &[usize] {
        &self.source_order
    }

    /// File names (without directory) the frames were decoded from.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Resizes every frame to `side` x `side`.
    pub fn resized_square(&self, side: usize) -> FrameSet {
        FrameSet {
            frames: self
                .frames
                .iter()
                .map(|f| f.resize_bilinear(side, side))
                .collect(),
            source_order: self.source_order.clone(),
            names: self.names.clone(),
            width: side,
            height: side,
        }
    }
}

/// Where precomputed flows come from: a directory of `<src>_<dst>.flo` files
/// or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlowSource {
    Directory(PathBuf),
    Pairs(Vec<FlowEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub src: usize,
    pub dst: usize,
    pub path: PathBuf,
}

fn default_resize() -> Option<usize> {
    Some(DEFAULT_RESIZE)
}

/// JSON document binding a frame source to optional sidecar files.
///
/// Relative paths resolve against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// A directory of images or a glob pattern such as `clip/*.png`.
    pub frames: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flows: Option<FlowSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// Square side frames are resampled to after loading; `null` keeps the
    /// native resolution.
    #[serde(default = "default_resize")]
    pub resize: Option<usize>,
    /// Apply the sRGB-to-linear transfer to decoded channels.
    #[serde(default)]
    pub linearize: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn for_directory(dir: impl Into<PathBuf>) -> Self {
        Self {
            frames: dir.into().to_string_lossy().into_owned(),
            flows: None,
            embeddings: None,
            fps: None,
            resize: default_resize(),
            linearize: false,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn resolve(&self, p: impl AsRef<Path>) -> PathBuf {
        let p = p.as_ref();
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        if let Some(side) = self.resize {
            if side < 4 {
                return Err(Error::Manifest(format!("resize side {side} is below 4")));
            }
        }
        if !is_glob(&self.frames) {
            let dir = self.resolve(&self.frames);
            if !dir.exists() {
                return Err(Error::MissingPath(dir));
            }
        }
        match &self.flows {
            Some(FlowSource::Directory(d)) => exists(&self.resolve(d))?,
            Some(FlowSource::Pairs(list)) => {
                for e in list {
                    exists(&self.resolve(&e.path))?;
                }
            }
            None => {}
        }
        if let Some(e) = &self.embeddings {
            exists(&self.resolve(e))?;
        }
        Ok(())
    }

    /// Image files for this manifest in natural filename order.
    pub fn frame_paths(&self) -> Result<Vec<PathBuf>> {
        let mut paths = if is_glob(&self.frames) {
            let pattern = self.resolve(&self.frames);
            glob::glob(&pattern.to_string_lossy())
                .map_err(|e| Error::Manifest(e.to_string()))?
                .filter_map(|p| p.ok())
                .filter(|p| p.is_file())
                .collect::<Vec<_>>()
        } else {
            let dir = self.resolve(&self.frames);
            if !dir.is_dir() {
                return Err(Error::MissingPath(dir));
            }
            std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && has_image_extension(p))
                .collect()
        };
        paths.sort_by(|a, b| natural_cmp(&file_name(a), &file_name(b)));
        Ok(paths)
    }

    pub fn has_external_flows(&self) -> bool {
        self.flows.is_some()
    }
}

fn exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(p.to_path_buf()))
    }
}

fn is_glob(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Numeric-aware string ordering: `f2.png` sorts before `f10.png`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut a, mut b) = (a.as_bytes(), b.as_bytes());
    loop {
        match (a.first(), b.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let da = a.iter().take_while(|c| c.is_ascii_digit()).count();
                let db = b.iter().take_while(|c| c.is_ascii_digit()).count();
                let (na, nb) = (&a[..da], &b[..db]);
                let ta = trim_zeros(na);
                let tb = trim_zeros(nb);
                let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb));
                // Equal values: fewer leading zeros first, so the order stays total.
                let ord = ord.then_with(|| da.cmp(&db));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[da..];
                b = &b[db..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                a = &a[1..];
                b = &b[1..];
            }
        }
    }
}

fn trim_zeros(s: &[u8]) -> &[u8] {
    let k = s.iter().take_while(|&&c| c == b'0').count();
    &s[k..]
}

pub fn decode_image(path: &Path, linearize: bool) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut frame = Frame::from_rgb32f(&img.to_rgb32f())?;
    if linearize {
        let data = frame.data().iter().map(|&v| srgb_to_linear(v)).collect();
        frame = Frame::new(frame.width(), frame.height(), data)?;
    }
    Ok(frame)
}

/// Decodes every frame the manifest references.
///
/// Native dimensions must agree across frames; resizing (when enabled)
/// happens after that check.
pub fn load_frame_set(manifest: &DatasetManifest) -> Result<FrameSet> {
    manifest.validate()?;
    let paths = manifest.frame_paths()?;
    if paths.len() < 2 {
        return Err(Error::FewerThanTwoFrames(paths.len()));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut names = Vec::with_capacity(paths.len());
    for p in &paths {
        frames.push(decode_image(p, manifest.linearize)?);
        names.push(file_name(p));
    }
    let set = FrameSet::with_names(frames, names)?;
    Ok(match manifest.resize {
        Some(side) if (side, side) != (set.width(), set.height()) => set.resized_square(side),
        _ => set,
    })
}

/// Reads the manifest's precomputed flows, keyed by `(src, dst)`.
pub fn load_external_flows(manifest: &DatasetManifest) -> Result<BTreeMap<(usize, usize), FlowField>> {
    let mut out = BTreeMap::new();
    match &manifest.flows {
        None => {}
        Some(FlowSource::Pairs(list)) => {
            for e in list {
                let f = read_flo(&manifest.resolve(&e.path))?.with_pair(e.src, e.dst);
                out.insert((e.src, e.dst), f);
            }
        }
        Some(FlowSource::Directory(d)) => {
            let dir = manifest.resolve(d);
            for entry in std::fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.extension().and_then(|e| e.to_str()) != Some("flo") {
                    continue;
                }
                let stem = p.file_stem().unwrap_or_default().to_string_lossy();
                let Some((src, dst)) = parse_pair(&stem) else {
                    log::warn!("skipping flow file without a src/dst pair: {}", p.display());
                    continue;
                };
                out.insert((src, dst), read_flo(&p)?.with_pair(src, dst));
            }
        }
    }
    Ok(out)
}

/// Extracts the last two integer groups from a file stem, e.g.
/// `flow_0003_0004` → `(3, 4)`.
fn parse_pair(stem: &str) -> Option<(usize, usize)> {
    let nums: Vec<usize> = stem
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse().ok())
        .collect();
    match nums.as_slice() {
        [.., a, b] => Some((*a, *b)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_order() {
        let mut v = vec!["f10.png", "f2.png", "f1.png", "f002.png", "a.png"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, ["a.png", "f1.png", "f2.png", "f002.png", "f10.png"]);
    }

    #[test]
    fn pair_from_stem() {
        assert_eq!(parse_pair("0003_0004"), Some((3, 4)));
        assert_eq!(parse_pair("flow-12-13"), Some((12, 13)));
        assert_eq!(parse_pair("flow7"), None);
    }

    #[test]
    fn frame_set_rejects_single_frame() {
        let f = Frame::filled(2, 2, [0.0; 3]);
        assert!(matches!(FrameSet::new(vec![f]), Err(Error::FewerThanTwoFrames(1))));
    }

    #[test]
    fn manifest_defaults() {
        let m: DatasetManifest = serde_json::from_str(r#"{"frames": "clip"}"#).unwrap();
        assert_eq!(m.resize, Some(224));
        assert!(m.flows.is_none());
        let m: DatasetManifest =
            serde_json::from_str(r#"{"frames": "clip", "resize": null, "flows": "flo", "fps": 12}"#)
                .unwrap();
        assert_eq!(m.resize, None);
        assert_eq!(m.flows, Some(FlowSource::Directory("flo".into())));
        assert_eq!(m.fps, Some(12.0));
    }
}
