//! End-to-end wiring: load frames, pick an embedding provider, compute
//! flows and the relation graph, and run searches.
//!
//! Expensive intermediates (learned model, embeddings, flows, graph) can be
//! cached in a directory. Cache entries are keyed by a SHA-256 over the
//! decoded frame data and the settings that affect each artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{EmbeddingProvider, DEFAULT_FEATURE_SIDE};
use crate::graph::{build_graph_with, EtaDivisor, GraphExport, Srg, DEFAULT_NODE_CAP};
use crate::media_io::{
    load_external_flows, load_frame_set, read_embeddings, read_flo, write_embeddings, write_flo, DatasetManifest,
    EmbeddingSet, FlowField, FrameSet,
};
use crate::metric::{train_metric_with_report, LearnedEmbedding, TrainConfig, TrainReport};
use crate::sdpf::{source_flows, FlowOptions, MotionContext, Resequencer, SdpfParams, SequencePath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderChoice {
    /// External embeddings when the manifest names a file, else learned.
    #[default]
    Auto,
    Pixel,
    Learned,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub provider: ProviderChoice,
    pub pixel_side: usize,
    pub train: TrainConfig,
    pub flow: FlowOptions,
    pub sdpf: SdpfParams,
    pub eta_divisor: EtaDivisor,
    pub node_cap: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            provider: ProviderChoice::Auto,
            pixel_side: DEFAULT_FEATURE_SIDE,
            train: TrainConfig::default(),
            flow: FlowOptions::default(),
            sdpf: SdpfParams::default(),
            eta_divisor: EtaDivisor::EdgeCount,
            node_cap: DEFAULT_NODE_CAP,
            cache_dir: None,
        }
    }
}

/// Directory of content-addressed artifacts; a no-op when unset.
#[derive(Debug, Clone, Default)]
pub struct ArtifactCache {
    dir: Option<PathBuf>,
}

impl ArtifactCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn embeddings(&self, name: &str) -> Option<EmbeddingSet> {
        let p = self.path(name)?;
        if !p.exists() {
            return None;
        }
        match read_embeddings(&p) {
            Ok(set) => Some(set),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", p.display());
                None
            }
        }
    }

    fn store_embeddings(&self, name: &str, set: &EmbeddingSet) -> Result<()> {
        if let Some(p) = self.path(name) {
            write_embeddings(&p, set)?;
        }
        Ok(())
    }

    fn flows(&self, name: &str, count: usize) -> Option<(Vec<FlowField>, Vec<FlowField>)> {
        let dir = self.path(name)?;
        if !dir.is_dir() {
            return None;
        }
        let read = |prefix: &str, pair: fn(usize) -> (usize, usize)| -> Option<Vec<FlowField>> {
            (0..count)
                .map(|i| {
                    let (a, b) = pair(i);
                    read_flo(&dir.join(format!("{prefix}-{i:05}.flo"))).ok().map(|f| f.with_pair(a, b))
                })
                .collect()
        };
        Some((read("fwd", |i| (i, i + 1))?, read("bwd", |i| (i + 1, i))?))
    }

    fn store_flows(&self, name: &str, fwd: &[FlowField], bwd: &[FlowField]) -> Result<()> {
        if let Some(dir) = self.path(name) {
            std::fs::create_dir_all(&dir)?;
            for (i, f) in fwd.iter().enumerate() {
                write_flo(&dir.join(format!("fwd-{i:05}.flo")), f)?;
            }
            for (i, f) in bwd.iter().enumerate() {
                write_flo(&dir.join(format!("bwd-{i:05}.flo")), f)?;
            }
        }
        Ok(())
    }

    fn graph(&self, name: &str) -> Option<Srg> {
        let p = self.path(name)?;
        let text = std::fs::read_to_string(p).ok()?;
        let export: GraphExport = serde_json::from_str(&text).ok()?;
        Srg::from_export(&export).ok()
    }

    fn store_graph(&self, name: &str, g: &Srg) -> Result<()> {
        if let Some(p) = self.path(name) {
            std::fs::write(p, serde_json::to_vec(&g.export())?)?;
        }
        Ok(())
    }
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(&h.finalize()[..12])
}

/// Content hash of decoded frames.
pub fn dataset_id(frames: &FrameSet) -> String {
    let mut h = Sha256::new();
    h.update((frames.len() as u64).to_le_bytes());
    h.update((frames.width() as u64).to_le_bytes());
    h.update((frames.height() as u64).to_le_bytes());
    for f in frames.frames() {
        for v in f.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..12])
}

fn flow_hash(flows: &BTreeMap<(usize, usize), FlowField>) -> String {
    let mut h = Sha256::new();
    for ((a, b), f) in flows {
        h.update((*a as u64).to_le_bytes());
        h.update((*b as u64).to_le_bytes());
        for x in f.u().iter().chain(f.v()) {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..12])
}

/// Resolves the provider for a dataset, training or loading a learned
/// model as needed.
pub fn resolve_provider(
    frames: &FrameSet,
    manifest: Option<&DatasetManifest>,
    config: &PipelineConfig,
    cache: &ArtifactCache,
    id: &str,
) -> Result<(EmbeddingProvider, Option<TrainReport>)> {
    let external = manifest.and_then(|m| m.embeddings.as_ref().map(|p| m.resolve(p)));
    let choice = match config.provider {
        ProviderChoice::Auto if external.is_some() => ProviderChoice::External,
        ProviderChoice::Auto => ProviderChoice::Learned,
        other => other,
    };
    match choice {
        ProviderChoice::Pixel => Ok((EmbeddingProvider::pixel(config.pixel_side)?, None)),
        ProviderChoice::External => {
            let path = external.ok_or_else(|| Error::ProviderNotReady("manifest names no embedding file".into()))?;
            let set = read_embeddings(&path)?;
            if set.len() != frames.len() {
                return Err(Error::ProviderNotReady(format!(
                    "embedding file has {} rows for {} frames",
                    set.len(),
                    frames.len()
                )));
            }
            Ok((EmbeddingProvider::External(Arc::new(set)), None))
        }
        ProviderChoice::Learned => {
            let key = digest(&[id.as_bytes(), &serde_json::to_vec(&config.train)?]);
            let name = format!("model-{key}.rsem");
            if let Some(set) = cache.embeddings(&name) {
                if let Ok(model) = LearnedEmbedding::from_embedding_set(&set) {
                    log::info!("loaded cached metric model {name}");
                    return Ok((EmbeddingProvider::Learned(Arc::new(model)), None));
                }
            }
            let (model, report) = train_metric_with_report(frames, &config.train)?;
            cache.store_embeddings(&name, &model.to_embedding_set())?;
            Ok((EmbeddingProvider::Learned(Arc::new(model)), Some(report)))
        }
        ProviderChoice::Auto => unreachable!("resolved above"),
    }
}

/// Forward and backward source-order flows, cached by content.
pub fn compute_flows(
    frames: &FrameSet,
    external: &BTreeMap<(usize, usize), FlowField>,
    opts: FlowOptions,
    cache: &ArtifactCache,
    id: &str,
) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    let key = digest(&[
        id.as_bytes(),
        &serde_json::to_vec(&opts)?,
        flow_hash(external).as_bytes(),
    ]);
    let name = format!("flows-{key}");
    if let Some(hit) = cache.flows(&name, frames.len() - 1) {
        log::info!("loaded cached flows {name}");
        return Ok(hit);
    }
    let (fwd, bwd) = source_flows(frames, external, opts)?;
    cache.store_flows(&name, &fwd, &bwd)?;
    Ok((fwd, bwd))
}

pub fn compute_graph(embeddings: &EmbeddingSet, config: &PipelineConfig, cache: &ArtifactCache) -> Result<Srg> {
    let key = digest(&[
        &embeddings.to_bytes(),
        &serde_json::to_vec(&config.eta_divisor)?,
    ]);
    let name = format!("graph-{key}.json");
    if let Some(g) = cache.graph(&name) {
        if g.len() == embeddings.len() {
            return Ok(g);
        }
    }
    let g = build_graph_with(embeddings, config.eta_divisor, config.node_cap)?;
    cache.store_graph(&name, &g)?;
    Ok(g)
}

/// A fully built dataset, ready for repeated searches.
pub struct Pipeline {
    config: PipelineConfig,
    manifest: Option<DatasetManifest>,
    dataset_id: String,
    frames: Arc<FrameSet>,
    provider: EmbeddingProvider,
    embeddings: EmbeddingSet,
    external_flows: bool,
    resequencer: Resequencer,
    train_report: Option<TrainReport>,
}

impl Pipeline {
    pub fn from_manifest_path(path: &Path, config: PipelineConfig) -> Result<Self> {
        Self::from_manifest(DatasetManifest::from_path(path)?, config)
    }

    pub fn from_manifest(manifest: DatasetManifest, config: PipelineConfig) -> Result<Self> {
        let frames = load_frame_set(&manifest)?;
        let flows = load_external_flows(&manifest)?;
        Self::assemble(frames, flows, Some(manifest), config)
    }

    /// Builds from in-memory frames and optional precomputed flows keyed by
    /// `(src, dst)`. Without a manifest, `Auto` means the learned metric and
    /// `External` is unavailable; use [`Pipeline::with_provider`] instead.
    pub fn from_frames(
        frames: FrameSet,
        flows: BTreeMap<(usize, usize), FlowField>,
        config: PipelineConfig,
    ) -> Result<Self> {
        Self::assemble(frames, flows, None, config)
    }

    /// Builds from in-memory frames with a ready provider.
    pub fn with_provider(
        frames: FrameSet,
        flows: BTreeMap<(usize, usize), FlowField>,
        provider: EmbeddingProvider,
        config: PipelineConfig,
    ) -> Result<Self> {
        let cache = ArtifactCache::new(config.cache_dir.clone())?;
        let id = dataset_id(&frames);
        Self::finish(frames, flows, None, config, cache, id, provider, None)
    }

    fn assemble(
        frames: FrameSet,
        flows: BTreeMap<(usize, usize), FlowField>,
        manifest: Option<DatasetManifest>,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.sdpf.validate()?;
        let cache = ArtifactCache::new(config.cache_dir.clone())?;
        let id = dataset_id(&frames);
        let (provider, report) = resolve_provider(&frames, manifest.as_ref(), &config, &cache, &id)?;
        Self::finish(frames, flows, manifest, config, cache, id, provider, report)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        frames: FrameSet,
        flows: BTreeMap<(usize, usize), FlowField>,
        manifest: Option<DatasetManifest>,
        config: PipelineConfig,
        cache: ArtifactCache,
        id: String,
        provider: EmbeddingProvider,
        train_report: Option<TrainReport>,
    ) -> Result<Self> {
        config.sdpf.validate()?;
        let embeddings = provider.embed_all(&frames)?;
        let graph = compute_graph(&embeddings, &config, &cache)?;
        let (fwd, bwd) = compute_flows(&frames, &flows, config.flow, &cache, &id)?;
        let ctx = MotionContext::from_flows(fwd, bwd, &config.sdpf)?;
        let resequencer = Resequencer::new(Arc::new(graph), Arc::new(ctx), &provider, config.sdpf.clone())?;
        Ok(Self {
            config,
            manifest,
            dataset_id: id,
            frames: Arc::new(frames),
            provider,
            embeddings,
            external_flows: !flows.is_empty(),
            resequencer,
            train_report,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn manifest(&self) -> Option<&DatasetManifest> {
        self.manifest.as_ref()
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn frames(&self) -> &FrameSet {
        &self.frames
    }

    pub fn shared_frames(&self) -> Arc<FrameSet> {
        self.frames.clone()
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn graph(&self) -> &Srg {
        self.resequencer.graph()
    }

    pub fn context(&self) -> &MotionContext {
        self.resequencer.context()
    }

    pub fn resequencer(&self) -> &Resequencer {
        &self.resequencer
    }

    pub fn has_external_flows(&self) -> bool {
        self.external_flows
    }

    pub fn train_report(&self) -> Option<&TrainReport> {
        self.train_report.as_ref()
    }

    /// Search with the configured parameters and the given seed.
    pub fn resequence(&self, start: usize, seed: u64) -> Result<SequencePath> {
        let params = SdpfParams {
            seed,
            ..self.config.sdpf.clone()
        };
        self.resequencer.run_with(start, &params)
    }

    /// Search with per-call knob overrides.
    pub fn resequence_with(&self, start: usize, params: &SdpfParams) -> Result<SequencePath> {
        self.resequencer.run_with(start, params)
    }
}
