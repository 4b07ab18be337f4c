use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use reseq_core::eval::{evaluate_path, format_table, EvaluationReport};
use reseq_core::features::EmbeddingProvider;
use reseq_core::flow::MotionTendency;
use reseq_core::graph::content_candidates;
use reseq_core::media_io::{
    load_external_flows, load_frame_set, read_embeddings, write_embeddings, write_flo, DatasetManifest,
};
use reseq_core::metric::{train_metric_with_report, LearnedEmbedding, TrainConfig};
use reseq_core::pipeline::{
    compute_flows, dataset_id, ArtifactCache, Pipeline, PipelineConfig, ProviderChoice,
};
use reseq_core::sdpf::{FlowOptions, MotionContext, SdpfParams, StepRecord, StopReason, TerminalRecord};
use reseq_service::AppState;

use crate::{Command, DatasetArgs, SearchArgs};

const CACHE_DIR_NAME: &str = ".reseq-cache";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(d) => ingest(&d),
        Command::TrainMetric { dataset, out, report } => train(&dataset, &out, report.as_deref()),
        Command::Flows { dataset, out } => flows(&dataset, &out),
        Command::Graph {
            dataset,
            out,
            embeddings_out,
        } => graph(&dataset, out.as_deref(), embeddings_out.as_deref()),
        Command::Resequence {
            dataset,
            search,
            out,
            frames_out,
        } => resequence(&dataset, &search, out.as_deref(), frames_out.as_deref()),
        Command::Evaluate {
            dataset,
            sequences,
            strategy,
            out,
        } => evaluate(&dataset, &sequences, strategy.into(), out.as_deref()),
        Command::Serve {
            dataset,
            addr,
            cors_origins,
        } => serve(&dataset, addr, cors_origins),
    }
}

impl DatasetArgs {
    fn manifest(&self) -> Result<DatasetManifest> {
        DatasetManifest::from_path(&self.manifest)
            .with_context(|| format!("loading manifest {}", self.manifest.display()))
    }

    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            provider: if self.plain_euclidean {
                ProviderChoice::Pixel
            } else {
                self.provider.into()
            },
            ..PipelineConfig::default()
        };
        cfg.train = self.train_config();
        if let Some(side) = self.feature_side {
            cfg.pixel_side = side;
        }
        if !self.no_cache {
            cfg.cache_dir = Some(self.cache_dir.clone().unwrap_or_else(|| {
                let parent = self.manifest.parent().unwrap_or(Path::new("."));
                parent.join(CACHE_DIR_NAME)
            }));
        }
        cfg
    }

    fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig {
            seed: self.train_seed,
            ..TrainConfig::default()
        };
        if let Some(side) = self.feature_side {
            t.side = side;
        }
        if let Some(dim) = self.metric_dim {
            t.embedding_dim = dim;
        }
        if let Some(e) = self.max_epochs {
            t.max_epochs = e;
        }
        t
    }

    fn pipeline_with(&self, sdpf: SdpfParams) -> Result<Pipeline> {
        let mut cfg = self.config();
        cfg.sdpf = sdpf;
        let manifest = self.manifest()?;
        let pipeline = match &self.model {
            Some(path) => {
                let set = read_embeddings(path).with_context(|| format!("reading model {}", path.display()))?;
                let model = LearnedEmbedding::from_embedding_set(&set)?;
                let frames = load_frame_set(&manifest)?;
                let flows = load_external_flows(&manifest)?;
                Pipeline::with_provider(frames, flows, EmbeddingProvider::Learned(Arc::new(model)), cfg)?
            }
            None => Pipeline::from_manifest(manifest, cfg)?,
        };
        log::info!("dataset {} ready, provider {}", pipeline.dataset_id(), pipeline.provider().tag());
        Ok(pipeline)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        self.pipeline_with(SdpfParams::default())
    }
}

fn ingest(d: &DatasetArgs) -> Result<()> {
    let manifest = d.manifest()?;
    let frames = load_frame_set(&manifest)?;
    let flows = load_external_flows(&manifest)?;
    println!("frames: {}", frames.len());
    println!("resolution: {}x{}", frames.width(), frames.height());
    println!("external flow: {}", if flows.is_empty() { "no" } else { "yes" });
    println!(
        "external embeddings: {}",
        if manifest.embeddings.is_some() { "yes" } else { "no" }
    );
    println!("dataset id: {}", dataset_id(&frames));
    Ok(())
}

fn train(d: &DatasetArgs, out: &Path, report_path: Option<&Path>) -> Result<()> {
    let frames = load_frame_set(&d.manifest()?)?;
    let (model, report) = train_metric_with_report(&frames, &d.train_config())?;
    write_embeddings(out, &model.to_embedding_set())?;
    println!(
        "trained on {} triplets: loss {:.4} -> {:.4}, best epoch {}",
        report.triplets, report.initial_loss, report.final_loss, report.best_epoch
    );
    println!("model written to {}", out.display());
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MotionSummary {
    /// Degrees, `null` where a pair has no dominant motion.
    pair_tendencies: Vec<Option<f64>>,
    frame_tendencies: Vec<Option<f64>>,
    is_lms: Vec<bool>,
    segments: Vec<(usize, usize)>,
}

fn degrees(t: &[MotionTendency]) -> Vec<Option<f64>> {
    t.iter().map(|t| t.degrees()).collect()
}

fn flows(d: &DatasetArgs, out: &Path) -> Result<()> {
    let manifest = d.manifest()?;
    let frames = load_frame_set(&manifest)?;
    let external = load_external_flows(&manifest)?;
    let cfg = d.config();
    let cache = ArtifactCache::new(cfg.cache_dir.clone())?;
    let (fwd, bwd) = compute_flows(&frames, &external, cfg.flow, &cache, &dataset_id(&frames))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, (f, b)) in fwd.iter().zip(&bwd).enumerate() {
        write_flo(&out.join(format!("{:04}_{:04}.flo", i, i + 1)), f)?;
        write_flo(&out.join(format!("{:04}_{:04}.flo", i + 1, i)), b)?;
    }
    let ctx = MotionContext::from_flows(fwd, bwd, &cfg.sdpf)?;
    let summary = MotionSummary {
        pair_tendencies: degrees(&ctx.pair_tendencies),
        frame_tendencies: degrees(&ctx.tendencies),
        is_lms: ctx.lms.is_lms.clone(),
        segments: ctx.lms.segments.clone(),
    };
    write_json(&out.join("motion.json"), &summary)?;
    let lms = ctx.lms.is_lms.iter().filter(|&&b| b).count();
    println!(
        "{} flow pairs written; {} of {} frames in {} motion segments",
        frames.len() - 1,
        lms,
        frames.len(),
        ctx.lms.segment_count()
    );
    Ok(())
}

fn graph(d: &DatasetArgs, out: Option<&Path>, embeddings_out: Option<&Path>) -> Result<()> {
    let p = d.pipeline()?;
    let g = p.graph();
    let n = g.len();
    let export = g.export();
    let (lo, hi) = export
        .upper_triangle
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &w| (lo.min(w), hi.max(w)));
    let mut s1_total = 0;
    for i in 0..n {
        s1_total += content_candidates(g, i, &Default::default())?.len();
    }
    println!("nodes: {n}");
    println!("provider: {}", p.provider().tag());
    println!("eta: {:.6}", g.eta());
    println!("weight range: {lo:.6} .. {hi:.6}");
    println!("mean neighbours below eta: {:.2}", s1_total as f64 / n as f64);
    if let Some(path) = out {
        write_json(path, &export)?;
    }
    if let Some(path) = embeddings_out {
        write_embeddings(path, p.embeddings())?;
    }
    Ok(())
}

/// Settings that shape a search result, recorded so a file can be replayed.
#[derive(Debug, Serialize, Deserialize)]
struct RunConfig {
    provider: String,
    pixel_side: usize,
    train: TrainConfig,
    flow: FlowOptions,
    external_flows: bool,
}

/// On-disk form of one generated sequence. Contains no timestamps, so
/// identical inputs give identical bytes.
#[derive(Debug, Serialize, Deserialize)]
struct SequenceFile {
    dataset_id: String,
    frame_count: usize,
    start: usize,
    seed: u64,
    indices: Vec<usize>,
    frames: Vec<String>,
    stop_reason: StopReason,
    params: SdpfParams,
    config: RunConfig,
    steps: Vec<StepRecord>,
    terminal: TerminalRecord,
}

/// Only the part of a sequence file evaluation needs; anything with an
/// `indices` array will do.
#[derive(Deserialize)]
struct IndicesOnly {
    indices: Vec<usize>,
}

fn search_params(s: &SearchArgs) -> SdpfParams {
    let base = SdpfParams::default();
    SdpfParams {
        seed: s.seed,
        temperature: s.temperature.unwrap_or(base.temperature),
        disable_cd: s.no_cd,
        disable_ct: s.no_ct,
        max_length: s.max_length.or(base.max_length),
        ..base
    }
}

fn resequence(d: &DatasetArgs, s: &SearchArgs, out: Option<&Path>, frames_out: Option<&Path>) -> Result<()> {
    let params = search_params(s);
    let p = d.pipeline_with(params.clone())?;
    let path = p.resequence_with(s.start, &params)?;
    let names = p.frames().names();
    let cfg = p.config();
    let file = SequenceFile {
        dataset_id: p.dataset_id().to_string(),
        frame_count: p.frames().len(),
        start: s.start,
        seed: path.seed,
        frames: path.indices.iter().map(|&i| names[i].clone()).collect(),
        indices: path.indices,
        stop_reason: path.stop_reason,
        params: path.params,
        config: RunConfig {
            provider: p.provider().tag().to_string(),
            pixel_side: cfg.pixel_side,
            train: cfg.train.clone(),
            flow: cfg.flow,
            external_flows: p.has_external_flows(),
        },
        steps: path.steps,
        terminal: path.terminal,
    };
    if let Some(dir) = frames_out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (k, &i) in file.indices.iter().enumerate() {
            let target = dir.join(format!("{k:04}.png"));
            p.frames()
                .frame(i)
                .to_rgb8()
                .save(&target)
                .with_context(|| format!("writing {}", target.display()))?;
        }
    }
    let summary = format!("stop reason: {}\nlength: {}", file.stop_reason, file.indices.len());
    match out {
        Some(o) => {
            write_json(o, &file)?;
            println!("{summary}");
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&file)?);
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn evaluate(
    d: &DatasetArgs,
    sequences: &[PathBuf],
    strategy: reseq_core::eval::OverlapStrategy,
    out: Option<&Path>,
) -> Result<()> {
    let manifest = d.manifest()?;
    let frames = load_frame_set(&manifest)?;
    let mut reports: Vec<EvaluationReport> = Vec::with_capacity(sequences.len());
    for path in sequences {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let seq: IndicesOnly = serde_json::from_str(&text)
            .map_err(reseq_core::Error::from)
            .with_context(|| format!("parsing {}", path.display()))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let report = evaluate_path(label, &frames, &seq.indices, strategy)
            .with_context(|| format!("evaluating {}", path.display()))?;
        reports.push(report);
    }
    print!("{}", format_table(&reports));
    if let Some(o) = out {
        write_json(o, &reports)?;
    }
    Ok(())
}

fn serve(d: &DatasetArgs, addr: std::net::SocketAddr, origins: Vec<String>) -> Result<()> {
    let state = AppState::with_pipeline(d.pipeline()?)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        reseq_service::serve(state, addr, &origins, shutdown).await
    })?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
