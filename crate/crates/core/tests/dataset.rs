use std::collections::BTreeMap;
use std::path::Path;

use reseq_core::media_io::{
    load_external_flows, load_frame_set, write_embeddings, write_flo, DatasetManifest, EmbeddingSet, FlowField,
    TAG_EXTERNAL,
};
use reseq_core::pipeline::{Pipeline, PipelineConfig, ProviderChoice};
use reseq_core::sdpf::StopReason;
use reseq_core::{synth, Error, ErrorClass};

const N: usize = 12;

/// Writes an orbit clip as `f1.png .. f12.png` so lexical and natural
/// order differ.
fn write_clip(dir: &Path) {
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    let clip = synth::orbit_clip(N, 32, 8);
    for (i, f) in clip.frames().iter().enumerate() {
        f.to_rgb8().save(dir.join("frames").join(format!("f{}.png", i + 1))).unwrap();
    }
}

fn write_manifest(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("dataset.json");
    std::fs::write(&path, format!(r#"{{"frames": "frames", "resize": null{extra}}}"#)).unwrap();
    path
}

fn pixel() -> PipelineConfig {
    PipelineConfig {
        provider: ProviderChoice::Pixel,
        ..PipelineConfig::default()
    }
}

#[test]
fn frames_load_in_natural_order() {
    let tmp = tempfile::tempdir().unwrap();
    write_clip(tmp.path());
    let manifest = DatasetManifest::from_path(&write_manifest(tmp.path(), "")).unwrap();
    let set = load_frame_set(&manifest).unwrap();
    assert_eq!(set.len(), N);
    assert_eq!(set.names()[1], "f2.png");
    assert_eq!(set.names()[N - 1], "f12.png");
    assert_eq!((set.width(), set.height()), (32, 32));
}

#[test]
fn glob_and_resize() {
    let tmp = tempfile::tempdir().unwrap();
    write_clip(tmp.path());
    let path = tmp.path().join("glob.json");
    std::fs::write(&path, r#"{"frames": "frames/f1*.png", "resize": 16}"#).unwrap();
    let set = load_frame_set(&DatasetManifest::from_path(&path).unwrap()).unwrap();
    // f1, f10, f11, f12
    assert_eq!(set.len(), 4);
    assert_eq!(set.names(), ["f1.png", "f10.png", "f11.png", "f12.png"]);
    assert_eq!(set.width(), 16);
}

#[test]
fn pipeline_from_manifest_runs() {
    let tmp = tempfile::tempdir().unwrap();
    write_clip(tmp.path());
    let p = Pipeline::from_manifest_path(&write_manifest(tmp.path(), ""), pixel()).unwrap();
    assert_eq!(p.frames().len(), N);
    assert!(!p.has_external_flows());
    let path = p.resequence(3, 11).unwrap();
    assert_eq!(path.indices[0], 3);
    assert_eq!(path, p.resequence(3, 11).unwrap());
    assert!(matches!(p.resequence(N, 0), Err(Error::StartOutOfRange { start: N, n: N })));
}

#[test]
fn external_embeddings_define_the_graph() {
    let tmp = tempfile::tempdir().unwrap();
    write_clip(tmp.path());
    // Frames on a line: the graph weight is the index gap.
    let rows: Vec<Vec<f32>> = (0..N).map(|i| vec![i as f32, 0.0]).collect();
    write_embeddings(&tmp.path().join("emb.rsem"), &EmbeddingSet::from_rows(rows, TAG_EXTERNAL).unwrap()).unwrap();
    let manifest = write_manifest(tmp.path(), r#", "embeddings": "emb.rsem""#);
    let p = Pipeline::from_manifest_path(&manifest, PipelineConfig::default()).unwrap();
    assert_eq!(p.provider().tag(), TAG_EXTERNAL);
    assert_eq!(p.graph().weight(2, 7), 5.0);
    let n = N as f64;
    // Mean |i - j| over pairs is (n + 1) / 3.
    assert!((p.graph().eta() - (n + 1.0) / 3.0).abs() < 1e-12);
    let path = p.resequence(0, 1).unwrap();
    for s in &path.steps {
        assert!(s.edge_weight < p.graph().eta());
    }
}

#[test]
fn embedding_row_count_must_match() {
    let tmp = tempfile::tempdir().unwrap();
    write_clip(tmp.path());
    let rows: Vec<Vec<f32>> = (0..N - 1).map(|i| vec![i as f32]).collect();
    write_embeddings(&tmp.path().join("emb.rsem"), &EmbeddingSet::from_rows(rows, TAG_EXTERNAL).unwrap()).unwrap();
    let manifest = write_manifest(tmp.path(), r#", "embeddings": "emb.rsem""#);
    let err = Pipeline::from_manifest_path(&manifest, PipelineConfig::default()).err().unwrap();
    assert!(matches!(err, Error::ProviderNotReady(_)), "{err}");
}

#[test]
fn external_flows_drive_tendencies() {
    let tmp = tempfile::tempdir().unwrap();
    write_clip(tmp.path());
    let flows = tmp.path().join("flows");
    std::fs::create_dir_all(&flows).unwrap();
    // Rightward motion of varying speed between every consecutive pair.
    for i in 0..N - 1 {
        let f = FlowField::from_fn(32, 32, |x, _| (1.0 + (x % 3) as f32, 0.0));
        write_flo(&flows.join(format!("{i:04}_{:04}.flo", i + 1)), &f).unwrap();
    }
    let manifest_path = write_manifest(tmp.path(), r#", "flows": "flows""#);
    let manifest = DatasetManifest::from_path(&manifest_path).unwrap();
    let loaded = load_external_flows(&manifest).unwrap();
    assert_eq!(loaded.len(), N - 1);
    assert_eq!(loaded[&(4, 5)].pair, Some((4, 5)));

    let p = Pipeline::from_manifest_path(&manifest_path, pixel()).unwrap();
    assert!(p.has_external_flows());
    let ctx = p.context();
    assert!(ctx.tendencies.iter().all(|t| t.valid && t.angle == 0.0));
    assert!(ctx.lms.is_lms.iter().all(|&b| b));
    assert_eq!(ctx.lms.segments, vec![(0, N - 1)]);
}

#[test]
fn manifest_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let err = DatasetManifest::from_path(&missing).unwrap_err();
    assert!(matches!(err, Error::MissingPath(_)));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let err = DatasetManifest::from_path(&bad).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Input);

    let no_frames = write_manifest(tmp.path(), "");
    assert!(matches!(DatasetManifest::from_path(&no_frames), Err(Error::MissingPath(_))));
}

#[test]
fn one_frame_is_not_a_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(tmp.path().join("frames")).unwrap();
    synth::textured_image(8, 8, 0).to_rgb8().save(tmp.path().join("frames/a.png")).unwrap();
    let manifest = DatasetManifest::from_path(&write_manifest(tmp.path(), "")).unwrap();
    assert!(matches!(load_frame_set(&manifest), Err(Error::FewerThanTwoFrames(1))));
}

#[test]
fn in_memory_and_manifest_agree() {
    let tmp = tempfile::tempdir().unwrap();
    write_clip(tmp.path());
    let from_disk = Pipeline::from_manifest_path(&write_manifest(tmp.path(), ""), pixel()).unwrap();
    let in_memory = Pipeline::from_frames(from_disk.frames().clone(), BTreeMap::new(), pixel()).unwrap();
    assert_eq!(from_disk.graph(), in_memory.graph());
    let a = from_disk.resequence(5, 2).unwrap();
    assert_eq!(a, in_memory.resequence(5, 2).unwrap());
    assert!(matches!(
        a.stop_reason,
        StopReason::EmptyS2 | StopReason::Exhausted | StopReason::MaxLength
    ));
}
