use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use reseq_core::eval::{evaluate_path, EvaluationReport, OverlapStrategy};
use reseq_core::graph::content_candidates;
use reseq_core::pipeline::{Pipeline, PipelineConfig, ProviderChoice};
use reseq_core::sdpf::SdpfParams;
use reseq_core::synth;
use reseq_service::{router, AppState, FrameEntry, GraphResponse, SequenceResponse};

const N: usize = 16;

fn pipeline() -> Pipeline {
    let config = PipelineConfig {
        provider: ProviderChoice::Pixel,
        ..PipelineConfig::default()
    };
    Pipeline::from_frames(synth::orbit_clip(N, 160, 3), BTreeMap::new(), config).unwrap()
}

/// One shared reference pipeline for cross-checks.
fn reference() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(pipeline)
}

fn app() -> Router {
    router(AppState::with_pipeline(pipeline()).unwrap())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    send(app, req).await
}

fn json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

#[tokio::test]
async fn no_dataset_is_conflict() {
    let app = router(AppState::empty());
    for uri in ["/api/frames", "/api/graph", "/api/sequence/seq-1", "/thumb/0"] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::CONFLICT, "{uri}");
        let v: serde_json::Value = json(&body);
        assert_eq!(v["kind"], "no_dataset_loaded");
    }
    let (status, _) = post_json(&app, "/api/resequence", r#"{"start": 0}"#).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn frames_mirror_the_motion_context() {
    let app = app();
    let (status, body) = get(&app, "/api/frames").await;
    assert_eq!(status, StatusCode::OK);
    let frames: Vec<FrameEntry> = json(&body);
    assert_eq!(frames.len(), N);
    let ctx = reference().context();
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f.index, i);
        assert_eq!(f.thumbnail_url, format!("/thumb/{i}"));
        assert_eq!(f.is_lms, ctx.lms.is_lms[i]);
        assert_eq!(f.tendency_deg, ctx.tendencies[i].degrees());
    }
    assert!(frames.iter().any(|f| f.is_lms));
}

#[tokio::test]
async fn graph_neighbors_match_first_layer() {
    let app = app();
    let g = reference().graph();
    for node in [0, 5, N - 1] {
        let (status, body) = get(&app, &format!("/api/graph?neighbors_of={node}")).await;
        assert_eq!(status, StatusCode::OK);
        let GraphResponse::Neighbors { n, eta, neighbors, .. } = json(&body) else {
            panic!("expected a neighbor listing");
        };
        assert_eq!((n, eta), (N, g.eta()));
        assert_eq!(neighbors.len(), N - 1);
        let s1 = content_candidates(g, node, &HashSet::new()).unwrap().nodes;
        let flagged: Vec<usize> = neighbors.iter().filter(|e| e.below_eta).map(|e| e.index).collect();
        assert_eq!(flagged, s1);
        for e in &neighbors {
            assert_eq!(e.weight, g.weight(node, e.index));
        }
    }
    let (status, body) = get(&app, &format!("/api/graph?neighbors_of={N}")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json::<serde_json::Value>(&body)["kind"], "index_out_of_range");
}

#[tokio::test]
async fn graph_summary() {
    let app = app();
    let (status, body) = get(&app, "/api/graph").await;
    assert_eq!(status, StatusCode::OK);
    let GraphResponse::Summary { n, eta, edges, histogram } = json(&body) else {
        panic!("expected a summary");
    };
    assert_eq!(n, N);
    assert_eq!(eta, reference().graph().eta());
    assert_eq!(edges, N * (N - 1) / 2);
    assert_eq!(histogram.iter().map(|b| b.count).sum::<usize>(), edges);
    assert!(histogram.windows(2).all(|w| w[0].hi == w[1].lo));
}

#[tokio::test]
async fn seeded_resequence_is_reproducible() {
    let app = app();
    let (s1, b1) = post_json(&app, "/api/resequence", r#"{"start": 0, "seed": 42}"#).await;
    let (s2, b2) = post_json(&app, "/api/resequence", r#"{"start": 0, "seed": 42}"#).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    let (a, b): (SequenceResponse, SequenceResponse) = (json(&b1), json(&b2));
    assert_ne!(a.sequence_id, b.sequence_id);
    assert_eq!(a.indices, b.indices);
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(a.seed, 42);

    let direct = reference().resequence(0, 42).unwrap();
    assert_eq!(a.indices, direct.indices);
    assert_eq!(a.stop_reason, direct.stop_reason);
    assert_eq!(a.diagnostics.steps, direct.steps);
}

#[tokio::test]
async fn request_overrides_reach_the_search() {
    let app = app();
    let body = r#"{"start": 3, "seed": 7, "temperature": 0.0, "disable_cd": true, "disable_ct": true, "max_length": 4}"#;
    let (status, bytes) = post_json(&app, "/api/resequence", body).await;
    assert_eq!(status, StatusCode::OK);
    let r: SequenceResponse = json(&bytes);
    let params = &r.diagnostics.params;
    assert!(params.disable_cd && params.disable_ct);
    assert_eq!(params.temperature, 0.0);
    assert_eq!(params.max_length, Some(4));
    assert!(r.indices.len() <= 4);
    let want = reference()
        .resequence_with(
            3,
            &SdpfParams {
                seed: 7,
                temperature: 0.0,
                disable_cd: true,
                disable_ct: true,
                max_length: Some(4),
                ..SdpfParams::default()
            },
        )
        .unwrap();
    assert_eq!(r.indices, want.indices);
}

#[tokio::test]
async fn omitted_seed_is_echoed() {
    let app = app();
    let (status, body) = post_json(&app, "/api/resequence", r#"{"start": 2}"#).await;
    assert_eq!(status, StatusCode::OK);
    let r: SequenceResponse = json(&body);
    assert_eq!(r.diagnostics.params.seed, r.seed);
    // Replaying with the echoed seed reproduces the run.
    let replay = format!(r#"{{"start": 2, "seed": {}}}"#, r.seed);
    let (_, body) = post_json(&app, "/api/resequence", &replay).await;
    assert_eq!(json::<SequenceResponse>(&body).indices, r.indices);
}

#[tokio::test]
async fn bad_requests() {
    let app = app();
    let (status, body) = post_json(&app, "/api/resequence", r#"{"start": 999}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json::<serde_json::Value>(&body)["kind"], "start_out_of_range");
    let (status, _) = post_json(&app, "/api/resequence", r#"{"seed": 1}"#).await;
    assert!(status.is_client_error());
    let (status, _) = post_json(&app, "/api/resequence", r#"{"start": 0, "temperature": -1}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, "/api/sequence/seq-77").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/api/evaluate/seq-77").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stored_sequence_and_evaluation() {
    let app = app();
    let (_, body) = post_json(&app, "/api/resequence", r#"{"start": 4, "seed": 9}"#).await;
    let posted: SequenceResponse = json(&body);
    let (status, body) = get(&app, &format!("/api/sequence/{}", posted.sequence_id)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json::<SequenceResponse>(&body), posted);

    let (status, body) = get(&app, &format!("/api/evaluate/{}", posted.sequence_id)).await;
    let frames = reference().frames();
    match evaluate_path(&posted.sequence_id, frames, &posted.indices, OverlapStrategy::Runs) {
        Ok(want) => {
            assert_eq!(status, StatusCode::OK);
            assert_eq!(json::<EvaluationReport>(&body), want);
        }
        Err(_) => assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY),
    }
}

#[tokio::test]
async fn single_frame_sequence_cannot_be_evaluated() {
    let app = app();
    let (_, body) = post_json(&app, "/api/resequence", r#"{"start": 1, "seed": 0, "max_length": 1}"#).await;
    let r: SequenceResponse = json(&body);
    assert_eq!(r.indices, vec![1]);
    let (status, _) = get(&app, &format!("/api/evaluate/{}", r.sequence_id)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn thumbnails_are_small_pngs() {
    let app = app();
    let resp = app.clone().oneshot(Request::get("/thumb/3").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!((img.width(), img.height()), (128, 128));
    let (status, _) = get(&app, &format!("/thumb/{N}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reads_are_stable_across_requests() {
    let app = app();
    for uri in ["/api/frames", "/api/graph", "/api/graph?neighbors_of=2", "/thumb/0"] {
        let (_, a) = get(&app, uri).await;
        post_json(&app, "/api/resequence", r#"{"start": 0, "seed": 1}"#).await;
        let (_, b) = get(&app, uri).await;
        assert_eq!(a, b, "{uri}");
    }
}

#[tokio::test]
async fn cors_headers_present() {
    let app = app();
    let req = Request::get("/api/frames")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");

    let strict = reseq_service::router_with_cors(
        AppState::with_pipeline(pipeline()).unwrap(),
        &["http://ui.example".to_string()],
    );
    let req = Request::get("/api/frames")
        .header(header::ORIGIN, "http://ui.example")
        .body(Body::empty())
        .unwrap();
    let resp = strict.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://ui.example");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_requests_do_not_interfere() {
    let app = app();
    let tasks: Vec<_> = (0..12u64)
        .map(|seed| {
            let app = app.clone();
            tokio::spawn(async move {
                let body = format!(r#"{{"start": {}, "seed": {seed}}}"#, seed as usize % N);
                let (status, bytes) = post_json(&app, "/api/resequence", &body).await;
                assert_eq!(status, StatusCode::OK);
                (seed, json::<SequenceResponse>(&bytes))
            })
        })
        .collect();
    let mut ids = HashSet::new();
    for t in tasks {
        let (seed, r) = t.await.unwrap();
        assert!(ids.insert(r.sequence_id.clone()));
        let want = reference().resequence(seed as usize % N, seed).unwrap();
        assert_eq!(r.indices, want.indices);
    }
    assert_eq!(ids.len(), 12);
}
