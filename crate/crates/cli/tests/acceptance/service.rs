use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use cytogate_core::cascade::{LabelAssignment, RuleProgram, ANNOTATION_STAINS};
use cytogate_core::synth::{cohort_layout, generate_slide, SynthConfig};
use cytogate_core::Outcome as LabelOutcome;
use cytogate_service::{router, AppState};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use crate::{bin, ensure, Outcome};

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Result<Value, String> {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
    ensure(status == StatusCode::OK, || format!("{uri}: {status} {}", String::from_utf8_lossy(&bytes)))?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

/// Outcome counts from a fresh `cytogate label --bundle` run on the persisted thresholds.
fn offline_counts(bundle: &std::path::Path) -> Result<BTreeMap<LabelOutcome, usize>, String> {
    let out = Command::new(bin())
        .args(["label", "--bundle"])
        .arg(bundle)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let labels = LabelAssignment::read_csv(out.stdout.as_slice()).map_err(|e| e.to_string())?;
    Ok(labels.counts())
}

fn compare(served: &Value, offline: &BTreeMap<LabelOutcome, usize>) -> Result<(), String> {
    for (o, &n) in offline {
        let got = match o {
            LabelOutcome::Class(c) => served["class_counts"][c.as_str()].as_u64(),
            LabelOutcome::Excluded => served["excluded"].as_u64(),
            LabelOutcome::Unlabeled => served["unlabeled"].as_u64(),
        };
        ensure(got == Some(n as u64), || format!("{o}: served {got:?}, offline {n}"))?;
    }
    Ok(())
}

pub fn cache_coherence() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let row = cohort_layout().remove(0);
    let slide_dir = tmp.path().join(&row.slide_id);
    let cfg = SynthConfig {
        width: 192,
        height: 192,
        ..SynthConfig::default()
    };
    generate_slide(&slide_dir, row.clone(), &cfg, 12).map_err(|e| e.to_string())?;
    let state = AppState::open(tmp.path(), RuleProgram::table1(), None).map_err(|e| e.to_string())?;
    ensure(state.slides.len() == 1, || format!("warnings: {:?}", state.warnings))?;
    let app = router(Arc::new(state));
    let uri = format!("/api/slides/{}", row.slide_id);

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (sequences, writes_per) = (5, 8);
    let mut distinct = std::collections::BTreeSet::new();
    for _ in 0..sequences {
        for _ in 0..writes_per {
            let mut body = serde_json::Map::new();
            for _ in 0..rng.random_range(1..=5) {
                let stain = ANNOTATION_STAINS[rng.random_range(0..ANNOTATION_STAINS.len())];
                body.insert(stain.into(), json!(rng.random_range(0.0..4000.0f64).round()));
            }
            rt.block_on(call(&app, Method::PUT, &format!("{uri}/thresholds"), Some(Value::Object(body))))?;
        }
        let served = rt.block_on(call(&app, Method::GET, &format!("{uri}/classes"), None))?;
        compare(&served, &offline_counts(&slide_dir)?)?;
        distinct.insert(served["class_counts"].to_string());
    }
    ensure(distinct.len() > 1, || "every sequence ended in the same distribution".into())?;
    Ok(format!(
        "{sequences} random sequences of {writes_per} PUTs, served counts equal offline label runs ({} distinct distributions)",
        distinct.len()
    ))
}
