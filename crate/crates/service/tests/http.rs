mod common;

use std::io::Cursor;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use cadelta_core::raster_io::{encode_mask_png, encode_png};
use cadelta_core::synth::{generate, SynthParams};
use cadelta_service::api::{router, AppState};
use cadelta_service::store::ProjectStore;
use common::*;
use serde_json::{json, Value};

struct Scene {
    map: Vec<u8>,
    truth: Vec<u8>,
    present: Vec<u8>,
    world: Vec<u8>,
}

fn scene() -> Scene {
    let s = generate(&SynthParams { width: 320, height: 240, buildings: 6, removed: 2, ..SynthParams::default() }).unwrap();
    Scene {
        map: encode_png(&s.map).unwrap(),
        truth: encode_mask_png(&s.truth).unwrap(),
        present: encode_mask_png(&s.present).unwrap(),
        world: s.georef().transform.to_world_file().into_bytes(),
    }
}

fn app(root: &std::path::Path) -> Router {
    router(AppState::new(ProjectStore::new(root).unwrap()))
}

async fn create(app: &Router, name: &str) -> String {
    let (st, v) = call_json(app, "POST", "/projects", Some(json!({"name": name, "crs": "EPSG:31256"}))).await;
    assert_eq!(st, 201, "{v}");
    v["project_id"].as_str().unwrap().to_string()
}

/// Project with all three layers uploaded and the full pipeline run.
async fn ready_project(app: &Router) -> String {
    let s = scene();
    let id = create(app, "Graz Lend").await;
    for (role, img) in [("historical_map", &s.map), ("historical_mask", &s.truth), ("present_mask", &s.present)] {
        let (st, v) = upload(app, &id, role, img, Some(&s.world)).await;
        assert_eq!(st, 201, "{v}");
        assert_eq!(v["layer_id"], role);
    }
    let (st, v) = call_json(app, "POST", &format!("/projects/{id}/run"), None).await;
    assert_eq!(st, 202);
    let job = wait_job(app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    id
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].is_string());
    assert!(v.get("detail").is_some());
}

#[tokio::test]
async fn project_lifecycle_and_lookup_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    assert_eq!(create(&app, "Graz Lend").await, "graz-lend");
    assert_eq!(create(&app, "Graz Lend").await, "graz-lend-2");
    let (st, v) = call_json(&app, "GET", "/projects", None).await;
    assert_eq!(st, 200);
    assert_eq!(v["projects"], json!(["graz-lend", "graz-lend-2"]));

    let (st, v) = call_json(&app, "GET", "/projects/nowhere", None).await;
    assert_eq!(st, 404);
    assert_error(&v, "not_found");
    let (st, v) = call_json(&app, "GET", "/no/such/route", None).await;
    assert_eq!(st, 404);
    assert_error(&v, "not_found");
    let (st, v) = call_json(&app, "GET", "/jobs/job-99", None).await;
    assert_eq!(st, 404);
    assert_error(&v, "not_found");

    let req = Request::builder().method("POST").uri("/projects").body(Body::from("{not json")).unwrap();
    let (st, bytes) = send(&app, req).await;
    assert_eq!(st, 400);
    assert_error(&serde_json::from_slice(&bytes).unwrap(), "bad_request");

    let (st, v) = call_json(&app, "POST", "/projects", Some(json!({"name": "deg", "crs": {"code": "EPSG:4326", "units": "degree"}}))).await;
    assert_eq!(st, 422);
    assert_error(&v, "non_metric_crs");
}

#[tokio::test]
async fn layer_upload_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let id = create(&app, "uploads").await;
    let s = scene();

    let (st, v) = upload(&app, &id, "historical_map", &s.map, Some(b"1.0\n0.0\nnot a number\n")).await;
    assert_eq!(st, 422);
    assert_error(&v, "world_file_malformed");

    let req = Request::builder()
        .method("POST")
        .uri(format!("/projects/{id}/layers"))
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart_body("present_mask", &s.present, Some(&s.world), Some("EPSG:3857"))))
        .unwrap();
    let (st, bytes) = send(&app, req).await;
    assert_eq!(st, 422);
    assert_error(&serde_json::from_slice(&bytes).unwrap(), "crs_mismatch");

    let (st, v) = upload(&app, &id, "historical_map", b"not a png", Some(&s.world)).await;
    assert_eq!(st, 422);
    assert_error(&v, "decode_error");

    // Nothing invalid was stored.
    let (_, v) = call_json(&app, "GET", &format!("/projects/{id}"), None).await;
    assert_eq!(v["project"]["layers"], json!([]));

    // Re-uploading a role replaces it; diffs accumulate.
    for _ in 0..2 {
        let (st, _) = upload(&app, &id, "present_mask", &s.present, Some(&s.world)).await;
        assert_eq!(st, 201);
    }
    let (_, d1) = upload(&app, &id, "diff", &s.map, Some(&s.world)).await;
    let (_, d2) = upload(&app, &id, "diff", &s.map, Some(&s.world)).await;
    assert_eq!((d1["layer_id"].as_str(), d2["layer_id"].as_str()), (Some("diff-1"), Some("diff-2")));
    let (_, v) = call_json(&app, "GET", &format!("/projects/{id}"), None).await;
    let ids: Vec<&str> = v["project"]["layers"].as_array().unwrap().iter().map(|l| l["layer_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["present_mask", "diff-1", "diff-2"]);
}

#[tokio::test]
async fn job_failure_is_reported_in_job_state() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let id = create(&app, "empty").await;
    let (st, v) = call_json(&app, "POST", &format!("/projects/{id}/run"), Some(json!({"steps": ["vectorize"]}))).await;
    assert_eq!(st, 202);
    let job = wait_job(&app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "failed");
    assert_eq!(job["error"]["code"], "missing_layer");

    let (st, v) = call_json(&app, "POST", &format!("/projects/{id}/run"), Some(json!({"steps": ["paint"]}))).await;
    assert_eq!(st, 400, "{v}");
    let (st, _) = call_json(&app, "POST", "/projects/nowhere/run", None).await;
    assert_eq!(st, 404);
}

#[tokio::test]
async fn params_before_and_after_vectorize() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let id = create(&app, "params").await;
    let p = json!({"buffer_m": 2.0, "min_site_area_m2": 10.0, "uncovered_ratio_threshold": 0.5, "working_resolution_m": 0.25});
    let (st, v) = call_json(&app, "PUT", &format!("/projects/{id}/params"), Some(p.clone())).await;
    assert_eq!(st, 200);
    assert_eq!(v["recomputed"], false);
    let (_, v) = call_json(&app, "GET", &format!("/projects/{id}"), None).await;
    assert_eq!(v["project"]["params"]["buffer_m"], 2.0);

    let (st, v) = call_json(&app, "PUT", &format!("/projects/{id}/params"), Some(json!({"buffer_m": -1.0}))).await;
    assert_eq!(st, 422);
    assert_error(&v, "invalid_argument");
}

#[tokio::test]
async fn candidates_review_and_filters() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let id = ready_project(&app).await;
    let (st, fc) = call_json(&app, "GET", &format!("/projects/{id}/candidates"), None).await;
    assert_eq!(st, 200);
    assert_eq!(fc["type"], "FeatureCollection");
    let features = fc["features"].as_array().unwrap();
    assert_eq!(features.len(), 2);
    assert!(features.iter().all(|f| f["properties"]["status"] == "unreviewed"));
    let site = features[0]["properties"]["site_id"].as_str().unwrap().to_string();

    let url = format!("/projects/{id}/candidates/{site}");
    let (st, v) = call_json(&app, "PATCH", &url, Some(json!({"status": "demolished", "notes": ""}))).await;
    assert_eq!(st, 409);
    assert_error(&v, "conflict");
    let (st, v) = call_json(&app, "PATCH", &format!("/projects/{id}/candidates/site-0000"), Some(json!({"status": "confirmed"}))).await;
    assert_eq!(st, 404);
    assert_error(&v, "not_found");
    let (st, v) = call_json(&app, "PATCH", &url, Some(json!({"status": "rejected", "notes": "modern shed"}))).await;
    assert_eq!(st, 200);
    assert_eq!((v["status"].as_str(), v["notes"].as_str()), (Some("rejected"), Some("modern shed")));
    assert!(v["updated_at"].is_string());

    let (_, only) = call_json(&app, "GET", &format!("/projects/{id}/candidates?status=rejected"), None).await;
    let only = only["features"].as_array().unwrap();
    assert_eq!(only.len(), 1);
    assert_eq!(only[0]["properties"]["site_id"], site.as_str());
    let (st, _) = call_json(&app, "GET", &format!("/projects/{id}/candidates?status=bogus"), None).await;
    assert!(st.is_client_error());

    // A buffer large enough to swallow every site archives the reviewed one.
    let p = json!({"buffer_m": 60.0, "min_site_area_m2": 10.0, "uncovered_ratio_threshold": 0.5, "working_resolution_m": 0.25});
    let (st, v) = call_json(&app, "PUT", &format!("/projects/{id}/params"), Some(p)).await;
    assert_eq!(st, 200, "{v}");
    assert_eq!((v["candidate_count"].as_u64(), v["archived_count"].as_u64()), (Some(0), Some(1)));
    let (_, archive) = call_json(&app, "GET", &format!("/projects/{id}/archive"), None).await;
    assert_eq!(archive["features"][0]["properties"]["status"], "rejected");
}

#[tokio::test]
async fn tiles_and_their_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let id = ready_project(&app).await;
    let get = |uri: String| {
        let app = app.clone();
        async move { send(&app, Request::builder().uri(uri).body(Body::empty()).unwrap()).await }
    };
    let (st, bytes) = get(format!("/projects/{id}/tiles/historical_map/0/0/0.png")).await;
    assert_eq!(st, 200);
    let tile = cadelta_core::raster_io::png_from_bytes(&bytes).unwrap();
    assert_eq!((tile.width(), tile.height(), tile.bands()), (256, 256, 4));

    // 320x240 layer: the bottom quarter of the root square is outside it.
    let (st, bytes) = get(format!("/projects/{id}/tiles/historical_map/2/0/3.png")).await;
    assert_eq!((st.as_u16(), bytes.len()), (204, 0));

    let (st, bytes) = get(format!("/projects/{id}/tiles/historical_map/1/2/0.png")).await;
    assert_eq!(st, 400);
    assert_error(&serde_json::from_slice(&bytes).unwrap(), "address_out_of_range");
    let (st, _) = get(format!("/projects/{id}/tiles/historical_map/0/0/0")).await;
    assert_eq!(st, 404);
    let (st, _) = get(format!("/projects/{id}/tiles/historical_map/x/0/0.png")).await;
    assert_eq!(st, 400);
    let (st, _) = get(format!("/projects/{id}/tiles/present_imagery/0/0/0.png")).await;
    assert_eq!(st, 404);
}

#[tokio::test]
async fn eval_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let id = ready_project(&app).await;
    let (st, v) = call_json(&app, "GET", &format!("/projects/{id}/eval?gt=historical_mask"), None).await;
    assert_eq!(st, 400);
    assert_error(&v, "bad_request");
    let (st, v) = call_json(&app, "GET", &format!("/projects/{id}/eval?gt=historical_mask&pred=nothing"), None).await;
    assert_eq!(st, 404, "{v}");
    let (st, report) =
        call_json(&app, "GET", &format!("/projects/{id}/eval?gt=historical_mask&pred=historical_segmented"), None).await;
    assert_eq!(st, 200);
    assert!(report["macro_iou"].as_f64().unwrap() >= 0.95);

    let req = Request::builder().uri(format!("/projects/{id}/export")).body(Body::empty()).unwrap();
    let (st, bytes) = send(&app, req).await;
    assert_eq!(st, 200);
    let zip = zip::ZipArchive::new(Cursor::new(bytes)).unwrap();
    let names: Vec<&str> = zip.file_names().collect();
    for want in ["project.json", "params.json", "candidates.geojson", "reports/eval-historical_mask-vs-historical_segmented.json"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
}
