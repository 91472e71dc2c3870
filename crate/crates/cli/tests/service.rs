//! The annotation service driven in-process through its router.

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use braille_cli::service::{load_pages, router, AppState};
use braille_core::annotation::{read_annotation, write_manifest, ManifestEntry, PageAnnotation, Split};
use braille_core::pipeline::{Detector, PipelineOptions};
use braille_core::raster::save_png;
use braille_core::synth::{random_cells, render_page, SideLayout, SynthSpec};
use braille_core::{GridGeometry, Point};
use http_body_util::BodyExt;
use rand::SeedableRng;
use serde_json::Value;
use tower::ServiceExt;

/// A clean single-sided page with an 8x10 block of cells.
fn write_page(dir: &Path, stem: &str, seed: u64) -> SideLayout {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let layout = SideLayout {
        origin: Point::new(40.0, 40.0),
        cells: random_cells(&mut rng, 8, 10, 0.5),
    };
    let spec = SynthSpec {
        recto: Some(layout.clone()),
        ..SynthSpec::blank(560, 700)
    };
    let (img, _) = render_page(&spec).unwrap();
    save_png(&img, dir.join(format!("{stem}.png"))).unwrap();
    layout
}

fn app(dir: &Path) -> Router {
    let pages = load_pages(dir).unwrap();
    let state = AppState::new(pages, Detector::segmentation(GridGeometry::default()), PipelineOptions::default());
    router(Arc::new(state), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn lists_pages_and_serves_png() {
    let tmp = tempfile::tempdir().unwrap();
    write_page(tmp.path(), "b", 1);
    write_page(tmp.path(), "a", 2);
    let app = app(tmp.path());
    let (status, listing) = call_json(&app, "GET", "/pages", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = listing["pages"].as_array().unwrap().iter().map(|p| p["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b"]);
    let (status, png) = call(&app, "GET", "/pages/a/image", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(call(&app, "GET", "/pages/zzz/image", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn auto_annotation_has_dots_and_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = write_page(tmp.path(), "p", 3);
    let app = app(tmp.path());
    let (status, auto) = call_json(&app, "GET", "/pages/p/auto", None).await;
    assert_eq!(status, StatusCode::OK, "{auto}");
    let dots: usize = layout.cells.iter().flatten().map(|p| p.count_ones() as usize).sum();
    assert_eq!(auto["annotation"]["recto"].as_array().unwrap().len(), dots);
    assert_eq!(auto["grid"]["x_lines"].as_array().map(Vec::len), Some(2 * layout.cols()));
    assert_eq!(auto["grid"]["y_lines"].as_array().map(Vec::len), Some(3 * layout.rows()));
    assert_eq!((auto["rows"].as_u64(), auto["cols"].as_u64()), (Some(layout.rows() as u64), Some(layout.cols() as u64)));
    let cells = auto["annotation"]["cells"].as_array().unwrap();
    for cell in cells {
        let (r, c) = (cell["row"].as_u64().unwrap() as usize, cell["col"].as_u64().unwrap() as usize);
        assert_eq!(cell["pattern"].as_u64().unwrap() as u8, layout.cells[r][c]);
    }
    // The second request is served from the cache and is identical.
    assert_eq!(call_json(&app, "GET", "/pages/p/auto", None).await.1, auto);
}

#[tokio::test]
async fn save_round_trips_and_bumps_revision() {
    let tmp = tempfile::tempdir().unwrap();
    write_page(tmp.path(), "p", 4);
    let app = app(tmp.path());
    assert_eq!(call(&app, "GET", "/pages/p/annotation", None).await.0, StatusCode::NOT_FOUND);

    let (_, auto) = call_json(&app, "GET", "/pages/p/auto", None).await;
    let body = auto["annotation"].to_string();
    let (status, saved) = call_json(&app, "PUT", "/pages/p/annotation", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{saved}");
    assert_eq!(saved["revision"], 1);

    let on_disk = read_annotation(tmp.path().join("p.json")).unwrap();
    assert_eq!(on_disk.revision, 1);
    let sent = PageAnnotation::from_json(&auto["annotation"].to_string(), Path::new("auto")).unwrap();
    assert_eq!(PageAnnotation { revision: 1, ..sent }, on_disk);

    let (status, fetched) = call_json(&app, "GET", "/pages/p/annotation", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, saved);

    // Editing from the fetched revision succeeds again.
    let (status, again) = call_json(&app, "PUT", "/pages/p/annotation", Some(fetched.to_string())).await;
    assert_eq!(status, StatusCode::OK, "{again}");
    assert_eq!(again["revision"], 2);
}

#[tokio::test]
async fn concurrent_saves_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    write_page(tmp.path(), "p", 5);
    let app = app(tmp.path());
    let (_, auto) = call_json(&app, "GET", "/pages/p/auto", None).await;
    let body = auto["annotation"].to_string();
    let (a, b) = tokio::join!(
        call_json(&app, "PUT", "/pages/p/annotation", Some(body.clone())),
        call_json(&app, "PUT", "/pages/p/annotation", Some(body.clone())),
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    // A stale revision is rejected and the file keeps the first save.
    let (status, err) = call_json(&app, "PUT", "/pages/p/annotation", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("stale"));
    assert_eq!(read_annotation(tmp.path().join("p.json")).unwrap().revision, 1);
}

#[tokio::test]
async fn malformed_saves_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_page(tmp.path(), "p", 6);
    let app = app(tmp.path());
    assert_eq!(call(&app, "PUT", "/pages/p/annotation", Some("{".into())).await.0, StatusCode::BAD_REQUEST);
    let mut ann = PageAnnotation::new("p.png", 560, 700);
    ann.recto.push(Point::new(10.0, 10.0));
    let mut wire: Value = serde_json::from_str(&ann.to_json().unwrap()).unwrap();
    wire["recto"][0][0] = Value::from(9999.0);
    let (status, _) = call(&app, "PUT", "/pages/p/annotation", Some(wire.to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(!tmp.path().join("p.json").exists());
}

#[tokio::test]
async fn manifest_pages_start_from_their_annotation() {
    let tmp = tempfile::tempdir().unwrap();
    write_page(tmp.path(), "p", 7);
    let mut ann = PageAnnotation::new("p.png", 560, 700);
    ann.recto.push(Point::new(40.0, 40.0));
    ann.revision = 3;
    let annotation = tmp.path().join("truth.json");
    braille_core::annotation::write_annotation(&ann, &annotation).unwrap();
    let manifest = tmp.path().join("m.csv");
    let entry = ManifestEntry {
        image: tmp.path().join("p.png"),
        annotation,
        book: "b".into(),
        split: Split::Test,
    };
    write_manifest(&[entry], &manifest).unwrap();
    let app = app(&manifest);
    let (status, current) = call_json(&app, "GET", "/pages/p/annotation", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(current["revision"], 3);
    let mut stale = current.clone();
    stale["revision"] = Value::from(2);
    assert_eq!(call(&app, "PUT", "/pages/p/annotation", Some(stale.to_string())).await.0, StatusCode::CONFLICT);
    let (status, saved) = call_json(&app, "PUT", "/pages/p/annotation", Some(current.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(saved["revision"], 4);
}

#[tokio::test]
async fn editor_assets_are_served_beside_the_api() {
    let tmp = tempfile::tempdir().unwrap();
    write_page(tmp.path(), "p", 8);
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>editor</html>").unwrap();
    let pages = load_pages(tmp.path()).unwrap();
    let state = AppState::new(pages, Detector::segmentation(GridGeometry::default()), PipelineOptions::default());
    let app = router(Arc::new(state), Some(assets.path()));
    let (status, html) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(html, b"<html>editor</html>");
    assert_eq!(call(&app, "GET", "/pages", None).await.0, StatusCode::OK);
}
