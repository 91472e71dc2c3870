//! HTTP interface for interactive annotation.
//!
//! ```text
//! GET  /pages                  page listing
//! GET  /pages/{id}/image       page image as PNG
//! GET  /pages/{id}/auto        auto-annotation and cell grid (cached)
//! GET  /pages/{id}/annotation  saved annotation, 404 if none
//! PUT  /pages/{id}/annotation  save; the body revision must match the file
//! ```
//!
//! Saves to one page are serialized. A save whose revision differs from the
//! stored one is rejected with 409 so a stale editor never overwrites newer
//! work. Stored annotations get `revision + 1`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use braille_core::annotation::{load_manifest, import_dsbi, read_annotation, read_any_annotation, write_annotation, PageAnnotation};
use braille_core::pipeline::{auto_annotate, Detector, PipelineOptions};
use braille_core::raster::{encode_png, load_gray};
use serde::Serialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// One page the service can edit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PageSource {
    pub id: String,
    pub image: PathBuf,
    /// Annotation the page starts from; may not exist yet.
    pub annotation: PathBuf,
    pub book: Option<String>,
}

impl PageSource {
    /// Where saves go. Non-JSON sources (DSBI labels) get a JSON sibling so
    /// the original file is never rewritten.
    pub fn save_path(&self) -> PathBuf {
        if self.annotation.extension().is_some_and(|e| e == "json") {
            self.annotation.clone()
        } else {
            self.annotation.with_extension("json")
        }
    }

    /// The newest stored annotation: the saved JSON if present, else the
    /// source annotation.
    pub fn current(&self) -> braille_core::Result<Option<PageAnnotation>> {
        let saved = self.save_path();
        if saved.is_file() {
            return read_annotation(&saved).map(Some);
        }
        if self.annotation.is_file() {
            return read_any_annotation(&self.annotation, Some(&self.image)).map(Some);
        }
        Ok(None)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '+' { c } else { '_' })
        .collect()
}

/// Gives every page a URL-safe id: the image stem, prefixed by the book
/// when stems repeat.
fn assign_ids(raw: Vec<(PathBuf, PathBuf, Option<String>)>) -> Vec<PageSource> {
    let stem = |p: &Path| sanitize(&p.file_stem().unwrap_or_default().to_string_lossy());
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (image, _, _) in &raw {
        *seen.entry(stem(image)).or_default() += 1;
    }
    let mut used = std::collections::HashSet::new();
    raw.into_iter()
        .map(|(image, annotation, book)| {
            let base = stem(&image);
            let mut id = match (&book, seen[&base] > 1) {
                (Some(b), true) => format!("{}-{base}", sanitize(b)),
                _ => base,
            };
            let mut n = 2;
            while !used.insert(id.clone()) {
                id = format!("{id}-{n}");
                n += 1;
            }
            PageSource { id, image, annotation, book }
        })
        .collect()
}

/// Pages from a CSV manifest, a DSBI checkout, or a directory of images
/// (annotations become `<stem>.json` next to each image).
pub fn load_pages(input: &Path) -> braille_core::Result<Vec<PageSource>> {
    let raw: Vec<(PathBuf, PathBuf, Option<String>)> = if input.is_file() {
        load_manifest(input)?
            .entries
            .into_iter()
            .map(|e| (e.image, e.annotation, Some(e.book)))
            .collect()
    } else if input.join("data").is_dir() {
        import_dsbi(input)?
            .entries
            .into_iter()
            .map(|e| (e.image, e.annotation, Some(e.book)))
            .collect()
    } else {
        let entries = std::fs::read_dir(input).map_err(|e| braille_core::Error::Io {
            path: input.to_path_buf(),
            source: e,
        })?;
        let mut images: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        images.sort();
        images
            .into_iter()
            .map(|image| {
                let annotation = image.with_extension("json");
                (image, annotation, None)
            })
            .collect()
    };
    Ok(assign_ids(raw))
}

pub struct AppState {
    pages: BTreeMap<String, PageSource>,
    order: Vec<String>,
    detector: Detector,
    options: PipelineOptions,
    auto_cache: Mutex<HashMap<String, Arc<Value>>>,
    save_locks: HashMap<String, tokio::sync::Mutex<()>>,
}

impl AppState {
    pub fn new(pages: Vec<PageSource>, detector: Detector, options: PipelineOptions) -> Self {
        let order = pages.iter().map(|p| p.id.clone()).collect();
        let save_locks = pages.iter().map(|p| (p.id.clone(), tokio::sync::Mutex::new(()))).collect();
        Self {
            pages: pages.into_iter().map(|p| (p.id.clone(), p)).collect(),
            order,
            detector,
            options,
            auto_cache: Mutex::new(HashMap::new()),
            save_locks,
        }
    }

    fn page(&self, id: &str) -> Result<&PageSource, ApiError> {
        self.pages
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no page {id}")))
    }
}

/// Builds the router. When `assets` is given, other paths are served from
/// that directory (the browser editor).
pub fn router(state: Arc<AppState>, assets: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/pages", get(list_pages))
        .route("/pages/{id}/image", get(page_image))
        .route("/pages/{id}/auto", get(page_auto))
        .route("/pages/{id}/annotation", get(get_annotation).put(put_annotation))
        .with_state(state);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<braille_core::Error> for ApiError {
    fn from(e: braille_core::Error) -> Self {
        use braille_core::Error as E;
        let status = match e {
            E::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => StatusCode::NOT_FOUND,
            E::Io { .. } | E::Image { .. } | E::Csv(_) | E::Training(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn annotation_json(a: &PageAnnotation) -> Result<Value, ApiError> {
    let text = a.to_json()?;
    serde_json::from_str(&text).map_err(|e| ApiError::internal(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn list_pages(State(state): State<Arc<AppState>>) -> Json<Value> {
    let pages: Vec<Value> = state
        .order
        .iter()
        .map(|id| {
            let p = &state.pages[id];
            json!({
                "id": p.id,
                "image": p.image,
                "annotation": p.annotation,
                "book": p.book,
                "saved": p.save_path().is_file(),
            })
        })
        .collect();
    Json(json!({ "pages": pages }))
}

async fn page_image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let image = state.page(&id)?.image.clone();
    let png = blocking(move || Ok(encode_png(&load_gray(&image)?))).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn page_auto(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let page = state.page(&id)?.clone();
    if let Some(hit) = state.auto_cache.lock().unwrap().get(&id) {
        return Ok(Json((**hit).clone()));
    }
    let worker = state.clone();
    let value = blocking(move || {
        let img = load_gray(&page.image)?;
        let name = page.image.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let auto = auto_annotate(&img, &name, &worker.detector, &worker.options);
        Ok(json!({
            "annotation": annotation_json(&auto.annotation)?,
            "grid": auto.grid,
            "rows": auto.grid.as_ref().map(|g| g.rows()),
            "cols": auto.grid.as_ref().map(|g| g.cols()),
            "outliers": auto.outliers,
            "warnings": auto.warnings,
        }))
    })
    .await?;
    let value = Arc::new(value);
    state.auto_cache.lock().unwrap().insert(id, value.clone());
    Ok(Json((*value).clone()))
}

async fn get_annotation(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let page = state.page(&id)?.clone();
    let current = blocking(move || Ok(page.current()?)).await?;
    match current {
        Some(a) => Ok(Json(annotation_json(&a)?)),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("page {id} has no annotation"))),
    }
}

async fn put_annotation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: String,
) -> Result<Json<Value>, ApiError> {
    let page = state.page(&id)?.clone();
    let save_path = page.save_path();
    let mut incoming = PageAnnotation::from_json(&body, &save_path)?;
    incoming.validate()?;
    let _guard = state.save_locks[&id].lock().await;
    let saved = blocking(move || {
        let stored = page.current()?.map_or(0, |a| a.revision);
        if incoming.revision != stored {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("revision {} is stale; stored revision is {stored}", incoming.revision),
            ));
        }
        incoming.revision = stored + 1;
        write_annotation(&incoming, &save_path)?;
        Ok(incoming)
    })
    .await?;
    log::info!("saved {id} at revision {}", saved.revision);
    Ok(Json(annotation_json(&saved)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_stems_get_book_prefixes() {
        let raw = vec![
            (PathBuf::from("a/page01.png"), PathBuf::from("a/page01+recto.txt"), Some("Math book".into())),
            (PathBuf::from("b/page01.png"), PathBuf::from("b/page01+recto.txt"), Some("Shaver".into())),
            (PathBuf::from("b/page02.png"), PathBuf::from("b/page02.json"), Some("Shaver".into())),
        ];
        let ids: Vec<String> = assign_ids(raw).into_iter().map(|p| p.id).collect();
        assert_eq!(ids, ["Math_book-page01", "Shaver-page01", "page02"]);
    }

    #[test]
    fn labels_save_to_a_json_sibling() {
        let p = PageSource {
            id: "x".into(),
            image: "d/page.png".into(),
            annotation: "d/page+recto.txt".into(),
            book: None,
        };
        assert_eq!(p.save_path(), PathBuf::from("d/page+recto.json"));
    }
}
