//! Catalogue, clip audio and history over HTTP.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use echoloop_core::corpus::wav_bytes;
use serde::Deserialize;

use crate::server::Shared;

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/catalogue", get(catalogue))
        .route("/clips/{id}/audio", get(clip_audio))
        .route("/history", get(history))
        .with_state(shared)
}

async fn catalogue(State(s): State<Arc<Shared>>) -> Response {
    Json(&s.models.manifest).into_response()
}

async fn history(State(s): State<Arc<Shared>>) -> Response {
    Json(s.hub.history()).into_response()
}

#[derive(Deserialize)]
struct AudioQuery {
    duration: Option<f64>,
}

/// Inclusive byte range from a single-range `Range: bytes=` header.
pub fn parse_range(header: &str, len: usize) -> Option<(usize, usize)> {
    let spec = header.trim().strip_prefix("bytes=")?;
    if spec.contains(',') || len == 0 {
        return None;
    }
    let (a, b) = spec.split_once('-')?;
    let (start, end) = match (a.trim(), b.trim()) {
        ("", suffix) => {
            let n: usize = suffix.parse().ok()?;
            if n == 0 {
                return None;
            }
            (len.saturating_sub(n), len - 1)
        }
        (start, "") => (start.parse().ok()?, len - 1),
        (start, end) => (start.parse().ok()?, end.parse::<usize>().ok()?.min(len - 1)),
    };
    (start <= end && start < len).then_some((start, end))
}

async fn clip_audio(
    State(s): State<Arc<Shared>>,
    Path(id): Path<String>,
    Query(q): Query<AudioQuery>,
    headers: HeaderMap,
) -> Response {
    let Ok(clip) = s.models.clip(&id) else {
        return (StatusCode::NOT_FOUND, format!("unknown clip {id}")).into_response();
    };
    let duration = q.duration.unwrap_or(10.0);
    if !(duration.is_finite() && duration > 0.0) {
        return (StatusCode::BAD_REQUEST, "duration must be positive").into_response();
    }
    let Some(samples) = s.models.recordings.slice(&clip.recording_id, clip.offset_s, duration) else {
        return (StatusCode::NOT_FOUND, "recording audio unavailable").into_response();
    };
    let body = match wav_bytes(samples, s.models.recordings.sample_rate()) {
        Ok(b) => b,
        Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    let len = body.len();
    let wav = [(header::CONTENT_TYPE, "audio/wav".to_string()), (header::ACCEPT_RANGES, "bytes".to_string())];
    match headers.get(header::RANGE).and_then(|v| v.to_str().ok()) {
        None => (wav, body).into_response(),
        Some(r) => match parse_range(r, len) {
            Some((a, b)) => (
                StatusCode::PARTIAL_CONTENT,
                wav,
                [(header::CONTENT_RANGE, format!("bytes {a}-{b}/{len}"))],
                body[a..=b].to_vec(),
            )
                .into_response(),
            None => (
                StatusCode::RANGE_NOT_SATISFIABLE,
                [(header::CONTENT_RANGE, format!("bytes */{len}"))],
            )
                .into_response(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::parse_range;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("bytes=0-9", 100), Some((0, 9)));
        assert_eq!(parse_range("bytes=90-", 100), Some((90, 99)));
        assert_eq!(parse_range("bytes=-10", 100), Some((90, 99)));
        assert_eq!(parse_range("bytes=50-500", 100), Some((50, 99)));
        assert_eq!(parse_range("bytes=100-", 100), None);
        assert_eq!(parse_range("bytes=5-2", 100), None);
        assert_eq!(parse_range("bytes=0-1,4-5", 100), None);
        assert_eq!(parse_range("items=0-1", 100), None);
    }
}
