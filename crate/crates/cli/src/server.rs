//! HTTP render service over one immutable model.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use p2rgbd::model::{DepthRange, Model};
use p2rgbd::pose::{Pose, PoseBounds};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::render::{render, RenderRequest};
use crate::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub bounds: PoseBounds,
    pub depth_range: DepthRange,
    pub resolution: usize,
    pub slices: usize,
    pub input_mode: String,
    pub parameters: usize,
    pub parameter_hash: String,
}

impl Meta {
    pub fn of(model: &Model) -> Self {
        let c = model.config();
        Self {
            bounds: *model.bounds(),
            depth_range: *model.depth_range(),
            resolution: c.output_resolution,
            slices: c.slices,
            input_mode: c.input_mode.as_str().to_owned(),
            parameters: model.parameter_count(),
            parameter_hash: model.parameter_hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderMetrics {
    pub render_ms: f64,
}

/// Images are base64 PNGs at model resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub rgb: String,
    pub depth: String,
    pub confidence: Option<String>,
    pub clamped: bool,
    /// The pose actually rendered.
    pub pose: Pose,
    pub resolution: usize,
    pub metrics: RenderMetrics,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

async fn meta(State(model): State<Arc<Model>>) -> Json<Meta> {
    Json(Meta::of(&model))
}

async fn render_pose(State(model): State<Arc<Model>>, body: Bytes) -> Result<Json<RenderResponse>, ServiceError> {
    let req: RenderRequest = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("request body: {e}")))?;
    let resolution = model.config().output_resolution;
    let out = tokio::task::spawn_blocking(move || render(&model, &req))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(RenderResponse {
        rgb: STANDARD.encode(&out.rgb),
        depth: STANDARD.encode(&out.depth),
        confidence: out.confidence.map(|c| STANDARD.encode(c)),
        clamped: out.clamped,
        pose: out.pose,
        resolution,
        metrics: RenderMetrics { render_ms: out.render_ms },
    }))
}

/// Browsers load the navigator from another origin.
async fn allow_any_origin(mut res: Response) -> Response {
    res.headers_mut().insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    res
}

pub fn router(model: Arc<Model>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", post(render_pose))
        .layer(axum::middleware::map_response(allow_any_origin))
        .with_state(model)
}

pub async fn serve(listener: TcpListener, model: Arc<Model>) -> std::io::Result<()> {
    axum::serve(listener, router(model)).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_status_codes() {
        let status = |e: ServiceError| e.into_response().status();
        assert_eq!(status(ServiceError::BadRequest("x".into())), StatusCode::BAD_REQUEST);
        assert_eq!(status(p2rgbd::Error::NonFinite("forward").into()), StatusCode::INTERNAL_SERVER_ERROR);
        assert_eq!(status(ServiceError::Internal("join".into())), StatusCode::INTERNAL_SERVER_ERROR);
    }
}
