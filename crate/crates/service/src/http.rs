// SPDX-License-Identifier: Apache-2.0

//! HTTP surface: `POST /webhook` and `GET /healthz`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use crate::service::{Service, WebhookDelivery};

pub const HEADER_EVENT: &str = "x-github-event";
pub const HEADER_DELIVERY: &str = "x-github-delivery";
pub const HEADER_SIGNATURE: &str = "x-hub-signature-256";

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/webhook", post(webhook))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(service)
}

fn header(h: &HeaderMap, name: &str) -> String {
    h.get(name)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string()
}

async fn webhook(State(service): State<Arc<Service>>, headers: HeaderMap, body: Bytes) -> impl IntoResponse {
    let delivery = WebhookDelivery {
        delivery_id: header(&headers, HEADER_DELIVERY),
        event: header(&headers, HEADER_EVENT),
        signature_header: header(&headers, HEADER_SIGNATURE),
        raw_body: body.to_vec(),
    };
    let budget = service.config().budget;
    match tokio::time::timeout(budget, service.handle_delivery(&delivery)).await {
        Ok(outcome) => {
            let status = StatusCode::from_u16(outcome.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(serde_json::to_value(&outcome).unwrap_or_default())).into_response()
        }
        Err(_) => {
            tracing::error!(delivery = %delivery.delivery_id, "processing exceeded the time budget");
            (
                StatusCode::SERVICE_UNAVAILABLE,
                Json(serde_json::json!({
                    "delivery_id": delivery.delivery_id,
                    "outcome": "timeout",
                })),
            )
                .into_response()
        }
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, service: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}
