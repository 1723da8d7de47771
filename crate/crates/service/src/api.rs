//! HTTP front end of a [`Node`].

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pkisn_core::log::{LogError, ProofResponse};
use pkisn_core::tcrl::TcrlError;

use crate::node::{Node, NodeError};
use crate::wire::*;

pub type SharedNode = Arc<Mutex<Node>>;

/// Entries served per `/v1/entries` call.
pub const MAX_ENTRIES_PER_CALL: u64 = 10_000;

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        let status = match &e {
            NodeError::Log(LogError::QueueFull) => StatusCode::SERVICE_UNAVAILABLE,
            NodeError::Log(LogError::NoSignedRoot | LogError::UnknownLeaf { .. }) => StatusCode::NOT_FOUND,
            NodeError::Log(_) | NodeError::Tcrl(TcrlError::Log(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            NodeError::Tcrl(TcrlError::BadVendorSignature) => StatusCode::UNPROCESSABLE_ENTITY,
            NodeError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn lock(node: &SharedNode) -> MutexGuard<'_, Node> {
    node.lock().unwrap_or_else(|p| p.into_inner())
}

async fn submit_chain(State(node): State<SharedNode>, Json(req): Json<SubmitChainRequest>) -> Result<Json<SubmitChainResponse>, ApiError> {
    let cc = lock(&node).submit_chain(&req.chain)?;
    Ok(Json(SubmitChainResponse { cc }))
}

async fn submit_revocation(
    State(node): State<SharedNode>,
    Json(req): Json<SubmitRevocationRequest>,
) -> Result<Json<SubmitRevocationResponse>, ApiError> {
    let commitment = lock(&node).submit_revocation(&req.chain, &req.revocation)?;
    Ok(Json(SubmitRevocationResponse { commitment }))
}

async fn proof(State(node): State<SharedNode>, Json(req): Json<ProofRequest>) -> Result<Json<ProofResponse>, ApiError> {
    Ok(Json(lock(&node).proof(&req.id_hashes)?))
}

async fn root(State(node): State<SharedNode>) -> Json<RootResponse> {
    Json(RootResponse {
        signed_root: lock(&node).latest_root().cloned(),
    })
}

async fn consistency(State(node): State<SharedNode>, Query(q): Query<ConsistencyQuery>) -> Result<Json<ConsistencyResponse>, ApiError> {
    let proof = lock(&node).consistency(q.old, q.new)?;
    Ok(Json(ConsistencyResponse { proof }))
}

async fn delta(State(node): State<SharedNode>, Query(q): Query<DeltaQuery>) -> Json<DeltaResponse> {
    Json(DeltaResponse {
        delta: lock(&node).delta(q.from),
    })
}

async fn tcrl(State(node): State<SharedNode>, Json(req): Json<TcrlRequest>) -> Result<Json<TcrlResponse>, ApiError> {
    let commitment = lock(&node).submit_tcrl(&req.tcrl)?;
    Ok(Json(TcrlResponse { commitment }))
}

async fn entries(State(node): State<SharedNode>, Query(q): Query<EntriesQuery>) -> Result<Json<EntriesResponse>, ApiError> {
    if q.to < q.from {
        return Err(ApiError(StatusCode::BAD_REQUEST, "to < from".into()));
    }
    let to = q.to.min(q.from.saturating_add(MAX_ENTRIES_PER_CALL));
    Ok(Json(EntriesResponse {
        entries: lock(&node).entries(q.from, to),
    }))
}

pub fn router(node: SharedNode) -> Router {
    Router::new()
        .route("/v1/submit-chain", post(submit_chain))
        .route("/v1/submit-revocation", post(submit_revocation))
        .route("/v1/proof", post(proof))
        .route("/v1/root", get(root))
        .route("/v1/consistency", get(consistency))
        .route("/v1/delta", get(delta))
        .route("/v1/tcrl", post(tcrl))
        .route("/v1/entries", get(entries))
        .with_state(node)
}

/// Runs due updates until the node is dropped by everyone else.
pub async fn update_loop(node: SharedNode, poll: Duration) {
    let mut interval = tokio::time::interval(poll);
    loop {
        interval.tick().await;
        let result = lock(&node).tick();
        match result {
            Ok(roots) => {
                for r in roots {
                    tracing::info!(timestamp = r.timestamp, size = r.tree_size, root = %r.root.to_hex(), "update");
                }
            }
            Err(e) => tracing::error!("update failed: {e}"),
        }
    }
}

/// Serves the API on `listener` and runs the update cycle until
/// `shutdown` resolves.
pub async fn serve(
    node: SharedNode,
    listener: tokio::net::TcpListener,
    poll: Duration,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = tokio::spawn(update_loop(node.clone(), poll));
    let result = axum::serve(listener, router(node)).with_graceful_shutdown(shutdown).await;
    ticker.abort();
    result
}

pub async fn bind(addr: &str) -> std::io::Result<(tokio::net::TcpListener, SocketAddr)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
