//! Session service: runs behavior bundles against the simulated task in real
//! time and exposes them to operator clients.
//!
//! REST endpoints under `/api/v1` manage artifacts and session lifecycles;
//! each session streams telemetry and accepts device input over a
//! WebSocket at `/api/v1/sessions/{id}/ws`. See [`protocol`] for the
//! message types.

pub mod api;
pub mod error;
pub mod protocol;
pub mod registry;
pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use error::ServiceError;
pub use registry::Registry;
pub use session::{SessionLimits, SessionRuntime};

/// Serves `registry` on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, registry: Arc<Registry>) -> std::io::Result<()> {
    axum::serve(listener, router(registry)).await
}

/// Binds `addr` and serves in the background, returning the bound address.
pub async fn spawn(addr: SocketAddr, registry: Arc<Registry>) -> std::io::Result<SocketAddr> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, registry).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(local)
}
