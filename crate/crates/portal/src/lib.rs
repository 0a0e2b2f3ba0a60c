//! Missing-and-found matching service.
//!
//! Operators enroll a photo with a name, a status (`missing` or `found`) and
//! a contact, then search with another photo and get enrolled persons ranked
//! by the layered-HOG recognizer. The service never decides on its own that a
//! match is correct; a human confirms.
//!
//! Enrollments are written to an append-only log and a content-addressed
//! photo directory before they are acknowledged, and are replayed at startup.

pub mod api;
pub mod imaging;
pub mod service;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::router;
pub use service::{Candidate, Health, NewPerson, Portal, PortalError, QueryResponse};
pub use store::{PersonRecord, Status};

pub const MODEL_ENV: &str = "HOGFACE_MODEL";
pub const DATA_ENV: &str = "HOGFACE_PORTAL_DATA";

/// Serves `portal` on an already-bound listener until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    portal: Arc<Portal>,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(portal, static_dir))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr`, returning the listener and the actual address (useful with
/// port 0).
pub async fn bind(addr: SocketAddr) -> std::io::Result<(tokio::net::TcpListener, SocketAddr)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
