//! HTTP/JSON service and configuration for the wntags engine.
//!
//! [`Engine::open`] loads the taxonomy, attaches the similarity table if one
//! is configured (refusing a table built for another taxonomy) and opens the
//! corpus. [`http::router`] exposes it; [`serve`] binds and runs until
//! interrupted.

pub mod config;
pub mod engine;
pub mod error;
pub mod http;

use std::sync::Arc;

pub use config::{EngineConfig, CONFIG_ENV};
pub use engine::{Engine, SearchRequest};
pub use error::ServiceError;

/// Serves until Ctrl-C, then compacts the corpus file.
pub async fn serve(engine: Arc<Engine>) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(&engine.config().listen_address).await?;
    tracing::info!(address = %listener.local_addr()?, table = engine.has_table(), "listening");
    axum::serve(listener, http::router(engine.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    engine.compact()?;
    tracing::info!("corpus flushed, shutting down");
    Ok(())
}
