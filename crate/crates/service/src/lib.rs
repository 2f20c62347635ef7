//! Long-running gridspace service: ingestion sources feed an indexed model
//! store, every accepted frame triggers one evaluation pass over the rule
//! set, and firings are rendered, routed and logged. An HTTP API exposes
//! rules, the model, alerts, heatmaps and the FDIR simulator.
//!
//! The alert log lives in memory only. Rules survive restarts through the
//! rules directory, which the service also re-reads periodically.

pub mod alerts;
pub mod api;
pub mod config;
pub mod engine;
pub mod store;

use std::future::Future;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tracing::info;

pub use alerts::{AlertLog, AlertRecord};
pub use config::{config_path, ServiceConfig};
pub use engine::{evaluate_snapshot, FrameOutcome, Service, ServiceError, ServiceParts};
pub use store::{ModelStore, StoreConfig, StoreSnapshot};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server: {0}")]
    Server(std::io::Error),
}

/// Runs the service until `shutdown` resolves.
pub async fn serve_until(cfg: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    cfg.validate()?;
    let service = Arc::new(Service::from_config(&cfg)?);
    let sources = service.start_sources(&cfg.sources)?;
    let stop = Arc::new(AtomicBool::new(false));
    let watcher = service.spawn_rules_watcher(Duration::from_millis(cfg.rules_poll_ms.max(1)), stop.clone());

    let app = api::router(service, cfg.token.clone(), cfg.ui_dir.clone());
    let listener = tokio::net::TcpListener::bind(&cfg.listen).await.map_err(|source| ServeError::Bind {
        addr: cfg.listen.clone(),
        source,
    })?;
    info!(addr = %cfg.listen, sources = sources.len(), "listening");
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServeError::Server);

    stop.store(true, Ordering::Relaxed);
    for source in &sources {
        source.stop();
    }
    for source in sources {
        let stats = source.join();
        info!(?stats, "source stopped");
    }
    let _ = tokio::task::spawn_blocking(move || watcher.join()).await;
    result
}

/// Runs the service until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServeError> {
    serve_until(cfg, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
