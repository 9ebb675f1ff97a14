//! Threshold tuning over HTTP: slide inventory, per-stain histograms of
//! instance means, live re-gating on threshold writes and overlay tiles.

mod api;
mod error;
mod render;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, WARNINGS_HEADER};
pub use error::ServiceError;
pub use render::{encode_png, palette_color, render_tile, Layer, NEGATIVE_RGB, PALETTE, POSITIVE_RGB};
pub use state::{
    AppState, ClassSummary, HistogramResponse, SlideEntry, SlideSummary, Snapshot, THRESHOLDS_FILE, TILE_SIZE,
};

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
