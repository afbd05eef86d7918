//! Rendering and HTTP service behind the `p2rgbd` binary.

pub mod render;
pub mod server;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Model(#[from] p2rgbd::Error),
    #[error("png encoding: {0}")]
    Encode(#[from] image::ImageError),
    #[error("internal: {0}")]
    Internal(String),
}

/// Reads `P2RGBD_THREADS` and sizes the global rayon pool. Unset leaves the
/// rayon default.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("P2RGBD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("P2RGBD_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}
