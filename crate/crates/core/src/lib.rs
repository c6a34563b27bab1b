//! Hierarchical time-series forecasting engine.
//!
//! Trains graph-neural backbones on the bottom level of a series hierarchy,
//! aggregates forecasts coherently through a summing matrix, and optimizes a
//! composite loss over bottom and aggregated levels end to end.

pub mod backbone;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod graph;
pub mod hierarchy;
pub mod temporal;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{apply, backward, grad_check, no_grad, Gradients, OpKind, Tensor};

use std::path::Path;

/// Write a file via a temp sibling and rename, so failures never leave a
/// partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp_path, bytes)?;
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}
