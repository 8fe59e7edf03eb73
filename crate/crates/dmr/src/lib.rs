//! File formats, checkpoints and the `dmr` command line for discourse-marker
//! latent-sense models built on `dmr-core`.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

pub mod checkpoint;
pub mod cli;
pub mod export;
pub mod history;
pub mod json;
pub mod report;
pub mod tsv;

pub use checkpoint::Checkpoint;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file for {}", path.display()))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
