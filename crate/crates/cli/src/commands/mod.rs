pub mod diarize;
pub mod features;
pub mod plot;
pub mod prepare;
pub mod train;
pub mod trials;
pub mod verify;

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Pretty JSON with a trailing newline; byte-stable for identical input.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{what} {} does not exist", path.display())))
    }
}
