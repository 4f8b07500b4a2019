//! One module per subcommand. Each exposes `run(&Args) -> anyhow::Result`;
//! exit-code mapping lives in `main`.

pub mod bench;
pub mod ensemble;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod parse;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};

/// Writes `text` to `path`, creating parent directories as needed.
pub fn write_output(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Pretty JSON with a trailing newline, the shape all artifacts use.
pub fn to_json_line(value: &impl serde::Serialize) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}
