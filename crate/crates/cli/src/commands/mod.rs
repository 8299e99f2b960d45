pub mod build_vocab;
pub mod chat;
pub mod report;
pub mod score;
pub mod selfchat;
pub mod serve;
pub mod train;

use std::path::Path;

use anyhow::Context;

/// Writes `text` to `path`, naming the path on failure.
pub fn write_file(path: &Path, text: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn to_pretty_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}
