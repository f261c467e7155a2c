use std::fs;
use std::path::{Path, PathBuf};

use ise_core::{Error, GroupSpec, PoolingWindow, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that replaces the directory relative paths inside
/// config files are resolved against.
pub const FIXTURE_DIR_VAR: &str = "ISE_FIXTURE_DIR";

/// Parses a JSON config file. Syntax and schema errors are configuration
/// errors, not file-format errors.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Inline JSON when the argument starts with `{`, `[` or `"`, otherwise a
/// file path.
pub fn inline_or_file<T: DeserializeOwned>(arg: &str) -> Result<T> {
    let t = arg.trim_start();
    if t.starts_with('{') || t.starts_with('[') || t.starts_with('"') {
        serde_json::from_str(t).map_err(|e| Error::Config(format!("{arg}: {e}")))
    } else {
        read_config(Path::new(arg))
    }
}

/// Resolves a path found inside a config file.
pub fn resolve(config_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(FIXTURE_DIR_VAR) {
        Some(root) => PathBuf::from(root).join(p),
        None => config_dir.join(p),
    }
}

pub fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// `sha256` over the compact JSON of the config and the seed.
pub fn config_hash<T: Serialize>(config: &T, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(seed.to_le_bytes());
    hex::encode(h.finalize())
}

/// `"full"`, a centered box, or explicit members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSpec {
    Named(String),
    Box {
        #[serde(rename = "box")]
        half_widths: (usize, usize),
    },
    Members {
        members: Vec<usize>,
    },
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::Named("full".into())
    }
}

impl WindowSpec {
    pub fn build(&self, group: &GroupSpec) -> Result<PoolingWindow> {
        match self {
            WindowSpec::Named(n) if n == "full" => Ok(PoolingWindow::full(group)),
            WindowSpec::Named(n) => Err(Error::Config(format!("unknown window {n:?}"))),
            WindowSpec::Box { half_widths: (rx, ry) } => PoolingWindow::centered_box(group, *rx, *ry),
            WindowSpec::Members { members } => PoolingWindow::new(group.clone(), members.clone()),
        }
    }
}
