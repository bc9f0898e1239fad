use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{CliError, Result};

/// Environment variable naming the root under which run directories go.
pub const RUNS_DIR_ENV: &str = "LFD_RUNS_DIR";

/// A self-describing output directory: `config.toml` holds the effective
/// configuration and `run.json` the command that produced it.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Serialize)]
struct RunInfo<'a> {
    id: &'a str,
    command: &'a str,
    config_sha256: String,
    started_unix: u64,
}

/// Flag, then environment variable, then config file, then `./runs`.
pub fn runs_root(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from))
        .or_else(|| config.paths.runs_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunDir {
    /// The id hashes the command, the configuration and the start time, so
    /// reruns of an identical configuration land in fresh directories.
    pub fn create(root: &Path, command: &str, config: &RunConfig) -> Result<RunDir> {
        let text = config.to_toml();
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let digest = sha256_hex(format!("{command}\n{}\n{text}", now.as_nanos()).as_bytes());
        let id = digest[..12].to_string();
        let path = root.join(format!("{command}-{}-{id}", config.game.id));
        std::fs::create_dir_all(&path).map_err(crate::io_err(&path))?;
        let dir = RunDir { id, path };
        dir.write("config.toml", text.as_bytes())?;
        let info = RunInfo {
            id: &dir.id,
            command,
            config_sha256: sha256_hex(text.as_bytes()),
            started_unix: now.as_secs(),
        };
        dir.write_json("run.json", &info)?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.file(name);
        std::fs::write(&p, bytes).map_err(crate::io_err(&p))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}
