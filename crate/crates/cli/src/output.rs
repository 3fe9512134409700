//! Run directories and atomic file writes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::CliError;

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// `<root>/<subcommand>/<id>`, with `id` the run id or the current Unix
    /// time in milliseconds. An existing directory is never reused.
    pub fn create(root: &Path, subcommand: &str, run_id: Option<&str>) -> Result<RunDir, CliError> {
        let parent = root.join(subcommand);
        fs::create_dir_all(&parent)?;
        let id = match run_id {
            Some(id) => {
                if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                    return Err(CliError::Config(format!(
                        "run id `{id}` is not a plain directory name"
                    )));
                }
                id.to_string()
            }
            None => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0)
                .to_string(),
        };
        let mut path = parent.join(&id);
        let mut n = 1;
        while path.exists() {
            if run_id.is_some() {
                return Err(CliError::Config(format!(
                    "run directory {} already exists",
                    path.display()
                )));
            }
            path = parent.join(format!("{id}-{n}"));
            n += 1;
        }
        fs::create_dir(&path)?;
        Ok(RunDir { path })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.path.join(name), bytes)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV with a header row; floats are written in shortest round-trip form.
    pub fn write_csv(
        &self,
        name: &str,
        header: &[String],
        rows: &[Vec<f64>],
    ) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        self.write(name, &bytes)
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `1e-2` → `0.01`, safe inside file names.
pub fn tag(x: f64) -> String {
    x.to_string().replace('-', "m")
}
