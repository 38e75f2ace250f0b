use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub const HASH_PREFIX: &str = "# config_sha256=";

/// Single owner of a result directory. Every file it writes starts with the
/// config hash (a `#` line for CSV, a field for JSON).
pub struct Artifacts {
    dir: PathBuf,
    sha256: String,
    pub files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path, sha256: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            sha256: sha256.to_string(),
            files: Vec::new(),
        })
    }

    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        writeln!(buf, "{HASH_PREFIX}{}", self.sha256)?;
        body(&mut buf)?;
        fs::write(self.dir.join(name), buf)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Tidy table via the csv crate.
    pub fn table<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        self.csv(name, |buf| buf.write_all(&bytes))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let body = serde_json::json!({ "config_sha256": self.sha256, "result": value });
        fs::write(self.dir.join(name), serde_json::to_string_pretty(&body)? + "\n")?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Reads a result CSV, returning its config hash, header and rows.
pub fn read_table(path: &Path) -> Result<(String, Vec<String>, Vec<Vec<String>>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(HASH_PREFIX))
        .ok_or_else(|| CliError::Usage(format!("{} has no config hash line", path.display())))?
        .to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((hash, header, rows))
}
