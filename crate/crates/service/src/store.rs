//! One JSON-lines log per session plus an idempotency-key sidecar.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use attribo_core::bo::{read_events, LoggedEvent};

use crate::error::ApiError;

pub(crate) struct SessionLog {
    file: File,
}

impl SessionLog {
    pub(crate) fn create(path: &Path) -> Result<Self, ApiError> {
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)?;
        Ok(SessionLog { file })
    }

    pub(crate) fn open(path: &Path) -> Result<Self, ApiError> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(SessionLog { file })
    }

    /// Appends and syncs each event before the next one is written.
    pub(crate) fn append(&mut self, events: &[LoggedEvent]) -> Result<(), ApiError> {
        for e in events {
            let mut line = serde_json::to_vec(e)?;
            line.push(b'\n');
            self.file.write_all(&line)?;
            self.file.sync_data()?;
        }
        Ok(())
    }
}

pub(crate) fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

fn key_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.key"))
}

pub(crate) fn write_key(dir: &Path, id: &str, key: &str) -> Result<(), ApiError> {
    let tmp = dir.join(format!(".{id}.key.tmp"));
    let mut f = File::create(&tmp)?;
    f.write_all(key.as_bytes())?;
    f.sync_all()?;
    fs::rename(tmp, key_path(dir, id))?;
    Ok(())
}

pub(crate) struct Stored {
    pub id: String,
    pub events: Vec<LoggedEvent>,
    pub key: Option<String>,
}

pub(crate) fn load_all(dir: &Path) -> Result<Vec<Stored>, ApiError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_none_or(|e| e != "jsonl") {
            continue;
        }
        let Some(id) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_string)
        else {
            continue;
        };
        let events = read_events(BufReader::new(File::open(&path)?))?;
        let key = match fs::read_to_string(key_path(dir, &id)) {
            Ok(k) => Some(k),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        out.push(Stored { id, events, key });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
