use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::{RunError, RunManifest, RunRecord};
use crate::model::SnippetKey;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    _file: File,
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out_dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file, path }),
            Err(TryLockError::WouldBlock) => Err(RunError::Locked(out_dir.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(RunError::Io { path, source: e }),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parsed contents of a run log.
#[derive(Debug, Default)]
pub struct LogContents {
    pub records: Vec<RunRecord>,
    /// Byte length of the well-formed prefix. A torn final line (no newline,
    /// invalid JSON) is left out.
    pub valid_len: u64,
}

impl LogContents {
    /// Last record per snippet.
    pub fn latest(&self) -> BTreeMap<SnippetKey, &RunRecord> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            out.insert(r.snippet_key.clone(), r);
        }
        out
    }
}

pub fn read_log(path: &Path) -> Result<LogContents, RunError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(LogContents::default()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut contents = LogContents::default();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let (line, next, terminated) = match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
            None => (&bytes[offset..], bytes.len(), false),
        };
        if line.iter().all(u8::is_ascii_whitespace) {
            if terminated {
                contents.valid_len = next as u64;
            }
            offset = next;
            continue;
        }
        match serde_json::from_slice::<RunRecord>(line) {
            Ok(record) if terminated => {
                contents.records.push(record);
                contents.valid_len = next as u64;
            }
            // Complete JSON but the newline never made it; drop and rewrite.
            Ok(_) => {}
            Err(_) if !terminated => {}
            Err(e) => {
                return Err(RunError::CorruptLog {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: e.to_string(),
                })
            }
        }
        offset = next;
    }
    Ok(contents)
}

/// Appends records one line at a time, flushing after each.
pub struct LogWriter {
    file: File,
    path: PathBuf,
}

impl LogWriter {
    /// Opens `path` for appending after cutting it to `valid_len`.
    pub fn open(path: &Path, valid_len: u64) -> Result<Self, RunError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() != valid_len {
            file.set_len(valid_len).map_err(io_err(path))?;
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<(), RunError> {
        let mut line = serde_json::to_string(record).map_err(RunError::Json)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }

    pub fn sync(&self) -> Result<(), RunError> {
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

pub fn read_manifest(path: &Path) -> Result<Option<RunManifest>, RunError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(RunError::Json),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    let tmp = path.with_extension("json.tmp");
    let mut text = serde_json::to_string_pretty(manifest).map_err(RunError::Json)?;
    text.push('\n');
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
