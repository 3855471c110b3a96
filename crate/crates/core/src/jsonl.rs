//! Line-delimited JSON persistence.
//!
//! Every artifact in a run directory is either a small JSON manifest written
//! atomically, or an append-only `.jsonl` file. A crash can leave at most one
//! partial trailing line in an append-only file; [`recover`] drops it.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parse records from a reader, reporting 1-based line numbers. Blank lines
/// are skipped.
pub fn parse_reader<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let f = File::open(path).map_err(io_err(path))?;
    parse_reader(f)
}

/// Serialize records as one JSON object per line.
pub fn to_string<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Write `contents` to `path` via a temporary sibling and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), JsonlError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    write_atomic(path, to_string(records).as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JsonlError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|e| JsonlError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Bring an append-only file back to its last complete line and return the
/// complete lines. A missing file is treated as empty.
pub fn recover(path: &Path) -> Result<Vec<String>, JsonlError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete != bytes.len() {
        log::warn!(
            "{}: dropping {} bytes of partial trailing record",
            path.display(),
            bytes.len() - complete
        );
        truncate(path, complete as u64)?;
    }
    let text = String::from_utf8_lossy(&bytes[..complete]);
    Ok(text.lines().map(str::to_owned).collect())
}

/// Keep only the first `lines` lines of a file.
pub fn truncate_lines(path: &Path, lines: usize) -> Result<(), JsonlError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut seen = 0;
    let mut cut = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if seen == lines {
            break;
        }
        if b == b'\n' {
            seen += 1;
            cut = i + 1;
        }
    }
    if seen < lines {
        cut = bytes.len();
    }
    truncate(path, cut as u64)
}

fn truncate(path: &Path, len: u64) -> Result<(), JsonlError> {
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    f.set_len(len).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

/// Append-only writer; each [`Appender::append`] call is flushed to disk.
pub struct Appender {
    path: String,
    out: BufWriter<File>,
}

impl Appender {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.display().to_string(),
            out: BufWriter::new(f),
        })
    }

    pub fn append<T: Serialize>(&mut self, records: &[T]) -> Result<(), JsonlError> {
        let s = to_string(records);
        let wrap = |source| JsonlError::Io {
            path: self.path.clone(),
            source,
        };
        self.out
            .write_all(s.as_bytes())
            .and_then(|_| self.out.flush())
            .and_then(|_| self.out.get_ref().sync_data())
            .map_err(wrap)
    }
}
