//! JSON-lines files behind the durable store.
//!
//! Each write is a single `write_all` of one line. A process killed mid-write
//! leaves at most one unterminated trailing line, which is cut off on the
//! next open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::StoreError;

pub(crate) struct LineFile {
    path: PathBuf,
    file: File,
    lines: usize,
}

impl LineFile {
    /// Opens (creating if needed) and parses every complete line.
    pub(crate) fn open<T: DeserializeOwned>(path: &Path) -> Result<(Self, Vec<T>), StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let committed = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let mut records = Vec::new();
        for (n, line) in bytes[..committed].split(|b| *b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let record = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if committed < bytes.len() {
            tracing::warn!(path = %path.display(), dropped = bytes.len() - committed, "truncating partial trailing line");
            file.set_len(committed as u64)?;
        }
        let lines = records.len();
        Ok((Self { path: path.to_path_buf(), file, lines }, records))
    }

    pub(crate) fn append<T: Serialize>(&mut self, record: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.lines += 1;
        Ok(())
    }

    pub(crate) fn lines(&self) -> usize {
        self.lines
    }

    /// Replaces the file with `records` via `<name>.tmp` plus rename.
    pub(crate) fn rewrite<'a, T: Serialize + 'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a T>,
    ) -> Result<(), StoreError> {
        let mut tmp_name = self.path.as_os_str().to_owned();
        tmp_name.push(".tmp");
        let tmp = PathBuf::from(tmp_name);
        let mut out = io::BufWriter::new(File::create(&tmp)?);
        let mut lines = 0;
        for record in records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
            lines += 1;
        }
        let out = out.into_inner().map_err(|e| e.into_error())?;
        out.sync_all()?;
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        self.lines = lines;
        Ok(())
    }
}
