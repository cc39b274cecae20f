//! Atomic output files and input opening.

use crate::error::CliError;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Output file that only appears under its final name once complete: data
/// goes to a temporary file in the same directory, renamed on `commit`.
/// Everything written is hashed on the way through.
pub struct AtomicFile {
    path: PathBuf,
    tmp: PathBuf,
    inner: Option<BufWriter<File>>,
    hasher: Sha256,
}

impl AtomicFile {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let name = path
            .file_name()
            .ok_or_else(|| CliError::Invalid(format!("not a file path: {}", path.display())))?;
        let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
        let file = File::create(&tmp)
            .map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp,
            inner: Some(BufWriter::new(file)),
            hasher: Sha256::new(),
        })
    }

    /// Flushes, renames into place and returns the SHA-256 of the contents.
    pub fn commit(mut self) -> Result<String, CliError> {
        let inner = self.inner.take().expect("not yet committed");
        let fail = |e: std::io::Error| CliError::Runtime(format!("writing {}: {e}", self.path.display()));
        let file = inner.into_inner().map_err(|e| fail(e.into_error()))?;
        file.sync_all().map_err(fail)?;
        std::fs::rename(&self.tmp, &self.path).map_err(fail)?;
        Ok(hex::encode(std::mem::take(&mut self.hasher).finalize()))
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.as_mut().expect("not yet committed").write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.as_mut().expect("not yet committed").flush()
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.inner.take().is_some() {
            let _ = std::fs::remove_file(&self.tmp);
        }
    }
}

/// Writes `bytes` atomically and returns their SHA-256.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<String, CliError> {
    let mut f = AtomicFile::create(path)?;
    f.write_all(bytes)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    f.commit()
}

pub fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Invalid(format!("cannot open {}: {e}", path.display())))
}

/// `features.bin` → `features.gt.csv` and so on.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
