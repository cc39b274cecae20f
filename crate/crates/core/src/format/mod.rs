//! On-disk formats: feature files, trace CSVs, ground-truth sidecars and
//! tracker checkpoints. All binary layouts are little-endian.

mod checkpoint;
mod features;
mod trace;

pub use checkpoint::{
    read_checkpoint, read_checkpoint_text, write_checkpoint, write_checkpoint_text, Checkpoint,
};
pub use features::{
    read_features, read_features_text, write_features, write_features_text, FeatureFile,
    FeatureHeader, FeatureReader, FeatureWriter,
};
pub use trace::{
    read_ground_truth, read_trace, write_ground_truth, write_trace, Trace, TraceRow, TRACE_COLUMNS,
};

use std::io::{self, Read};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated input")]
    Truncated,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], FormatError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FormatError::Truncated,
        _ => FormatError::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn read_u16(r: &mut impl Read) -> Result<u16, FormatError> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32, FormatError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64, FormatError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f32(r: &mut impl Read) -> Result<f32, FormatError> {
    Ok(f32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64, FormatError> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

/// Parses whitespace-separated fields of one text line.
pub(crate) fn parse_fields<T: std::str::FromStr>(
    fields: &[&str],
    line: usize,
) -> Result<Vec<T>, FormatError> {
    fields
        .iter()
        .map(|f| {
            f.parse().map_err(|_| FormatError::Parse {
                line,
                msg: format!("cannot parse `{f}`"),
            })
        })
        .collect()
}
