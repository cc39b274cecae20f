use crate::config::Effective;
use crate::error::CliError;
use crate::output::open_input;
use std::io::BufRead;
use std::path::Path;
use teso_core::format::{read_features_text, FeatureHeader, FeatureReader, FormatError};
use teso_core::Frame;

pub const VERSION: &str = concat!("teso ", env!("CARGO_PKG_VERSION"));

/// Version, config digest and the flattened effective config.
pub fn meta(eff: &Effective) -> Vec<(String, String)> {
    let mut out = vec![
        ("version".to_string(), VERSION.to_string()),
        ("config_sha256".to_string(), eff.digest()),
    ];
    out.extend(eff.flatten());
    out
}

pub type FrameIter = Box<dyn Iterator<Item = Result<Frame, FormatError>>>;

/// Opens a feature file in either the binary or the text form.
pub fn open_features(path: &Path) -> Result<(FeatureHeader, FrameIter), CliError> {
    let mut reader = open_input(path)?;
    let is_text = reader
        .fill_buf()
        .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?
        .starts_with(b"TESOFEAT-TEXT");
    if is_text {
        let file = read_features_text(reader).map_err(|e| CliError::input(path, e))?;
        Ok((file.header, Box::new(file.frames.into_iter().map(Ok))))
    } else {
        let r = FeatureReader::new(reader).map_err(|e| CliError::input(path, e))?;
        Ok((*r.header(), Box::new(r)))
    }
}
