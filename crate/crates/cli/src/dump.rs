use crate::error::CliError;
use crate::output::{open_input, write_atomic};
use clap::Args;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use teso_core::format::{read_checkpoint, read_features, write_checkpoint_text, write_features_text};

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Binary feature file or checkpoint.
    pub input: PathBuf,
    /// Output path; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Converts a binary feature file or checkpoint to its text form.
pub fn run(args: &DumpArgs) -> Result<(), CliError> {
    let mut reader = open_input(&args.input)?;
    let head = reader.fill_buf()?.get(..8).map(<[u8]>::to_vec).unwrap_or_default();
    let fail = |e| CliError::input(&args.input, e);
    let text = match &head[..] {
        b"TESOFEAT" => write_features_text(Vec::new(), &read_features(reader).map_err(fail)?),
        b"TESOCKPT" => write_checkpoint_text(Vec::new(), &read_checkpoint(reader).map_err(fail)?),
        _ => {
            return Err(CliError::Invalid(format!(
                "{}: not a binary feature file or checkpoint",
                args.input.display()
            )))
        }
    }
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    match &args.out {
        Some(path) => {
            write_atomic(path, &text)?;
        }
        None => std::io::stdout().lock().write_all(&text)?,
    }
    Ok(())
}
