//! Tracker checkpoints: the 38 persistent scalars plus bookkeeping.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "TESOCKPT"
//! version      u16      1
//! frame_count  u64
//! config_hash  u64      first 8 bytes of the config digest
//! state        38 × f64 g, v, h, m (5 each), then U and V row-major
//! ```
//!
//! Text layout:
//!
//! ```text
//! TESOCKPT-TEXT 1
//! frame_count <n>
//! config_hash <16 hex digits>
//! state <38 numbers>
//! ```

use super::{parse_fields, read_f64, read_u16, read_u64, FormatError};
use crate::filter::PERSISTENT_SCALARS;
use std::io::{BufRead, Read, Write};

const MAGIC: &[u8; 8] = b"TESOCKPT";
const TEXT_MAGIC: &str = "TESOCKPT-TEXT";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub frame_count: u64,
    pub config_hash: u64,
    pub state: [f64; PERSISTENT_SCALARS],
}

pub fn write_checkpoint<W: Write>(mut w: W, c: &Checkpoint) -> Result<W, FormatError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&c.frame_count.to_le_bytes())?;
    w.write_all(&c.config_hash.to_le_bytes())?;
    for x in c.state {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(w)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, FormatError> {
    let magic: [u8; 8] = super::read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "TESOCKPT",
        });
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let frame_count = read_u64(&mut r)?;
    let config_hash = read_u64(&mut r)?;
    let mut state = [0.0; PERSISTENT_SCALARS];
    for x in &mut state {
        *x = read_f64(&mut r)?;
    }
    Ok(Checkpoint {
        frame_count,
        config_hash,
        state,
    })
}

pub fn write_checkpoint_text<W: Write>(mut w: W, c: &Checkpoint) -> Result<W, FormatError> {
    writeln!(w, "{TEXT_MAGIC} {VERSION}")?;
    writeln!(w, "frame_count {}", c.frame_count)?;
    writeln!(w, "config_hash {:016x}", c.config_hash)?;
    let state: Vec<String> = c.state.iter().map(f64::to_string).collect();
    writeln!(w, "state {}", state.join(" "))?;
    w.flush()?;
    Ok(w)
}

pub fn read_checkpoint_text<R: BufRead>(r: R) -> Result<Checkpoint, FormatError> {
    let lines: Vec<String> = r.lines().collect::<Result<_, _>>()?;
    if lines.len() < 4 {
        return Err(FormatError::Truncated);
    }
    let field = |i: usize, tag: &str| -> Result<Vec<&str>, FormatError> {
        let mut it = lines[i].split_whitespace();
        if it.next() != Some(tag) {
            return Err(FormatError::Parse {
                line: i + 1,
                msg: format!("expected `{tag}`"),
            });
        }
        Ok(it.collect())
    };
    if field(0, TEXT_MAGIC).map_err(|_| FormatError::BadMagic {
        expected: TEXT_MAGIC,
    })? != [VERSION.to_string()]
    {
        return Err(FormatError::UnsupportedVersion(0));
    }
    let frame_count = parse_fields::<u64>(&field(1, "frame_count")?, 2)?;
    let hash = field(2, "config_hash")?;
    let config_hash = match hash.as_slice() {
        [h] => u64::from_str_radix(h, 16).map_err(|_| FormatError::Parse {
            line: 3,
            msg: "bad hash".into(),
        })?,
        _ => {
            return Err(FormatError::Parse {
                line: 3,
                msg: "bad hash".into(),
            })
        }
    };
    let values = parse_fields::<f64>(&field(3, "state")?, 4)?;
    let state: [f64; PERSISTENT_SCALARS] =
        values
            .try_into()
            .map_err(|v: Vec<f64>| FormatError::Parse {
                line: 4,
                msg: format!(
                    "expected {PERSISTENT_SCALARS} state values, found {}",
                    v.len()
                ),
            })?;
    match frame_count.as_slice() {
        [n] => Ok(Checkpoint {
            frame_count: *n,
            config_hash,
            state,
        }),
        _ => Err(FormatError::Parse {
            line: 2,
            msg: "expected one frame count".into(),
        }),
    }
}
