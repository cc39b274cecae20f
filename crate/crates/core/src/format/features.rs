//! Feature files: keypoints, descriptors and optional ground truth for a
//! sequence of stereo frames.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! header   magic      8 bytes  "TESOFEAT"
//!          version    u16      1
//!          dim        u16      descriptor dimension
//!          frames     u32      number of frame records
//!          k_left     5 × f64  fx, fy, cx, cy, skew
//!          k_right    5 × f64
//! frame    index      u32
//!          n_left     u32
//!          n_right    u32
//!          flags      u32      bit 0: ground-truth pose present
//!          n_pairs    u32
//!          left       n_left × (f32 u, f32 v)
//!          right      n_right × (f32 u, f32 v)
//!          left_desc  n_left × dim × f32, row-major
//!          right_desc n_right × dim × f32
//!          pose       9 × f64 R row-major, 3 × f64 t   (if flag bit 0)
//!          pairs      n_pairs × (u32 left, u32 right)
//! ```
//!
//! The text form carries the same content one record per line:
//!
//! ```text
//! TESOFEAT-TEXT 1
//! dim <dim>
//! frames <count>
//! k_left <fx> <fy> <cx> <cy> <skew>
//! k_right <fx> <fy> <cx> <cy> <skew>
//! frame <index> <n_left> <n_right> <has_pose 0|1> <n_pairs>
//! l <u> <v> <d_1> … <d_dim>          (n_left lines)
//! r <u> <v> <d_1> … <d_dim>          (n_right lines)
//! pose <r11> … <r33> <t1> <t2> <t3>  (if has_pose)
//! p <left> <right>                   (n_pairs lines)
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! value, so both forms round-trip exactly.

use super::{parse_fields, read_f32, read_f64, read_u16, read_u32, FormatError};
use crate::frame::{Descriptors, Frame, Keypoint};
use crate::geometry::{CameraIntrinsics, Pose, Rotation};
use nalgebra::{Matrix3, Vector3};
use std::io::{BufRead, Read, Write};

const MAGIC: &[u8; 8] = b"TESOFEAT";
const TEXT_MAGIC: &str = "TESOFEAT-TEXT";
const VERSION: u16 = 1;
const HAS_POSE: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureHeader {
    pub descriptor_dim: usize,
    pub frame_count: u32,
    pub k_left: CameraIntrinsics,
    pub k_right: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub header: FeatureHeader,
    pub frames: Vec<Frame>,
}

fn check_frame(frame: &Frame, dim: usize) -> Result<(), FormatError> {
    let bad = |m: String| Err(FormatError::Invalid(format!("frame {}: {m}", frame.index)));
    if frame.left_desc.dim() != dim || frame.right_desc.dim() != dim {
        return bad(format!("descriptor dimension differs from {dim}"));
    }
    if frame.left.len() != frame.left_desc.len() || frame.right.len() != frame.right_desc.len() {
        return bad("keypoint and descriptor counts differ".into());
    }
    if frame
        .pairing
        .iter()
        .any(|&(i, j)| i as usize >= frame.left.len() || j as usize >= frame.right.len())
    {
        return bad("pairing index out of range".into());
    }
    Ok(())
}

fn pose_to_array(p: &Pose) -> [f64; 12] {
    let r = p.rotation.matrix();
    let mut a = [0.0; 12];
    for i in 0..3 {
        for j in 0..3 {
            a[3 * i + j] = r[(i, j)];
        }
        a[9 + i] = p.translation[i];
    }
    a
}

fn pose_from_array(a: &[f64]) -> Pose {
    let r = Matrix3::from_row_slice(&a[..9]);
    Pose::new(
        Rotation::from_matrix_unchecked(r),
        Vector3::new(a[9], a[10], a[11]),
    )
}

/// Streams frames into a binary feature file.
pub struct FeatureWriter<W: Write> {
    inner: W,
    header: FeatureHeader,
    written: u32,
}

impl<W: Write> FeatureWriter<W> {
    pub fn new(mut inner: W, header: FeatureHeader) -> Result<Self, FormatError> {
        let dim = u16::try_from(header.descriptor_dim)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| {
                FormatError::Invalid(format!(
                    "descriptor dimension {} out of range",
                    header.descriptor_dim
                ))
            })?;
        inner.write_all(MAGIC)?;
        inner.write_all(&VERSION.to_le_bytes())?;
        inner.write_all(&dim.to_le_bytes())?;
        inner.write_all(&header.frame_count.to_le_bytes())?;
        for k in [&header.k_left, &header.k_right] {
            for x in k.as_array() {
                inner.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(Self {
            inner,
            header,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<(), FormatError> {
        if self.written == self.header.frame_count {
            return Err(FormatError::Invalid(
                "more frames than declared in the header".into(),
            ));
        }
        check_frame(frame, self.header.descriptor_dim)?;
        let w = &mut self.inner;
        let flags = if frame.ground_truth.is_some() {
            HAS_POSE
        } else {
            0
        };
        for x in [
            frame.index,
            frame.left.len() as u32,
            frame.right.len() as u32,
            flags,
            frame.pairing.len() as u32,
        ] {
            w.write_all(&x.to_le_bytes())?;
        }
        for k in frame.left.iter().chain(&frame.right) {
            w.write_all(&(k.u as f32).to_le_bytes())?;
            w.write_all(&(k.v as f32).to_le_bytes())?;
        }
        for x in frame
            .left_desc
            .as_slice()
            .iter()
            .chain(frame.right_desc.as_slice())
        {
            w.write_all(&x.to_le_bytes())?;
        }
        if let Some(p) = &frame.ground_truth {
            for x in pose_to_array(p) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for &(i, j) in &frame.pairing {
            w.write_all(&i.to_le_bytes())?;
            w.write_all(&j.to_le_bytes())?;
        }
        self.written += 1;
        Ok(())
    }

    /// Checks that every declared frame was written and returns the sink.
    pub fn finish(mut self) -> Result<W, FormatError> {
        if self.written != self.header.frame_count {
            return Err(FormatError::Invalid(format!(
                "header declares {} frames, {} written",
                self.header.frame_count, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Iterates over the frames of a binary feature file.
pub struct FeatureReader<R: Read> {
    inner: R,
    header: FeatureHeader,
    read: u32,
}

impl<R: Read> FeatureReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FormatError> {
        let magic: [u8; 8] = super::read_array(&mut inner)?;
        if &magic != MAGIC {
            return Err(FormatError::BadMagic {
                expected: "TESOFEAT",
            });
        }
        let version = read_u16(&mut inner)?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dim = read_u16(&mut inner)? as usize;
        if dim == 0 {
            return Err(FormatError::Invalid("descriptor dimension is zero".into()));
        }
        let frame_count = read_u32(&mut inner)?;
        let mut ks = [CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0); 2];
        for k in &mut ks {
            let mut a = [0.0; 5];
            for x in &mut a {
                *x = read_f64(&mut inner)?;
            }
            *k = CameraIntrinsics::from_array(a);
        }
        Ok(Self {
            inner,
            header: FeatureHeader {
                descriptor_dim: dim,
                frame_count,
                k_left: ks[0],
                k_right: ks[1],
            },
            read: 0,
        })
    }

    pub fn header(&self) -> &FeatureHeader {
        &self.header
    }

    fn read_frame(&mut self) -> Result<Frame, FormatError> {
        let r = &mut self.inner;
        let dim = self.header.descriptor_dim;
        let index = read_u32(r)?;
        let n_left = read_u32(r)? as usize;
        let n_right = read_u32(r)? as usize;
        let flags = read_u32(r)?;
        let n_pairs = read_u32(r)? as usize;
        if flags & !HAS_POSE != 0 {
            return Err(FormatError::Invalid(format!(
                "frame {index}: unknown flags {flags:#x}"
            )));
        }
        let mut keypoints = |n: usize| -> Result<Vec<Keypoint>, FormatError> {
            (0..n)
                .map(|_| Ok(Keypoint::new(read_f32(r)? as f64, read_f32(r)? as f64)))
                .collect()
        };
        let left = keypoints(n_left)?;
        let right = keypoints(n_right)?;
        let mut descriptors = |n: usize| -> Result<Descriptors, FormatError> {
            let data = (0..n * dim)
                .map(|_| read_f32(r))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Descriptors::new(dim, data))
        };
        let left_desc = descriptors(n_left)?;
        let right_desc = descriptors(n_right)?;
        let ground_truth = if flags & HAS_POSE != 0 {
            let a = (0..12)
                .map(|_| read_f64(r))
                .collect::<Result<Vec<_>, _>>()?;
            Some(pose_from_array(&a))
        } else {
            None
        };
        let pairing = (0..n_pairs)
            .map(|_| Ok((read_u32(r)?, read_u32(r)?)))
            .collect::<Result<Vec<_>, FormatError>>()?;
        let frame = Frame {
            index,
            left,
            right,
            left_desc,
            right_desc,
            ground_truth,
            pairing,
        };
        check_frame(&frame, dim)?;
        Ok(frame)
    }
}

impl<R: Read> Iterator for FeatureReader<R> {
    type Item = Result<Frame, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.header.frame_count {
            return None;
        }
        self.read += 1;
        let out = self.read_frame();
        if out.is_err() {
            // stop after the first error
            self.read = self.header.frame_count;
        }
        Some(out)
    }
}

pub fn write_features<W: Write>(w: W, file: &FeatureFile) -> Result<W, FormatError> {
    if file.frames.len() != file.header.frame_count as usize {
        return Err(FormatError::Invalid(
            "frame count differs from header".into(),
        ));
    }
    let mut writer = FeatureWriter::new(w, file.header)?;
    for f in &file.frames {
        writer.write_frame(f)?;
    }
    writer.finish()
}

pub fn read_features<R: Read>(r: R) -> Result<FeatureFile, FormatError> {
    let reader = FeatureReader::new(r)?;
    let header = *reader.header();
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureFile { header, frames })
}

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_features_text<W: Write>(mut w: W, file: &FeatureFile) -> Result<W, FormatError> {
    let h = &file.header;
    if file.frames.len() != h.frame_count as usize {
        return Err(FormatError::Invalid(
            "frame count differs from header".into(),
        ));
    }
    writeln!(w, "{TEXT_MAGIC} {VERSION}")?;
    writeln!(w, "dim {}", h.descriptor_dim)?;
    writeln!(w, "frames {}", h.frame_count)?;
    writeln!(w, "k_left {}", join(h.k_left.as_array()))?;
    writeln!(w, "k_right {}", join(h.k_right.as_array()))?;
    for f in &file.frames {
        check_frame(f, h.descriptor_dim)?;
        writeln!(
            w,
            "frame {} {} {} {} {}",
            f.index,
            f.left.len(),
            f.right.len(),
            u8::from(f.ground_truth.is_some()),
            f.pairing.len()
        )?;
        for (tag, kps, desc) in [("l", &f.left, &f.left_desc), ("r", &f.right, &f.right_desc)] {
            for (i, k) in kps.iter().enumerate() {
                writeln!(
                    w,
                    "{tag} {} {} {}",
                    k.u as f32,
                    k.v as f32,
                    join(desc.row(i))
                )?;
            }
        }
        if let Some(p) = &f.ground_truth {
            writeln!(w, "pose {}", join(pose_to_array(p)))?;
        }
        for &(i, j) in &f.pairing {
            writeln!(w, "p {i} {j}")?;
        }
    }
    w.flush()?;
    Ok(w)
}

struct Lines<R: BufRead> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    /// Next line split into its tag and the remaining fields.
    fn expect(&mut self, tag: &str) -> Result<Vec<String>, FormatError> {
        self.number += 1;
        let line = self.inner.next().ok_or(FormatError::Truncated)??;
        let mut it = line.split_whitespace();
        match it.next() {
            Some(t) if t == tag => Ok(it.map(str::to_string).collect()),
            other => Err(FormatError::Parse {
                line: self.number,
                msg: format!("expected `{tag}`, found `{}`", other.unwrap_or("")),
            }),
        }
    }

    fn values<T: std::str::FromStr>(
        &mut self,
        tag: &str,
        count: usize,
    ) -> Result<Vec<T>, FormatError> {
        let fields = self.expect(tag)?;
        if fields.len() != count {
            return Err(FormatError::Parse {
                line: self.number,
                msg: format!("`{tag}` needs {count} fields, found {}", fields.len()),
            });
        }
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        parse_fields(&refs, self.number)
    }
}

pub fn read_features_text<R: BufRead>(r: R) -> Result<FeatureFile, FormatError> {
    let mut lines = Lines {
        inner: r.lines(),
        number: 0,
    };
    let version: Vec<u16> = lines
        .values(TEXT_MAGIC, 1)
        .map_err(|_| FormatError::BadMagic {
            expected: TEXT_MAGIC,
        })?;
    if version[0] != VERSION {
        return Err(FormatError::UnsupportedVersion(version[0]));
    }
    let dim = lines.values::<usize>("dim", 1)?[0];
    if dim == 0 || dim > u16::MAX as usize {
        return Err(FormatError::Invalid(format!(
            "descriptor dimension {dim} out of range"
        )));
    }
    let frame_count = lines.values::<u32>("frames", 1)?[0];
    let intr = |v: Vec<f64>| CameraIntrinsics::from_array([v[0], v[1], v[2], v[3], v[4]]);
    let k_left = intr(lines.values("k_left", 5)?);
    let k_right = intr(lines.values("k_right", 5)?);

    let mut frames = Vec::with_capacity(frame_count as usize);
    for _ in 0..frame_count {
        let h: Vec<u32> = lines.values("frame", 5)?;
        let mut side = |tag: &str, n: u32| -> Result<(Vec<Keypoint>, Descriptors), FormatError> {
            let mut kps = Vec::with_capacity(n as usize);
            let mut desc = Descriptors::empty(dim);
            for _ in 0..n {
                let v: Vec<f32> = lines.values(tag, dim + 2)?;
                kps.push(Keypoint::new(v[0] as f64, v[1] as f64));
                desc.push(&v[2..]);
            }
            Ok((kps, desc))
        };
        let (left, left_desc) = side("l", h[1])?;
        let (right, right_desc) = side("r", h[2])?;
        let ground_truth = match h[3] {
            0 => None,
            1 => Some(pose_from_array(&lines.values::<f64>("pose", 12)?)),
            other => {
                return Err(FormatError::Invalid(format!(
                    "pose flag must be 0 or 1, got {other}"
                )))
            }
        };
        let pairing = (0..h[4])
            .map(|_| lines.values::<u32>("p", 2).map(|v| (v[0], v[1])))
            .collect::<Result<Vec<_>, _>>()?;
        let frame = Frame {
            index: h[0],
            left,
            right,
            left_desc,
            right_desc,
            ground_truth,
            pairing,
        };
        check_frame(&frame, dim)?;
        frames.push(frame);
    }
    Ok(FeatureFile {
        header: FeatureHeader {
            descriptor_dim: dim,
            frame_count,
            k_left,
            k_right,
        },
        frames,
    })
}
