//! Trace CSV and ground-truth sidecar.
//!
//! Trace layout:
//!
//! ```text
//! # teso-trace 1
//! # <key>=<value>                 (effective configuration, one per line)
//! frame,rx_deg,ry_deg,rz_deg,tx_mm,ty_mm,tz_mm,loss,nu1,…,nu5,m1,…,m5,applied
//! <one row per frame>
//! # summary <key>=<value>         (footer, one per line)
//! ```
//!
//! Rotations are intrinsic XYZ Euler angles of the tracked `R`; the
//! translation is the tracked direction scaled to the reference baseline.
//! `loss` is `NaN` on skip-frames and `applied` is 0 or 1.
//!
//! Sidecar layout:
//!
//! ```text
//! # teso-gt 1
//! # <key>=<value>                 (optional metadata)
//! frame,r11,r12,r13,r21,r22,r23,r31,r32,r33,tx_m,ty_m,tz_m
//! <one row per frame>
//! ```

use super::{parse_fields, FormatError};
use crate::geometry::{
    euler_angles, rotation_from_euler, EulerConvention, GeometryError, Pose, Rotation,
};
use crate::tracker::TrackRecord;
use nalgebra::{Matrix3, Vector3};
use std::io::{BufRead, Write};

const TRACE_MAGIC: &str = "# teso-trace 1";
const GT_MAGIC: &str = "# teso-gt 1";
const SUMMARY: &str = "# summary ";

pub const TRACE_COLUMNS: [&str; 18] = [
    "frame", "rx_deg", "ry_deg", "rz_deg", "tx_mm", "ty_mm", "tz_mm", "loss", "nu1", "nu2", "nu3",
    "nu4", "nu5", "m1", "m2", "m3", "m4", "m5",
];

fn trace_header() -> String {
    let mut cols = TRACE_COLUMNS.to_vec();
    cols.push("applied");
    cols.join(",")
}

const GT_HEADER: &str = "frame,r11,r12,r13,r21,r22,r23,r31,r32,r33,tx_m,ty_m,tz_m";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub frame: u32,
    pub rotation_deg: [f64; 3],
    pub translation_mm: [f64; 3],
    pub loss: f64,
    pub nu: [f64; 5],
    pub m: [f64; 5],
    pub applied: bool,
}

impl TraceRow {
    pub fn from_record(rec: &TrackRecord, baseline_m: f64) -> Result<Self, GeometryError> {
        let angles = euler_angles(&rec.pose.rotation, EulerConvention::IntrinsicXyz)?;
        let t = rec.pose.translation.normalize() * baseline_m * 1000.0;
        Ok(Self {
            frame: rec.frame,
            rotation_deg: angles.map(f64::to_degrees),
            translation_mm: [t.x, t.y, t.z],
            loss: rec.loss,
            nu: rec.nu,
            m: rec.m,
            applied: rec.applied,
        })
    }

    /// Tracked pose with the translation in meters.
    pub fn pose(&self) -> Pose {
        let r = rotation_from_euler(
            self.rotation_deg.map(f64::to_radians),
            EulerConvention::IntrinsicXyz,
        );
        Pose::new(r, Vector3::from(self.translation_mm) / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
    pub summary: Vec<(String, String)>,
}

impl Trace {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn summary_value(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn check_key_value(k: &str, v: &str) -> Result<(), FormatError> {
    if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
        return Err(FormatError::Invalid(format!(
            "unusable metadata entry `{k}`"
        )));
    }
    Ok(())
}

pub fn write_trace<W: Write>(mut w: W, trace: &Trace) -> Result<W, FormatError> {
    writeln!(w, "{TRACE_MAGIC}")?;
    for (k, v) in &trace.meta {
        check_key_value(k, v)?;
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{}", trace_header())?;
    for r in &trace.rows {
        let mut fields = vec![r.frame.to_string()];
        fields.extend(
            r.rotation_deg
                .iter()
                .chain(&r.translation_mm)
                .map(f64::to_string),
        );
        fields.push(r.loss.to_string());
        fields.extend(r.nu.iter().chain(&r.m).map(f64::to_string));
        fields.push(u8::from(r.applied).to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    for (k, v) in &trace.summary {
        check_key_value(k, v)?;
        writeln!(w, "{SUMMARY}{k}={v}")?;
    }
    w.flush()?;
    Ok(w)
}

fn split_key_value(s: &str, line: usize) -> Result<(String, String), FormatError> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| FormatError::Parse {
            line,
            msg: "expected key=value".into(),
        })
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Trace, FormatError> {
    let mut trace = Trace::default();
    let mut seen_header = false;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let number = n + 1;
        if n == 0 {
            if line != TRACE_MAGIC {
                return Err(FormatError::BadMagic {
                    expected: TRACE_MAGIC,
                });
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix(SUMMARY) {
            trace.summary.push(split_key_value(rest, number)?);
        } else if let Some(rest) = line.strip_prefix("# ") {
            if seen_header {
                return Err(FormatError::Parse {
                    line: number,
                    msg: "configuration comment after the header".into(),
                });
            }
            trace.meta.push(split_key_value(rest, number)?);
        } else if !seen_header {
            if line != trace_header() {
                return Err(FormatError::Parse {
                    line: number,
                    msg: "unexpected column header".into(),
                });
            }
            seen_header = true;
        } else {
            if !trace.summary.is_empty() {
                return Err(FormatError::Parse {
                    line: number,
                    msg: "data row after the summary".into(),
                });
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != TRACE_COLUMNS.len() + 1 {
                return Err(FormatError::Parse {
                    line: number,
                    msg: format!(
                        "expected {} columns, found {}",
                        TRACE_COLUMNS.len() + 1,
                        fields.len()
                    ),
                });
            }
            let frame = parse_fields::<u32>(&fields[..1], number)?[0];
            let v = parse_fields::<f64>(&fields[1..18], number)?;
            let applied = match fields[18] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(FormatError::Parse {
                        line: number,
                        msg: format!("applied must be 0 or 1, got `{other}`"),
                    })
                }
            };
            trace.rows.push(TraceRow {
                frame,
                rotation_deg: [v[0], v[1], v[2]],
                translation_mm: [v[3], v[4], v[5]],
                loss: v[6],
                nu: std::array::from_fn(|k| v[7 + k]),
                m: std::array::from_fn(|k| v[12 + k]),
                applied,
            });
        }
    }
    if !seen_header {
        return Err(FormatError::Truncated);
    }
    Ok(trace)
}

pub fn write_ground_truth<W: Write>(
    mut w: W,
    meta: &[(String, String)],
    poses: &[(u32, Pose)],
) -> Result<W, FormatError> {
    writeln!(w, "{GT_MAGIC}")?;
    for (k, v) in meta {
        check_key_value(k, v)?;
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{GT_HEADER}")?;
    for (frame, p) in poses {
        let r = p.rotation.matrix();
        let mut fields = vec![frame.to_string()];
        for i in 0..3 {
            for j in 0..3 {
                fields.push(r[(i, j)].to_string());
            }
        }
        fields.extend(p.translation.iter().map(f64::to_string));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(w)
}

pub fn read_ground_truth<R: BufRead>(r: R) -> Result<Vec<(u32, Pose)>, FormatError> {
    let mut lines = r.lines();
    if lines.next().transpose()?.as_deref() != Some(GT_MAGIC) {
        return Err(FormatError::BadMagic { expected: GT_MAGIC });
    }
    let mut number = 1;
    loop {
        number += 1;
        match lines.next().transpose()? {
            Some(l) if l == GT_HEADER => break,
            Some(l) if l.starts_with("# ") => continue,
            Some(_) => {
                return Err(FormatError::Parse {
                    line: number,
                    msg: "unexpected column header".into(),
                })
            }
            None => return Err(FormatError::Truncated),
        }
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        number += 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(FormatError::Parse {
                line: number,
                msg: format!("expected 13 columns, found {}", fields.len()),
            });
        }
        let frame = parse_fields::<u32>(&fields[..1], number)?[0];
        let v = parse_fields::<f64>(&fields[1..], number)?;
        let r = Rotation::from_matrix_unchecked(Matrix3::from_row_slice(&v[..9]));
        out.push((frame, Pose::new(r, Vector3::new(v[9], v[10], v[11]))));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(frame: u32, x: f64) -> TraceRow {
        TraceRow {
            frame,
            rotation_deg: [x, -x, 0.5 * x],
            translation_mm: [-1000.0 + x, x * 1e-3, 3.0],
            loss: if frame % 3 == 0 { f64::NAN } else { -x * 100.0 },
            nu: [0.1, 0.2, x.abs() / 10.0, 0.0, 1.0],
            m: [1.0, 2.5, 3.0, 4.0, 5.0 + x.abs()],
            applied: frame % 2 == 0,
        }
    }

    fn same(a: &TraceRow, b: &TraceRow) -> bool {
        let eq = |x: f64, y: f64| x == y || (x.is_nan() && y.is_nan());
        a.frame == b.frame
            && a.applied == b.applied
            && eq(a.loss, b.loss)
            && a.rotation_deg == b.rotation_deg
            && a.translation_mm == b.translation_mm
            && a.nu == b.nu
            && a.m == b.m
    }

    #[test]
    fn header_names_columns() {
        let text = String::from_utf8(write_trace(Vec::new(), &Trace::default()).unwrap()).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "frame,rx_deg,ry_deg,rz_deg,tx_mm,ty_mm,tz_mm,loss,nu1,nu2,nu3,nu4,nu5,m1,m2,m3,m4,m5,applied"
        );
    }

    #[test]
    fn rejects_malformed_traces() {
        assert!(read_trace("frame\n".as_bytes()).is_err());
        let good = write_trace(
            Vec::new(),
            &Trace {
                rows: vec![row(1, 0.5)],
                ..Default::default()
            },
        )
        .unwrap();
        let text = String::from_utf8(good).unwrap();
        assert!(text.ends_with(",0\n"));
        assert!(read_trace(text.replace(",0\n", ",7\n").as_bytes()).is_err());
        assert!(read_trace(text.replace("0.5,", "x,").as_bytes()).is_err());
        assert!(read_trace(TRACE_MAGIC.as_bytes()).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let poses: Vec<(u32, Pose)> = (0..5)
            .map(|i| {
                let r = Rotation::from_axis_angle(&Vector3::y_axis(), 0.1 * i as f64);
                (i, Pose::new(r, Vector3::new(-1.0, 0.01 * i as f64, 1e-17)))
            })
            .collect();
        let meta = vec![("scene.seed".to_string(), "3".to_string())];
        let bytes = write_ground_truth(Vec::new(), &meta, &poses).unwrap();
        assert_eq!(read_ground_truth(&bytes[..]).unwrap(), poses);
    }

    proptest! {
        #[test]
        fn trace_round_trip(xs in proptest::collection::vec(-10.0f64..10.0, 0..20), note in "[a-z ]{0,12}") {
            let trace = Trace {
                meta: vec![("sigma".into(), "0.001".into()), ("note".into(), note.clone())],
                rows: xs.iter().enumerate().map(|(i, &x)| row(i as u32, x)).collect(),
                summary: vec![("rx_mae_deg".into(), "0.01".into())],
            };
            let bytes = write_trace(Vec::new(), &trace).unwrap();
            let back = read_trace(&bytes[..]).unwrap();
            prop_assert_eq!(&back.meta, &trace.meta);
            prop_assert_eq!(&back.summary, &trace.summary);
            prop_assert_eq!(back.rows.len(), trace.rows.len());
            for (a, b) in back.rows.iter().zip(&trace.rows) {
                prop_assert!(same(a, b));
            }
        }

        #[test]
        fn row_pose_round_trip(a in -0.5f64..0.5, b in -0.5f64..0.5, c in -0.5f64..0.5) {
            let r = rotation_from_euler([a, b, c], EulerConvention::IntrinsicXyz);
            let rec = TrackRecord {
                frame: 0,
                pose: Pose::new(r, Vector3::new(-0.9, 0.1, 0.05).normalize()),
                loss: 0.0,
                delta: [0.0; 5],
                nu: [0.0; 5],
                m: [1.0; 5],
                applied: false,
                skipped: false,
            };
            let p = TraceRow::from_record(&rec, 2.0).unwrap().pose();
            prop_assert!(crate::geometry::angle_between(&p.rotation, &r) < 1e-12);
            prop_assert!((p.translation.norm() - 2.0).abs() < 1e-12);
        }
    }
}
