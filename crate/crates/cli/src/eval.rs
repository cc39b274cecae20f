use crate::common::VERSION;
use crate::error::CliError;
use crate::output::{open_input, write_atomic};
use clap::Args;
use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use teso_core::format::{read_ground_truth, read_trace, Trace};
use teso_core::geometry::rotation_error_axes;
use teso_core::metrics::{latency_xcorr_axes, mean_rotation_error, sequence_precision, MetricsError};
use teso_core::{EulerConvention, Pose, Rotation};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trace CSV written by `track`.
    #[arg(long, short)]
    pub trace: PathBuf,
    /// Ground-truth sidecar written by `simulate`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output summary CSV; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Frames excluded from the statistics [default: the trace's burn-in].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Largest lag searched by the latency estimate, frames.
    #[arg(long, default_value_t = 50)]
    pub max_lag: usize,
    /// Fail unless every per-axis rotation MAE is at most this, degrees.
    #[arg(long)]
    pub max_rotation_mae: Option<f64>,
    /// Fail unless every per-axis translation MAE is at most this, mm.
    #[arg(long)]
    pub max_translation_mae: Option<f64>,
    /// Fail unless the latency on every axis is at most this many frames.
    #[arg(long)]
    pub max_latency: Option<u64>,
}

fn parse_numbers<const N: usize>(trace: &Trace, key: &str) -> Result<Option<[f64; N]>, CliError> {
    let Some(v) = trace.meta_value(key) else {
        return Ok(None);
    };
    let parsed: Result<Vec<f64>, _> = v.split_whitespace().map(str::parse).collect();
    parsed
        .ok()
        .and_then(|p| p.try_into().ok())
        .map(Some)
        .ok_or_else(|| CliError::Invalid(format!("trace metadata `{key}` is malformed")))
}

fn reference_of(trace: &Trace) -> Result<Option<Pose>, CliError> {
    match (
        parse_numbers::<9>(trace, "reference.rotation")?,
        parse_numbers::<3>(trace, "reference.translation_m")?,
    ) {
        (Some(r), Some(t)) => Ok(Some(Pose::new(
            Rotation::from_matrix(&Matrix3::from_row_slice(&r)),
            Vector3::from(t),
        ))),
        _ => Ok(None),
    }
}

struct Summary {
    rows: Vec<(String, String, f64)>,
}

impl Summary {
    fn axes(&mut self, metric: &str, names: [&str; 3], v: [f64; 3]) {
        for (a, x) in names.iter().zip(v) {
            self.rows.push((metric.into(), (*a).into(), x));
        }
    }

    fn one(&mut self, metric: &str, v: f64) {
        self.rows.push((metric.into(), "all".into(), v));
    }
}

const ROT: [&str; 3] = ["rx", "ry", "rz"];
const TRANS: [&str; 3] = ["tx", "ty", "tz"];

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let trace = read_trace(open_input(&args.trace)?).map_err(|e| CliError::input(&args.trace, e))?;
    let gt: HashMap<u32, Pose> = read_ground_truth(open_input(&args.gt)?)
        .map_err(|e| CliError::input(&args.gt, e))?
        .into_iter()
        .collect();
    let burn_in = match args.burn_in {
        Some(b) => b,
        None => trace
            .meta_value("tracker.burn_in")
            .map(|v| v.parse::<usize>())
            .transpose()
            .map_err(|_| CliError::Invalid("trace metadata `tracker.burn_in` is malformed".into()))?
            .unwrap_or(10),
    };
    let mut est = Vec::with_capacity(trace.rows.len());
    let mut truth = Vec::with_capacity(trace.rows.len());
    for row in &trace.rows {
        let g = gt.get(&row.frame).ok_or_else(|| {
            CliError::Invalid(format!("frame {} has no ground truth in {}", row.frame, args.gt.display()))
        })?;
        est.push(row.pose());
        truth.push(*g);
    }
    let metric_err = |e: MetricsError| CliError::Invalid(e.to_string());
    let tracked = sequence_precision(&est, &truth, burn_in).map_err(metric_err)?;
    let mut s = Summary { rows: Vec::new() };
    s.one("frames", tracked.frames as f64);
    s.axes("rotation_mae_deg", ROT, tracked.rotation_mae_deg);
    s.axes("translation_mae_mm", TRANS, tracked.translation_mae_mm);
    s.one("direction_mae_deg", tracked.direction_mae_deg);
    s.axes("mean_rotation_error_deg", ROT, mean_rotation_error(&est, &truth, burn_in).map_err(metric_err)?);

    let mut latency: Option<[i64; 3]> = None;
    if let Some(reference) = reference_of(&trace)? {
        let untracked = sequence_precision(&vec![reference; truth.len()], &truth, burn_in).map_err(metric_err)?;
        s.axes("untracked_rotation_mae_deg", ROT, untracked.rotation_mae_deg);
        s.axes(
            "improvement",
            ROT,
            std::array::from_fn(|k| untracked.rotation_mae_deg[k] / tracked.rotation_mae_deg[k]),
        );
        let relative = |poses: &[Pose]| -> Result<Vec<[f64; 3]>, CliError> {
            poses[burn_in..]
                .iter()
                .map(|p| {
                    rotation_error_axes(&p.rotation, &reference.rotation, EulerConvention::IntrinsicXyz)
                        .map_err(|e| CliError::Runtime(e.to_string()))
                })
                .collect()
        };
        let (te, ge) = (relative(&est)?, relative(&truth)?);
        let max_lag = args.max_lag.min(te.len().saturating_sub(1) / 2);
        match latency_xcorr_axes(&te, &ge, max_lag) {
            Ok(lag) => {
                s.axes("latency_frames", ROT, lag.map(|l| l as f64));
                latency = Some(lag);
            }
            Err(e) => log::warn!("latency not available: {e}"),
        }
    }

    let mut out = String::new();
    writeln!(out, "# teso-eval 1").unwrap();
    writeln!(out, "# version={VERSION}").unwrap();
    writeln!(out, "# burn_in={burn_in}").unwrap();
    for (k, v) in &trace.meta {
        if k != "version" {
            writeln!(out, "# trace.{k}={v}").unwrap();
        }
    }
    writeln!(out, "metric,axis,value").unwrap();
    for (m, a, v) in &s.rows {
        writeln!(out, "{m},{a},{v}").unwrap();
    }
    match &args.out {
        Some(path) => {
            write_atomic(path, out.as_bytes())?;
        }
        None => std::io::stdout().lock().write_all(out.as_bytes())?,
    }

    let mut failures = Vec::new();
    if let Some(limit) = args.max_rotation_mae {
        if tracked.rotation_mae_deg.iter().any(|&v| !(v <= limit)) {
            failures.push(format!("rotation MAE {:?} deg exceeds {limit}", tracked.rotation_mae_deg));
        }
    }
    if let Some(limit) = args.max_translation_mae {
        if tracked.translation_mae_mm.iter().any(|&v| !(v <= limit)) {
            failures.push(format!("translation MAE {:?} mm exceeds {limit}", tracked.translation_mae_mm));
        }
    }
    if let Some(limit) = args.max_latency {
        match latency {
            Some(lag) if lag.iter().all(|l| l.unsigned_abs() <= limit) => {}
            Some(lag) => failures.push(format!("latency {lag:?} frames exceeds {limit}")),
            None => failures.push("latency could not be measured".into()),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            eprintln!("threshold failed: {f}");
        }
        Err(CliError::Runtime(format!("{} threshold(s) failed", failures.len())))
    }
}
