use crate::common::{meta, open_features};
use crate::config::ConfigArgs;
use crate::error::CliError;
use crate::output::{open_input, write_atomic};
use clap::Args;
use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;
use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use teso_core::format::{
    read_checkpoint, read_ground_truth, write_checkpoint, write_trace, Checkpoint, FeatureHeader, Trace, TraceRow,
};
use teso_core::geometry::recover_rt;
use teso_core::matching::prepare;
use teso_core::metrics::{sequence_precision, PrecisionSummary};
use teso_core::{EssentialState, Frame, KnnOptions, Pose, Rotation, Tracker};

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Input feature file (binary or text form).
    #[arg(long, short)]
    pub features: PathBuf,
    /// Output trace CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Reference calibration: TOML with `rotation` (9, row-major) and
    /// `translation` (3, meters), or `essential` (9) with optional
    /// `baseline`. Defaults to the reference pose of the scene config.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Ground-truth sidecar for the summary footer. Poses embedded in the
    /// feature file are used when absent.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Write the final tracker state to this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Resume from a checkpoint, skipping the frames it already covers.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceFile {
    rotation: Option<[f64; 9]>,
    translation: Option<[f64; 3]>,
    essential: Option<[f64; 9]>,
    baseline: Option<f64>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Reads a reference calibration. An essential matrix is decomposed with
/// cheirality votes from the mutual matches of `first`.
pub(crate) fn load_reference(
    path: &Path,
    first: Option<&Frame>,
    header: &FeatureHeader,
    knn: &KnnOptions,
) -> Result<Pose, CliError> {
    let mut text = String::new();
    open_input(path)?
        .read_to_string(&mut text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let r: ReferenceFile = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    match (r.rotation, r.translation, r.essential) {
        (Some(rot), Some(t), None) => {
            let m = Matrix3::from_row_slice(&rot);
            if (m * m.transpose() - Matrix3::identity()).norm() > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
                return Err(invalid("reference rotation is not a proper rotation matrix"));
            }
            Ok(Pose::new(Rotation::from_matrix(&m), Vector3::from(t)))
        }
        (None, None, Some(e)) => {
            let state = EssentialState::from_matrix(&Matrix3::from_row_slice(&e))
                .map_err(|e| invalid(format!("reference essential matrix: {e}")))?;
            let frame = first.ok_or_else(|| invalid("an essential-matrix reference needs at least one frame"))?;
            let prepared = prepare(frame, &header.k_left, &header.k_right, knn).map_err(|e| invalid(e.to_string()))?;
            let inliers: Vec<_> = prepared
                .matches
                .iter()
                .map(|&(i, j)| (prepared.left[i as usize], prepared.right[j as usize]))
                .collect();
            let (rot, t) = recover_rt(&state, &inliers, None).map_err(|e| invalid(e.to_string()))?;
            Ok(Pose::new(rot, t * r.baseline.unwrap_or(1.0)))
        }
        _ => Err(invalid(
            "reference file needs either `rotation` and `translation`, or `essential`",
        )),
    }
}

fn summary_entries(prefix: &str, s: &PrecisionSummary, out: &mut Vec<(String, String)>) {
    for (axis, v) in ["rx", "ry", "rz"].iter().zip(s.rotation_mae_deg) {
        out.push((format!("{prefix}_{axis}_mae_deg"), v.to_string()));
    }
    for (axis, v) in ["tx", "ty", "tz"].iter().zip(s.translation_mae_mm) {
        out.push((format!("{prefix}_{axis}_mae_mm"), v.to_string()));
    }
    out.push((format!("{prefix}_direction_mae_deg"), s.direction_mae_deg.to_string()));
}

pub fn run(args: &TrackArgs) -> Result<(), CliError> {
    let eff = args.config.resolve()?;
    let cfg = eff.tracker_config()?;
    let (header, mut frames) = open_features(&args.features)?;
    let read_err = |e| CliError::input(&args.features, e);

    // the first frame is needed up front only for an essential-matrix reference
    let first = frames.next().transpose().map_err(read_err)?;
    let reference = match &args.reference {
        Some(path) => load_reference(path, first.as_ref(), &header, &cfg.knn)?,
        None => eff.scene_config().reference_pose(),
    };
    let baseline = reference.translation.norm();
    if !(baseline > 0.0) {
        return Err(invalid("reference translation must be nonzero"));
    }
    let mut tracker = Tracker::new(cfg, header.k_left, header.k_right, reference)
        .map_err(|e| invalid(e.to_string()))?;

    let mut skip = 0u64;
    if let Some(path) = &args.resume {
        let ckpt = read_checkpoint(open_input(path)?).map_err(|e| CliError::input(path, e))?;
        if ckpt.config_hash != eff.tracker_hash() {
            return Err(invalid(format!(
                "checkpoint {} was written with a different tracker configuration",
                path.display()
            )));
        }
        tracker
            .restore(&ckpt.state, ckpt.frame_count)
            .map_err(|e| invalid(format!("checkpoint {}: {e}", path.display())))?;
        skip = ckpt.frame_count;
    }

    let sidecar_gt: Option<HashMap<u32, Pose>> = match &args.gt {
        Some(path) => Some(
            read_ground_truth(open_input(path)?)
                .map_err(|e| CliError::input(path, e))?
                .into_iter()
                .collect(),
        ),
        None => None,
    };

    let mut rows = Vec::new();
    let (mut est, mut gt) = (Vec::new(), Vec::new());
    let mut skipped = 0usize;
    for (position, frame) in first.map(Ok).into_iter().chain(frames).enumerate() {
        let frame = frame.map_err(read_err)?;
        if (position as u64) < skip {
            continue;
        }
        let rec = tracker
            .process(&frame)
            .map_err(|e| CliError::Runtime(format!("frame {}: {e}", frame.index)))?;
        skipped += usize::from(rec.skipped);
        let truth = match &sidecar_gt {
            Some(map) => map.get(&frame.index).copied(),
            None => frame.ground_truth,
        };
        if let Some(truth) = truth {
            est.push(rec.pose);
            gt.push(truth);
        }
        rows.push(
            TraceRow::from_record(&rec, baseline)
                .map_err(|e| CliError::Runtime(format!("frame {}: {e}", frame.index)))?,
        );
    }
    if rows.is_empty() && skip > 0 {
        log::warn!("checkpoint already covers every frame of {}", args.features.display());
    }

    let mut meta = meta(&eff);
    let r = reference.rotation.matrix();
    meta.push((
        "reference.rotation".into(),
        r.transpose().iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
    ));
    meta.push((
        "reference.translation_m".into(),
        reference.translation.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
    ));
    meta.push(("resumed_from_frame".into(), skip.to_string()));

    let mut summary = vec![
        ("frames".to_string(), rows.len().to_string()),
        ("skipped_frames".to_string(), skipped.to_string()),
    ];
    let burn_in = (eff.tracker.burn_in.saturating_sub(skip)) as usize;
    if est.len() > burn_in {
        let tracked = sequence_precision(&est, &gt, burn_in).map_err(|e| CliError::Runtime(e.to_string()))?;
        let untracked = sequence_precision(&vec![reference; gt.len()], &gt, burn_in)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        summary.push(("evaluated_frames".into(), tracked.frames.to_string()));
        summary_entries("tracked", &tracked, &mut summary);
        summary_entries("untracked", &untracked, &mut summary);
        for (k, axis) in ["rx", "ry", "rz"].iter().enumerate() {
            let ratio = untracked.rotation_mae_deg[k] / tracked.rotation_mae_deg[k];
            summary.push((format!("improvement_{axis}"), ratio.to_string()));
        }
        println!(
            "rotation MAE rx/ry/rz: tracked {:.4}/{:.4}/{:.4} deg, untracked {:.4}/{:.4}/{:.4} deg",
            tracked.rotation_mae_deg[0],
            tracked.rotation_mae_deg[1],
            tracked.rotation_mae_deg[2],
            untracked.rotation_mae_deg[0],
            untracked.rotation_mae_deg[1],
            untracked.rotation_mae_deg[2]
        );
    }

    let trace = Trace { meta, rows, summary };
    let bytes = write_trace(Vec::new(), &trace).map_err(|e| CliError::Runtime(e.to_string()))?;
    let digest = write_atomic(&args.out, &bytes)?;
    println!("config sha256 {}", eff.digest());
    println!("trace sha256 {digest}");
    println!("tracked {} frames ({skipped} skipped) into {}", trace.rows.len(), args.out.display());

    if let Some(path) = &args.checkpoint {
        let ckpt = Checkpoint {
            frame_count: tracker.filter().frame_count,
            config_hash: eff.tracker_hash(),
            state: tracker.persistent_state(),
        };
        let bytes = write_checkpoint(Vec::new(), &ckpt).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(path, &bytes)?;
        println!("checkpoint at frame {} written to {}", ckpt.frame_count, path.display());
    }
    Ok(())
}
