use crate::common::{open_features, VERSION};
use crate::config::{ConfigArgs, Effective};
use crate::error::CliError;
use crate::output::write_atomic;
use crate::track::load_reference;
use clap::Args;
use serde::Serialize;
use std::path::PathBuf;
use teso_core::geometry::{euler_angles, recover_rt, rotation_error_axes};
use teso_core::globalopt::{sigma_schedule, solve};
use teso_core::matching::prepare;
use teso_core::{EssentialState, EulerConvention, Frame, DeError};

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Input feature file (binary or text form).
    #[arg(long, short)]
    pub features: PathBuf,
    /// Index of the frame to recalibrate on.
    #[arg(long)]
    pub frame: u32,
    /// Reference calibration the search starts from (same format as
    /// `track --reference`). Defaults to the scene config.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Output record (TOML). Printed to stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SolveRecord {
    version: &'static str,
    config_sha256: String,
    frame: u32,
    /// Row-major.
    rotation: [f64; 9],
    /// Unit direction.
    translation: [f64; 3],
    euler_deg: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    error_deg: Option<[f64; 3]>,
    sigma_schedule: Vec<f64>,
    stage_losses: Vec<f64>,
    theta_history: Vec<[f64; 5]>,
    config: Effective,
}

pub fn run(args: &SolveArgs) -> Result<(), CliError> {
    let eff = args.config.resolve()?;
    let cfg = eff.tracker_config()?;
    let de = eff.de_config();
    let (header, frames) = open_features(&args.features)?;
    let mut found: Option<Frame> = None;
    for frame in frames {
        let frame = frame.map_err(|e| CliError::input(&args.features, e))?;
        if frame.index == args.frame {
            found = Some(frame);
            break;
        }
    }
    let frame = found.ok_or_else(|| {
        CliError::Invalid(format!("frame {} not found in {}", args.frame, args.features.display()))
    })?;
    let reference = match &args.reference {
        Some(path) => load_reference(path, Some(&frame), &header, &cfg.knn)?,
        None => eff.scene_config().reference_pose(),
    };
    let prepared = prepare(&frame, &header.k_left, &header.k_right, &cfg.knn)
        .map_err(|e| CliError::Invalid(format!("frame {}: {e}", frame.index)))?;
    let initial = EssentialState::from_pose(&reference).map_err(|e| CliError::Invalid(e.to_string()))?;
    let result = solve(&initial, &prepared, &cfg.kernel, &de).map_err(|e| match e {
        DeError::InvalidConfig(m) => CliError::Invalid(m),
        DeError::Degenerate(l) => CliError::Invalid(format!("frame {}: {l}", frame.index)),
        other => CliError::Runtime(other.to_string()),
    })?;
    let (r, t) = recover_rt(&result.state, &[], Some(&reference)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let euler = euler_angles(&r, EulerConvention::IntrinsicXyz)
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .map(f64::to_degrees);
    let error_deg = frame
        .ground_truth
        .and_then(|gt| rotation_error_axes(&r, &gt.rotation, EulerConvention::IntrinsicXyz).ok());
    let m = r.matrix();
    let record = SolveRecord {
        version: VERSION,
        config_sha256: eff.digest(),
        frame: frame.index,
        rotation: std::array::from_fn(|k| m[(k / 3, k % 3)]),
        translation: [t.x, t.y, t.z],
        euler_deg: euler,
        error_deg,
        sigma_schedule: sigma_schedule(&de),
        stage_losses: result.stage_losses,
        theta_history: result.theta_history,
        config: eff,
    };
    let text = toml::to_string(&record).map_err(|e| CliError::Runtime(e.to_string()))?;
    match &args.out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            println!("rotation euler deg {:.5} {:.5} {:.5}", euler[0], euler[1], euler[2]);
            if let Some(e) = error_deg {
                println!("error vs ground truth deg {:.5} {:.5} {:.5}", e[0], e[1], e[2]);
            }
            println!("record written to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
