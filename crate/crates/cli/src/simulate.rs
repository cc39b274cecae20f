use crate::common::meta;
use crate::config::ConfigArgs;
use crate::error::CliError;
use crate::output::{sidecar, write_atomic, AtomicFile};
use clap::Args;
use std::path::PathBuf;
use teso_core::format::{write_features_text, write_ground_truth, FeatureFile, FeatureHeader, FeatureWriter};
use teso_core::simulator::generate_sequence;
use teso_core::Pose;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output feature file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Ground-truth sidecar [default: <out stem>.gt.csv].
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Write the line-oriented text form instead of the binary container.
    #[arg(long)]
    pub text: bool,
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let eff = args.config.resolve()?;
    let scene = eff.scene_config();
    let sequence = generate_sequence(&scene, &eff.drift_schedule()?, eff.sequence.frames)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let header = FeatureHeader {
        descriptor_dim: scene.descriptor_dim,
        frame_count: eff.sequence.frames,
        k_left: scene.k_left,
        k_right: scene.k_right,
    };
    let runtime = |e: teso_core::format::FormatError| CliError::Runtime(format!("writing {}: {e}", args.out.display()));

    let mut poses: Vec<(u32, Pose)> = Vec::new();
    let mut keypoints = 0usize;
    let features_digest = if args.text {
        let frames: Vec<_> = sequence.collect();
        poses.extend(frames.iter().map(|f| (f.index, f.ground_truth.expect("simulated frames carry poses"))));
        keypoints = frames.iter().map(|f| f.left.len()).sum();
        let bytes = write_features_text(Vec::new(), &FeatureFile { header, frames }).map_err(runtime)?;
        write_atomic(&args.out, &bytes)?
    } else {
        let mut writer = FeatureWriter::new(AtomicFile::create(&args.out)?, header).map_err(runtime)?;
        for frame in sequence {
            poses.push((frame.index, frame.ground_truth.expect("simulated frames carry poses")));
            keypoints += frame.left.len();
            writer.write_frame(&frame).map_err(runtime)?;
        }
        writer.finish().map_err(runtime)?.commit()?
    };

    let gt_path = args.gt.clone().unwrap_or_else(|| sidecar(&args.out, ".gt.csv"));
    let gt = write_ground_truth(Vec::new(), &meta(&eff), &poses).map_err(runtime)?;
    write_atomic(&gt_path, &gt)?;
    let config_path = sidecar(&args.out, ".config.toml");
    write_atomic(
        &config_path,
        format!("# {}\n# config_sha256 {}\n{}", crate::common::VERSION, eff.digest(), eff.to_toml()).as_bytes(),
    )?;

    println!("config sha256 {}", eff.digest());
    println!("features sha256 {features_digest}");
    println!(
        "wrote {} frames ({:.1} keypoints/frame) to {}, ground truth to {}, config to {}",
        poses.len(),
        keypoints as f64 / poses.len().max(1) as f64,
        args.out.display(),
        gt_path.display(),
        config_path.display()
    );
    Ok(())
}
