//! Configuration file, flag overrides and the resolved effective config.
//!
//! The file is TOML with optional sections `[scene]`, `[drift]`,
//! `[sequence]`, `[tracker]` and `[de]`; every key is optional. The
//! effective config written next to every output is itself a valid config
//! file.

use crate::error::CliError;
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use teso_core::{
    CameraIntrinsics, DeConfig, DriftMode, DriftSchedule, FilterConfig, KernelConfig, KnnOptions, LossMode,
    SceneConfig, TrackerConfig,
};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub scene: SceneSection,
    pub drift: DriftSection,
    pub sequence: SequenceSection,
    pub tracker: TrackerSection,
    pub de: DeSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub preset: Option<String>,
    pub n_points: Option<usize>,
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub k_left: Option<[f64; 5]>,
    pub k_right: Option<[f64; 5]>,
    pub baseline: Option<f64>,
    pub vergence_deg: Option<f64>,
    pub pixel_noise: Option<f64>,
    pub outlier_rate: Option<f64>,
    pub descriptor_dim: Option<usize>,
    pub descriptor_noise: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub mode: Option<String>,
    pub amplitude_deg: Option<f64>,
    pub axes: Option<[bool; 3]>,
    pub period: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSection {
    pub frames: Option<u32>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    pub sigma: Option<f64>,
    pub k: Option<usize>,
    pub burn_in: Option<u64>,
    pub mode: Option<String>,
    pub normalize_descriptors: Option<bool>,
    pub min_keypoints: Option<usize>,
    pub epsilon: Option<f64>,
    pub h_floor: Option<f64>,
    pub max_step: Option<f64>,
    pub reorthonormalize_every: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeSection {
    pub population: Option<usize>,
    pub f: Option<f64>,
    pub cr: Option<f64>,
    pub generations_per_stage: Option<usize>,
    pub stages: Option<usize>,
    pub sigma0: Option<f64>,
    pub bound: Option<f64>,
    pub seed: Option<u64>,
}

/// Options shared by every subcommand that needs a configuration.
#[derive(Debug, Default, Clone, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Scene preset: carla-drift, man-like or kitti-like.
    #[arg(long)]
    pub preset: Option<String>,
    /// Scene seed; also the default DE seed and, offset by 1000, drift seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Kernel bandwidth in normalized image units.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Neighbors per keypoint in the descriptor search.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Loss: kernel-knn, kernel-pairs or squared-pairs.
    #[arg(long)]
    pub loss_mode: Option<String>,
    /// Drift law: none, random-walk, ramp or sinusoid.
    #[arg(long)]
    pub drift_mode: Option<String>,
    /// Per-frame drift increment, degrees.
    #[arg(long)]
    pub drift_amp: Option<f64>,
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    /// Keypoint noise standard deviation, pixels.
    #[arg(long)]
    pub noise_px: Option<f64>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub frames: Option<u32>,
    /// Rescale descriptors to unit norm before matching.
    #[arg(long)]
    pub normalize_descriptors: bool,
    /// DE stages (σ halves at each stage).
    #[arg(long)]
    pub stages: Option<usize>,
    /// DE starting bandwidth.
    #[arg(long)]
    pub sigma0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveScene {
    pub preset: String,
    pub n_points: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub width: u32,
    pub height: u32,
    pub k_left: [f64; 5],
    pub k_right: [f64; 5],
    pub baseline: f64,
    pub vergence_deg: f64,
    pub pixel_noise: f64,
    pub outlier_rate: f64,
    pub descriptor_dim: usize,
    pub descriptor_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDrift {
    pub mode: String,
    pub amplitude_deg: f64,
    pub axes: [bool; 3],
    pub period: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSequence {
    pub frames: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTracker {
    pub sigma: f64,
    pub k: usize,
    pub burn_in: u64,
    pub mode: String,
    pub normalize_descriptors: bool,
    pub min_keypoints: usize,
    pub epsilon: f64,
    pub h_floor: f64,
    pub max_step: f64,
    pub reorthonormalize_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDe {
    pub population: usize,
    pub f: f64,
    pub cr: f64,
    pub generations_per_stage: usize,
    pub stages: usize,
    pub sigma0: f64,
    pub bound: f64,
    pub seed: u64,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effective {
    pub scene: EffectiveScene,
    pub drift: EffectiveDrift,
    pub sequence: EffectiveSequence,
    pub tracker: EffectiveTracker,
    pub de: EffectiveDe,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

impl ConfigArgs {
    /// Reads the config file (if any), applies flag overrides and resolves
    /// defaults.
    pub fn resolve(&self) -> Result<Effective, CliError> {
        let mut file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| invalid(format!("bad config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        self.apply(&mut file);
        resolve(&file)
    }

    fn apply(&self, f: &mut ConfigFile) {
        fn set<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        set(&mut f.scene.preset, &self.preset);
        set(&mut f.scene.seed, &self.seed);
        set(&mut f.scene.outlier_rate, &self.outlier_rate);
        set(&mut f.scene.pixel_noise, &self.noise_px);
        set(&mut f.scene.n_points, &self.n_points);
        set(&mut f.drift.mode, &self.drift_mode);
        set(&mut f.drift.amplitude_deg, &self.drift_amp);
        set(&mut f.sequence.frames, &self.frames);
        set(&mut f.tracker.sigma, &self.sigma);
        set(&mut f.tracker.k, &self.k);
        set(&mut f.tracker.burn_in, &self.burn_in);
        set(&mut f.tracker.mode, &self.loss_mode);
        set(&mut f.de.stages, &self.stages);
        set(&mut f.de.sigma0, &self.sigma0);
        if self.seed.is_some() {
            f.drift.seed = self.seed.map(|s| s + 1000);
            f.de.seed = self.seed;
        }
        if self.normalize_descriptors {
            f.tracker.normalize_descriptors = Some(true);
        }
    }
}

pub fn resolve(f: &ConfigFile) -> Result<Effective, CliError> {
    let preset = f.scene.preset.clone().unwrap_or_else(|| "carla-drift".into());
    let base = SceneConfig::preset(&preset).ok_or_else(|| {
        invalid(format!(
            "unknown preset `{preset}` (expected one of {})",
            SceneConfig::PRESETS.join(", ")
        ))
    })?;
    let s = &f.scene;
    let seed = s.seed.unwrap_or(base.seed);
    let scene = EffectiveScene {
        preset,
        n_points: s.n_points.unwrap_or(base.n_points),
        depth_min: s.depth_min.unwrap_or(base.depth_min),
        depth_max: s.depth_max.unwrap_or(base.depth_max),
        width: s.width.unwrap_or(base.width),
        height: s.height.unwrap_or(base.height),
        k_left: s.k_left.unwrap_or(base.k_left.as_array()),
        k_right: s.k_right.unwrap_or(base.k_right.as_array()),
        baseline: s.baseline.unwrap_or(base.baseline),
        vergence_deg: s.vergence_deg.unwrap_or(base.vergence_deg),
        pixel_noise: s.pixel_noise.unwrap_or(base.pixel_noise),
        outlier_rate: s.outlier_rate.unwrap_or(base.outlier_rate),
        descriptor_dim: s.descriptor_dim.unwrap_or(base.descriptor_dim),
        descriptor_noise: s.descriptor_noise.unwrap_or(base.descriptor_noise),
        seed,
    };
    let d0 = DriftSchedule::random_walk(0.01, seed + 1000);
    let drift = EffectiveDrift {
        mode: f.drift.mode.clone().unwrap_or_else(|| d0.mode.as_str().into()),
        amplitude_deg: f.drift.amplitude_deg.unwrap_or(d0.amplitude_deg),
        axes: f.drift.axes.unwrap_or(d0.axes),
        period: f.drift.period.unwrap_or(d0.period),
        seed: f.drift.seed.unwrap_or(d0.seed),
    };
    let sequence = EffectiveSequence {
        frames: f.sequence.frames.unwrap_or(1000),
    };
    let (k0, f0, n0) = (KernelConfig::default(), FilterConfig::default(), KnnOptions::default());
    let t = &f.tracker;
    let tracker = EffectiveTracker {
        sigma: t.sigma.unwrap_or(k0.sigma),
        k: t.k.unwrap_or(n0.k),
        burn_in: t.burn_in.unwrap_or(f0.burn_in),
        mode: t.mode.clone().unwrap_or_else(|| k0.mode.as_str().into()),
        normalize_descriptors: t.normalize_descriptors.unwrap_or(n0.unit_normalize),
        min_keypoints: t.min_keypoints.unwrap_or(k0.min_keypoints),
        epsilon: t.epsilon.unwrap_or(f0.epsilon),
        h_floor: t.h_floor.unwrap_or(f0.h_floor),
        max_step: t.max_step.unwrap_or(f0.max_step),
        reorthonormalize_every: t.reorthonormalize_every.unwrap_or(f0.reorthonormalize_every),
    };
    let e0 = DeConfig::default();
    let e = &f.de;
    let de = EffectiveDe {
        population: e.population.unwrap_or(e0.population),
        f: e.f.unwrap_or(e0.f),
        cr: e.cr.unwrap_or(e0.cr),
        generations_per_stage: e.generations_per_stage.unwrap_or(e0.generations_per_stage),
        stages: e.stages.unwrap_or(e0.stages),
        sigma0: e.sigma0.unwrap_or(e0.sigma0),
        bound: e.bound.unwrap_or(e0.bound),
        seed: e.seed.unwrap_or(seed),
    };
    let eff = Effective {
        scene,
        drift,
        sequence,
        tracker,
        de,
    };
    eff.validate()?;
    Ok(eff)
}

impl Effective {
    fn validate(&self) -> Result<(), CliError> {
        self.scene_config().validate().map_err(|e| invalid(e.to_string()))?;
        self.drift_schedule()?.validate().map_err(|e| invalid(e.to_string()))?;
        self.tracker_config()?.validate().map_err(|e| invalid(e.to_string()))?;
        self.de_config().validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn scene_config(&self) -> SceneConfig {
        let s = &self.scene;
        SceneConfig {
            n_points: s.n_points,
            depth_min: s.depth_min,
            depth_max: s.depth_max,
            width: s.width,
            height: s.height,
            k_left: CameraIntrinsics::from_array(s.k_left),
            k_right: CameraIntrinsics::from_array(s.k_right),
            baseline: s.baseline,
            vergence_deg: s.vergence_deg,
            pixel_noise: s.pixel_noise,
            outlier_rate: s.outlier_rate,
            descriptor_dim: s.descriptor_dim,
            descriptor_noise: s.descriptor_noise,
            seed: s.seed,
        }
    }

    pub fn drift_schedule(&self) -> Result<DriftSchedule, CliError> {
        let d = &self.drift;
        Ok(DriftSchedule {
            mode: d.mode.parse::<DriftMode>().map_err(invalid)?,
            amplitude_deg: d.amplitude_deg,
            axes: d.axes,
            period: d.period,
            seed: d.seed,
        })
    }

    pub fn tracker_config(&self) -> Result<TrackerConfig, CliError> {
        let t = &self.tracker;
        Ok(TrackerConfig {
            kernel: KernelConfig {
                sigma: t.sigma,
                mode: t.mode.parse::<LossMode>().map_err(invalid)?,
                min_keypoints: t.min_keypoints,
            },
            filter: FilterConfig {
                burn_in: t.burn_in,
                epsilon: t.epsilon,
                h_floor: t.h_floor,
                max_step: t.max_step,
                reorthonormalize_every: t.reorthonormalize_every,
            },
            knn: KnnOptions {
                k: t.k,
                unit_normalize: t.normalize_descriptors,
            },
        })
    }

    pub fn de_config(&self) -> DeConfig {
        let e = &self.de;
        DeConfig {
            population: e.population,
            f: e.f,
            cr: e.cr,
            generations_per_stage: e.generations_per_stage,
            stages: e.stages,
            sigma0: e.sigma0,
            bound: e.bound,
            seed: e.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("effective config serializes")
    }

    /// SHA-256 of the effective config in its TOML form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// First 8 bytes of the digest of the `[tracker]` section, used to tie
    /// checkpoints to a tracker configuration.
    pub fn tracker_hash(&self) -> u64 {
        let text = toml::to_string(&self.tracker).expect("tracker section serializes");
        let d = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    /// `section.key=value` pairs for output headers.
    pub fn flatten(&self) -> Vec<(String, String)> {
        let table: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let mut out = Vec::new();
        for (section, body) in &table {
            if let toml::Value::Table(t) = body {
                for (k, v) in t {
                    out.push((format!("{section}.{k}"), v.to_string()));
                }
            }
        }
        out
    }
}
