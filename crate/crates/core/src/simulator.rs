//! Deterministic synthetic stereo sequences with ground-truth drift.
//!
//! Randomness comes from ChaCha8 streams so that any frame can be generated
//! on its own:
//!
//! * scene frame `f` uses the key `seed_from_u64(scene.seed)` on stream `f`;
//!   per candidate point it draws, in order, `u`, `v`, a depth uniform in
//!   the frustum volume, four pixel-noise normals (left u, v, right u, v),
//!   then `dim` normals each for the shared descriptor, the left descriptor
//!   noise and the right descriptor noise. After all candidates it picks the
//!   outlier indices and finally shuffles the right keypoint order;
//! * drift step `f` (f ≥ 1) uses the key `seed_from_u64(drift.seed)` on
//!   stream `f` and draws one `u32` per axis x, y, z, whose lowest bit is
//!   the sign of that axis' random-walk increment.

use crate::frame::{Descriptors, Frame, Keypoint};
use crate::geometry::{CameraIntrinsics, Pose, Rotation, Translation};
use nalgebra::Vector3;
use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene configuration: {0}")]
    InvalidScene(String),
    #[error("invalid drift schedule: {0}")]
    InvalidDrift(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Candidate 3D points per frame, before visibility culling.
    pub n_points: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub width: u32,
    pub height: u32,
    pub k_left: CameraIntrinsics,
    pub k_right: CameraIntrinsics,
    /// Distance between camera centers, meters.
    pub baseline: f64,
    /// Inward rotation of the right camera about its y axis, degrees.
    pub vergence_deg: f64,
    /// Standard deviation of keypoint noise, pixels.
    pub pixel_noise: f64,
    pub outlier_rate: f64,
    pub descriptor_dim: usize,
    pub descriptor_noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::carla_drift()
    }
}

impl SceneConfig {
    pub const PRESETS: [&'static str; 3] = ["carla-drift", "man-like", "kitti-like"];

    fn base(
        width: u32,
        height: u32,
        k: CameraIntrinsics,
        baseline: f64,
        vergence_deg: f64,
    ) -> Self {
        Self {
            n_points: 1000,
            depth_min: 2.0,
            depth_max: 40.0,
            width,
            height,
            k_left: k,
            k_right: k,
            baseline,
            vergence_deg,
            pixel_noise: 1.0,
            outlier_rate: 0.2,
            descriptor_dim: 128,
            descriptor_noise: 0.05,
            seed: 0,
        }
    }

    /// 1024×512, 70° vertical FoV, 1 m baseline, parallel cameras.
    pub fn carla_drift() -> Self {
        Self::base(
            1024,
            512,
            CameraIntrinsics::from_vertical_fov(1024, 512, 70.0),
            1.0,
            0.0,
        )
    }

    /// 1928×1208, 120°×73° FoV, 2 m baseline, 14° vergence.
    pub fn man_like() -> Self {
        Self::base(
            1928,
            1208,
            CameraIntrinsics::from_fov(1928, 1208, 120.0, 73.0),
            2.0,
            14.0,
        )
    }

    /// 1392×512, about 70°×30° FoV, 0.54 m baseline.
    pub fn kitti_like() -> Self {
        Self::base(
            1392,
            512,
            CameraIntrinsics::from_fov(1392, 512, 70.0, 30.0),
            0.54,
            0.0,
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "carla-drift" => Some(Self::carla_drift()),
            "man-like" => Some(Self::man_like()),
            "kitti-like" => Some(Self::kitti_like()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::InvalidScene(m.to_string()));
        if self.n_points == 0 {
            return fail("n_points must be positive");
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min && self.depth_max.is_finite())
        {
            return fail("depth range must satisfy 0 < depth_min < depth_max");
        }
        if self.width == 0 || self.height == 0 {
            return fail("image size must be positive");
        }
        if !self.k_left.is_valid() || !self.k_right.is_valid() {
            return fail("intrinsics need fx, fy > 0");
        }
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            return fail("baseline must be positive");
        }
        if !self.vergence_deg.is_finite() {
            return fail("vergence must be finite");
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return fail("pixel noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return fail("outlier_rate must lie in [0, 1]");
        }
        if self.descriptor_dim == 0 || self.descriptor_dim > u16::MAX as usize {
            return fail("descriptor_dim must be in 1..=65535");
        }
        if !(self.descriptor_noise >= 0.0 && self.descriptor_noise.is_finite()) {
            return fail("descriptor noise must be non-negative");
        }
        Ok(())
    }

    /// Calibrated pose: right camera at `(baseline, 0, 0)` in the left frame,
    /// turned inward by the vergence angle.
    pub fn reference_pose(&self) -> Pose {
        // camera-to-left orientation of the right camera
        let orient = Rotation::from_axis_angle(&Vector3::y_axis(), -self.vergence_deg.to_radians());
        let center = Vector3::new(self.baseline, 0.0, 0.0);
        let r = orient.inverse();
        Pose::new(r, -(r * center))
    }

    fn inside(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftMode {
    #[default]
    None,
    /// Independent ±amplitude increments per frame and axis.
    RandomWalk,
    /// +amplitude every frame.
    Ramp,
    /// Increment `amplitude · sin(2π f / period)`.
    Sinusoid,
}

impl DriftMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DriftMode::None => "none",
            DriftMode::RandomWalk => "random-walk",
            DriftMode::Ramp => "ramp",
            DriftMode::Sinusoid => "sinusoid",
        }
    }
}

impl std::str::FromStr for DriftMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(DriftMode::None),
            "random-walk" => Ok(DriftMode::RandomWalk),
            "ramp" => Ok(DriftMode::Ramp),
            "sinusoid" => Ok(DriftMode::Sinusoid),
            other => Err(format!("unknown drift mode `{other}`")),
        }
    }
}

/// Orientation drift of the right camera, applied in its own frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSchedule {
    pub mode: DriftMode,
    /// Per-frame increment per axis, degrees.
    pub amplitude_deg: f64,
    /// Drifting axes x, y, z.
    pub axes: [bool; 3],
    /// Sinusoid period in frames.
    pub period: u32,
    pub seed: u64,
}

impl Default for DriftSchedule {
    fn default() -> Self {
        Self {
            mode: DriftMode::None,
            amplitude_deg: 0.01,
            axes: [true; 3],
            period: 200,
            seed: 0,
        }
    }
}

impl DriftSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn random_walk(amplitude_deg: f64, seed: u64) -> Self {
        Self {
            mode: DriftMode::RandomWalk,
            amplitude_deg,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.amplitude_deg >= 0.0 && self.amplitude_deg.is_finite()) {
            return Err(SimError::InvalidDrift(
                "amplitude must be non-negative".into(),
            ));
        }
        if self.mode == DriftMode::Sinusoid && self.period == 0 {
            return Err(SimError::InvalidDrift(
                "sinusoid period must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Per-axis increment of frame `frame` (frame 0 has none), degrees.
    pub fn increment(&self, frame: u32) -> [f64; 3] {
        if frame == 0 || self.mode == DriftMode::None {
            return [0.0; 3];
        }
        let a = self.amplitude_deg;
        let raw = match self.mode {
            DriftMode::None => [0.0; 3],
            DriftMode::Ramp => [a; 3],
            DriftMode::Sinusoid => {
                [a * (2.0 * std::f64::consts::PI * frame as f64 / self.period as f64).sin(); 3]
            }
            DriftMode::RandomWalk => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(frame as u64);
                std::array::from_fn(|_| if rng.next_u32() & 1 == 1 { a } else { -a })
            }
        };
        std::array::from_fn(|k| if self.axes[k] { raw[k] } else { 0.0 })
    }

    /// Rotation of one frame's increment, `Rx Ry Rz`.
    pub fn step_rotation(&self, frame: u32) -> Rotation {
        let d = self.increment(frame).map(f64::to_radians);
        Rotation::from_axis_angle(&Vector3::x_axis(), d[0])
            * Rotation::from_axis_angle(&Vector3::y_axis(), d[1])
            * Rotation::from_axis_angle(&Vector3::z_axis(), d[2])
    }

    /// Accumulated drift after `frame` frames: later increments on the left.
    pub fn accumulated(&self, frame: u32) -> Rotation {
        (1..=frame).fold(Rotation::identity(), |acc, f| self.step_rotation(f) * acc)
    }
}

/// Right-camera rotation at `frame`: the reference pre-composed with the
/// accumulated drift.
pub fn apply_drift(r_ref: &Rotation, schedule: &DriftSchedule, frame: u32) -> Rotation {
    schedule.accumulated(frame) * r_ref
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn noisy_descriptor(base: &[f64], noise: &[f64], sigma: f64) -> Vec<f32> {
    let v: Vec<f64> = base.iter().zip(noise).map(|(b, n)| b + sigma * n).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// One frame of the scene observed with the right camera at `pose`.
pub fn generate_frame(cfg: &SceneConfig, pose: &Pose, index: u32) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let dim = cfg.descriptor_dim;
    let (z3_lo, z3_hi) = (cfg.depth_min.powi(3), cfg.depth_max.powi(3));

    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut left_desc = Descriptors::empty(dim);
    let mut right_desc = Descriptors::empty(dim);
    for _ in 0..cfg.n_points {
        let u = rng.random_range(0.0..cfg.width as f64);
        let v = rng.random_range(0.0..cfg.height as f64);
        let z = (z3_lo + rng.random::<f64>() * (z3_hi - z3_lo)).cbrt();
        let noise: [f64; 4] =
            std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * cfg.pixel_noise);
        let shared = unit_gaussian(&mut rng, dim);
        let noise_l: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let noise_r: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();

        let k0 = &cfg.k_left;
        let y = (v - k0.cy) / k0.fy;
        let x = (u - k0.cx - k0.skew * y) / k0.fx;
        let p_left = Vector3::new(x, y, 1.0) * z;
        let p_right = pose.rotation * p_left + pose.translation;
        if p_right.z <= 0.0 {
            continue;
        }
        let proj = cfg.k_right.matrix() * (p_right / p_right.z);
        let kl = Keypoint::new(u + noise[0], v + noise[1]);
        let kr = Keypoint::new(proj.x + noise[2], proj.y + noise[3]);
        if !cfg.inside(kl.u, kl.v) || !cfg.inside(kr.u, kr.v) {
            continue;
        }
        left.push(kl);
        right.push(kr);
        left_desc.push(&noisy_descriptor(&shared, &noise_l, cfg.descriptor_noise));
        right_desc.push(&noisy_descriptor(&shared, &noise_r, cfg.descriptor_noise));
    }

    let n = left.len();
    if n < Frame::MIN_KEYPOINTS {
        log::warn!("frame {index}: only {n} visible points, emitting a degenerate frame");
    }

    let n_outliers = (cfg.outlier_rate * n as f64).floor() as usize;
    let mut is_outlier = vec![false; n];
    let mut outlier_idx = index::sample(&mut rng, n, n_outliers).into_vec();
    outlier_idx.sort_unstable();
    let mut right_rows: Vec<Vec<f32>> = (0..n).map(|i| right_desc.row(i).to_vec()).collect();
    for &i in &outlier_idx {
        is_outlier[i] = true;
        right_rows[i] = unit_gaussian(&mut rng, dim)
            .into_iter()
            .map(|x| x as f32)
            .collect();
    }

    // order[slot] = source index of the right keypoint stored at `slot`
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut slot_of = vec![0u32; n];
    let mut shuffled = Vec::with_capacity(n);
    let mut shuffled_desc = Descriptors::empty(dim);
    for (slot, &src) in order.iter().enumerate() {
        slot_of[src] = slot as u32;
        shuffled.push(right[src]);
        shuffled_desc.push(&right_rows[src]);
    }
    let pairing = (0..n)
        .filter(|&i| !is_outlier[i])
        .map(|i| (i as u32, slot_of[i]))
        .collect();

    Frame {
        index,
        left,
        right: shuffled,
        left_desc,
        right_desc: shuffled_desc,
        ground_truth: Some(*pose),
        pairing,
    }
}

/// Iterator over the frames of a drifting sequence.
#[derive(Debug, Clone)]
pub struct Sequence {
    scene: SceneConfig,
    drift: DriftSchedule,
    reference: Pose,
    n_frames: u32,
    next: u32,
    accumulated: Rotation,
}

impl Sequence {
    pub fn reference(&self) -> &Pose {
        &self.reference
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    /// Ground-truth pose at `frame`; the translation is held fixed.
    pub fn pose_at(&self, frame: u32) -> Pose {
        Pose::new(
            apply_drift(&self.reference.rotation, &self.drift, frame),
            self.reference.translation,
        )
    }
}

impl Iterator for Sequence {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.next >= self.n_frames {
            return None;
        }
        let f = self.next;
        self.accumulated = self.drift.step_rotation(f) * self.accumulated;
        let pose = Pose::new(
            self.accumulated * self.reference.rotation,
            self.reference.translation,
        );
        self.next += 1;
        Some(generate_frame(&self.scene, &pose, f))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.n_frames - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Sequence {}

pub fn generate_sequence(
    scene: &SceneConfig,
    drift: &DriftSchedule,
    n_frames: u32,
) -> Result<Sequence, SimError> {
    scene.validate()?;
    drift.validate()?;
    Ok(Sequence {
        reference: scene.reference_pose(),
        scene: scene.clone(),
        drift: *drift,
        n_frames,
        next: 0,
        accumulated: Rotation::identity(),
    })
}

/// Reference translation of a preset, for callers that only need `t`.
pub fn reference_translation(scene: &SceneConfig) -> Translation {
    scene.reference_pose().translation
}
