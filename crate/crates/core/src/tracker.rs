//! Online tracking loop: match, differentiate the loss, filter, update.

use crate::filter::{tick, FilterConfig, FilterState, PERSISTENT_SCALARS};
use crate::frame::Frame;
use crate::geometry::{
    recover_rt, CameraIntrinsics, EssentialState, GeometryError, LocalCoordinates, Pose, CHART_DIM,
};
use crate::loss::{evaluate, KernelConfig, LossError};
use crate::matching::{prepare, KnnOptions, MatchingError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackerConfig {
    pub kernel: KernelConfig,
    pub filter: FilterConfig,
    pub knn: KnnOptions,
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let fail = |m: &str| Err(TrackError::InvalidConfig(m.to_string()));
        if !(self.kernel.sigma > 0.0 && self.kernel.sigma.is_finite()) {
            return fail("sigma must be positive");
        }
        if self.knn.k == 0 {
            return fail("k must be positive");
        }
        let f = &self.filter;
        if !(f.epsilon > 0.0 && f.h_floor > 0.0 && f.max_step > 0.0) {
            return fail("epsilon, h_floor and max_step must be positive");
        }
        Ok(())
    }
}

/// Outcome of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: u32,
    /// Tracked pose after this frame; the translation has unit length.
    pub pose: Pose,
    /// Loss at the pre-update state, `NaN` on skip-frames.
    pub loss: f64,
    pub delta: LocalCoordinates,
    pub nu: [f64; CHART_DIM],
    pub m: [f64; CHART_DIM],
    pub applied: bool,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    k_left: CameraIntrinsics,
    k_right: CameraIntrinsics,
    reference: Pose,
    filter: FilterState,
    manifold: EssentialState,
}

impl Tracker {
    /// Starts at the reference calibration.
    pub fn new(
        cfg: TrackerConfig,
        k_left: CameraIntrinsics,
        k_right: CameraIntrinsics,
        reference: Pose,
    ) -> Result<Self, TrackError> {
        cfg.validate()?;
        let manifold = EssentialState::from_pose(&reference)?;
        Ok(Self {
            cfg,
            k_left,
            k_right,
            reference,
            filter: FilterState::new(),
            manifold,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn reference(&self) -> &Pose {
        &self.reference
    }

    pub fn filter(&self) -> &FilterState {
        &self.filter
    }

    pub fn manifold(&self) -> &EssentialState {
        &self.manifold
    }

    /// Current `(R, t̂)`, disambiguated against the reference calibration.
    pub fn pose(&self) -> Pose {
        let (r, t) = recover_rt(&self.manifold, &[], Some(&self.reference))
            .expect("reference is always given");
        Pose::new(r, t)
    }

    /// Processes one frame. Frames without enough keypoints, or whose loss
    /// is undefined, are skip-frames: they advance the frame counter only.
    pub fn process(&mut self, frame: &Frame) -> Result<TrackRecord, TrackError> {
        let prepared = prepare(frame, &self.k_left, &self.k_right, &self.cfg.knn)?;
        let eval = match evaluate(&self.manifold, &prepared, &self.cfg.kernel) {
            Ok(e) if e.is_finite() => Some(e),
            Ok(_) => None,
            Err(LossError::NonPositiveSigma(_)) => {
                return Err(TrackError::InvalidConfig("sigma must be positive".into()))
            }
            Err(_) => None,
        };
        if eval.is_none() {
            log::debug!("frame {}: skipped", frame.index);
        }
        let step = tick(
            &mut self.filter,
            &mut self.manifold,
            eval.as_ref(),
            &self.cfg.filter,
        );
        Ok(TrackRecord {
            frame: frame.index,
            pose: self.pose(),
            loss: eval.map_or(f64::NAN, |e| e.value),
            delta: step.delta,
            nu: step.nu,
            m: self.filter.m,
            applied: step.applied,
            skipped: eval.is_none(),
        })
    }

    /// Filter statistics followed by row-major `U` and `V`.
    pub fn persistent_state(&self) -> [f64; PERSISTENT_SCALARS] {
        let mut out = [0.0; PERSISTENT_SCALARS];
        out[..FilterState::SCALARS].copy_from_slice(&self.filter.to_array());
        out[FilterState::SCALARS..].copy_from_slice(&self.manifold.to_array());
        out
    }

    /// Resumes from a saved state.
    pub fn restore(
        &mut self,
        state: &[f64; PERSISTENT_SCALARS],
        frame_count: u64,
    ) -> Result<(), TrackError> {
        let filter: [f64; FilterState::SCALARS] =
            state[..FilterState::SCALARS].try_into().expect("length");
        let factors: [f64; 18] = state[FilterState::SCALARS..].try_into().expect("length");
        self.manifold = EssentialState::from_array(&factors)?;
        self.filter = FilterState::from_array(&filter, frame_count);
        Ok(())
    }
}
