//! Online tracking of stereo extrinsics on the essential-matrix manifold.
//!
//! A frame's keypoints are matched by descriptor kNN, a kernelized epipolar
//! loss is differentiated in five local coordinates of the manifold, and an
//! adaptive stochastic filter turns the derivatives into small updates of
//! the tracked essential matrix. A differential-evolution solver covers
//! one-shot recalibration, and a deterministic simulator provides sequences
//! with ground truth.

pub mod filter;
pub mod format;
pub mod frame;
pub mod geometry;
pub mod globalopt;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod simulator;
pub mod tracker;

pub use filter::{FilterConfig, FilterState, StepResult, PERSISTENT_SCALARS};
pub use frame::{Descriptors, Frame, Keypoint};
pub use geometry::{
    CameraIntrinsics, EssentialState, EulerConvention, GeometryError, LocalCoordinates, Pose,
    Rotation, Translation, CHART_DIM,
};
pub use globalopt::{DeConfig, DeError, DeResult};
pub use loss::{KernelConfig, LossError, LossEval, LossMode};
pub use matching::{CorrespondenceSet, KnnOptions, MatchingError, PreparedFrame};
pub use metrics::{BiasStats, MetricsError, PrecisionSummary};
pub use simulator::{DriftMode, DriftSchedule, SceneConfig, SimError};
pub use tracker::{TrackError, TrackRecord, Tracker, TrackerConfig};
