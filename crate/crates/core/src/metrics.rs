//! Sequence-level evaluation of tracked calibrations.

use crate::geometry::{
    rotation_error_axes, translation_metrics, EulerConvention, GeometryError, Pose,
};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} estimates vs {1} ground-truth poses")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Mean absolute errors over the evaluated frames of one or more sequences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrecisionSummary {
    pub frames: usize,
    /// Per-axis rotation MAE, degrees.
    pub rotation_mae_deg: [f64; 3],
    /// Per-axis translation MAE after rescaling to the true baseline, mm.
    pub translation_mae_mm: [f64; 3],
    /// Translation direction MAE, degrees.
    pub direction_mae_deg: f64,
}

/// Running sums for [`PrecisionSummary`], fed one frame at a time.
#[derive(Debug, Clone, Default)]
pub struct PrecisionAccumulator {
    frames: usize,
    rot: [f64; 3],
    trans: [f64; 3],
    dir: f64,
}

impl PrecisionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, est: &Pose, gt: &Pose) -> Result<(), MetricsError> {
        let r = rotation_error_axes(&est.rotation, &gt.rotation, EulerConvention::IntrinsicXyz)?;
        let t = translation_metrics(&est.translation, &gt.translation);
        for k in 0..3 {
            self.rot[k] += r[k].abs();
            self.trans[k] += t.abs_mm[k];
        }
        self.dir += t.angle_deg;
        self.frames += 1;
        Ok(())
    }

    pub fn summary(&self) -> PrecisionSummary {
        if self.frames == 0 {
            return PrecisionSummary::default();
        }
        let n = self.frames as f64;
        PrecisionSummary {
            frames: self.frames,
            rotation_mae_deg: self.rot.map(|s| s / n),
            translation_mae_mm: self.trans.map(|s| s / n),
            direction_mae_deg: self.dir / n,
        }
    }
}

/// MAE of a trace against ground truth, skipping the first `burn_in` frames.
pub fn sequence_precision(
    est: &[Pose],
    gt: &[Pose],
    burn_in: usize,
) -> Result<PrecisionSummary, MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(est.len(), gt.len()));
    }
    let mut acc = PrecisionAccumulator::new();
    for (e, g) in est.iter().zip(gt).skip(burn_in) {
        acc.push(e, g)?;
    }
    Ok(acc.summary())
}

/// Frame-weighted mean of per-sequence summaries.
pub fn aggregate(summaries: &[PrecisionSummary]) -> PrecisionSummary {
    let frames: usize = summaries.iter().map(|s| s.frames).sum();
    if frames == 0 {
        return PrecisionSummary::default();
    }
    let w = |s: &PrecisionSummary| s.frames as f64 / frames as f64;
    let mut out = PrecisionSummary {
        frames,
        ..Default::default()
    };
    for s in summaries {
        for k in 0..3 {
            out.rotation_mae_deg[k] += w(s) * s.rotation_mae_deg[k];
            out.translation_mae_mm[k] += w(s) * s.translation_mae_mm[k];
        }
        out.direction_mae_deg += w(s) * s.direction_mae_deg;
    }
    out
}

/// Signed per-axis mean rotation error of a trace, degrees.
pub fn mean_rotation_error(
    est: &[Pose],
    gt: &[Pose],
    burn_in: usize,
) -> Result<[f64; 3], MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(est.len(), gt.len()));
    }
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (e, g) in est.iter().zip(gt).skip(burn_in) {
        let r = rotation_error_axes(&e.rotation, &g.rotation, EulerConvention::IntrinsicXyz)?;
        (0..3).for_each(|k| sum[k] += r[k]);
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(sum.map(|s| s / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasStats {
    pub mean: [f64; 3],
    /// Sample standard deviation.
    pub std: [f64; 3],
    /// `|mean| > 2·std/√N` per axis.
    pub flagged: [bool; 3],
}

impl BiasStats {
    pub fn any_flagged(&self) -> bool {
        self.flagged.iter().any(|&f| f)
    }
}

/// Across-sequence mean and spread of per-sequence mean rotations.
pub fn bias_stats(samples: &[[f64; 3]]) -> Result<BiasStats, MetricsError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean: [f64; 3] = std::array::from_fn(|k| samples.iter().map(|s| s[k]).sum::<f64>() / nf);
    let std: [f64; 3] = std::array::from_fn(|k| {
        (samples
            .iter()
            .map(|s| (s[k] - mean[k]).powi(2))
            .sum::<f64>()
            / (nf - 1.0))
            .sqrt()
    });
    let flagged = std::array::from_fn(|k| mean[k].abs() > 2.0 * std[k] / nf.sqrt());
    Ok(BiasStats { mean, std, flagged })
}

/// Lag in `[-max_lag, max_lag]` maximizing the normalized cross-correlation
/// of the mean-removed series. A positive lag means `tracked` trails
/// `drift`: `tracked[t] ≈ drift[t - lag]`. Ties go to the smaller `|lag|`,
/// then to the positive lag.
pub fn latency_xcorr(tracked: &[f64], drift: &[f64], max_lag: usize) -> Result<i64, MetricsError> {
    if tracked.len() != drift.len() {
        return Err(MetricsError::LengthMismatch(tracked.len(), drift.len()));
    }
    let n = tracked.len();
    if n < 2 * max_lag + 1 {
        return Err(MetricsError::TooFewSamples {
            needed: 2 * max_lag + 1,
            got: n,
        });
    }
    let centered = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / n as f64;
        s.iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let (a, b) = (centered(tracked), centered(drift));
    if a.iter().all(|&x| x == 0.0) || b.iter().all(|&x| x == 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    let corr = |lag: i64| {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for t in 0..n as i64 {
            let s = t - lag;
            if s < 0 || s >= n as i64 {
                continue;
            }
            let (x, y) = (a[t as usize], b[s as usize]);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        if aa == 0.0 || bb == 0.0 {
            f64::NEG_INFINITY
        } else {
            ab / (aa * bb).sqrt()
        }
    };
    let mut best = (0i64, corr(0));
    for l in 1..=max_lag as i64 {
        for lag in [l, -l] {
            let c = corr(lag);
            if c > best.1 {
                best = (lag, c);
            }
        }
    }
    Ok(best.0)
}

/// [`latency_xcorr`] on each of three axes.
pub fn latency_xcorr_axes(
    tracked: &[[f64; 3]],
    drift: &[[f64; 3]],
    max_lag: usize,
) -> Result<[i64; 3], MetricsError> {
    let mut out = [0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let a: Vec<f64> = tracked.iter().map(|v| v[k]).collect();
        let b: Vec<f64> = drift.iter().map(|v| v[k]).collect();
        *o = latency_xcorr(&a, &b, max_lag)?;
    }
    Ok(out)
}
