//! Kernelized epipolar loss and its analytic derivatives on the essential
//! manifold.
//!
//! Every term is a function of the epipolar residual `r = yᵀ E x`. The
//! kernel modes score a term by `−exp(−r² / 2σ²)`, so inliers near the
//! epipolar curve pull and far-off tentative matches contribute almost
//! nothing; the squared mode scores it by `r²`.
//!
//! Derivatives are taken with respect to the chart coordinates at θ = 0.
//! Along coordinate `i` the chart is `U expm(tAᵢ) Σ₀ expm(−tBᵢ) Vᵀ` with
//! `Aᵢ = ∂Ω₁/∂θᵢ`, `Bᵢ = ∂Ω₂/∂θᵢ`, hence
//!
//! ```text
//! ∂E/∂θᵢ   = U (Aᵢ Σ₀ − Σ₀ Bᵢ) Vᵀ
//! ∂²E/∂θᵢ² = U (Aᵢ² Σ₀ − 2 Aᵢ Σ₀ Bᵢ + Σ₀ Bᵢ²) Vᵀ
//! ```
//!
//! Points are rotated once into the `(U, V)` frame so each term costs a
//! handful of dot products.

use crate::geometry::{omega1, omega2, sigma0, EssentialState, CHART_DIM};
use crate::matching::{NormalizedPoint, PreparedFrame};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("kernel bandwidth must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("low-information frame ({left} left / {right} right keypoints)")]
    LowInformation { left: usize, right: usize },
    #[error("frame has no correspondence data for this loss mode")]
    NoCorrespondences,
}

/// Which terms enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Kernel over both kNN directions.
    #[default]
    KernelKnn,
    /// Kernel over one-to-one matches.
    KernelPairs,
    /// Plain squared residual over one-to-one matches (non-robust).
    SquaredPairs,
}

impl LossMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::KernelKnn => "kernel-knn",
            LossMode::KernelPairs => "kernel-pairs",
            LossMode::SquaredPairs => "squared-pairs",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kernel-knn" => Ok(LossMode::KernelKnn),
            "kernel-pairs" => Ok(LossMode::KernelPairs),
            "squared-pairs" => Ok(LossMode::SquaredPairs),
            other => Err(format!("unknown loss mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    /// Kernel bandwidth in normalized image units.
    pub sigma: f64,
    pub mode: LossMode,
    /// Frames with fewer keypoints than this on either side are reported as
    /// [`LossError::LowInformation`].
    pub min_keypoints: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma: 0.001,
            mode: LossMode::KernelKnn,
            min_keypoints: crate::frame::Frame::MIN_KEYPOINTS,
        }
    }
}

impl KernelConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }
}

/// Loss value with gradient and Hessian diagonal in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: [f64; CHART_DIM],
    pub hess_diag: [f64; CHART_DIM],
    /// Number of terms summed.
    pub terms: usize,
}

impl LossEval {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self
                .grad
                .iter()
                .chain(&self.hess_diag)
                .all(|v| v.is_finite())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Epipolar residual `yᵀ E x`.
pub fn residual(e: &Matrix3<f64>, x: &NormalizedPoint, y: &NormalizedPoint) -> f64 {
    y.dot(&(e * x))
}

/// First and second derivative generators in the `(U, V)` frame.
struct ChartDerivatives {
    first: [Matrix3<f64>; CHART_DIM],
    second: [Matrix3<f64>; CHART_DIM],
}

impl ChartDerivatives {
    fn new() -> Self {
        let s0 = sigma0();
        let basis = |i: usize| {
            let mut t = [0.0; CHART_DIM];
            t[i] = 1.0;
            t
        };
        let first = std::array::from_fn(|i| {
            let (a, b) = (omega1(&basis(i)), omega2(&basis(i)));
            a * s0 - s0 * b
        });
        let second = std::array::from_fn(|i| {
            let (a, b) = (omega1(&basis(i)), omega2(&basis(i)));
            a * a * s0 - a * s0 * b * 2.0 + s0 * b * b
        });
        Self { first, second }
    }
}

/// Left point pushed through every derivative generator, so that each term
/// reduces to dot products with the rotated right point.
struct LeftJet {
    base: Vector3<f64>,
    first: [Vector3<f64>; CHART_DIM],
    second: [Vector3<f64>; CHART_DIM],
}

fn check_frame<'a>(
    frame: &'a PreparedFrame,
    cfg: &KernelConfig,
) -> Result<&'a [(u32, u32)], LossError> {
    if !(cfg.sigma > 0.0) {
        return Err(LossError::NonPositiveSigma(cfg.sigma));
    }
    if frame.left.len() < cfg.min_keypoints || frame.right.len() < cfg.min_keypoints {
        return Err(LossError::LowInformation {
            left: frame.left.len(),
            right: frame.right.len(),
        });
    }
    match cfg.mode {
        LossMode::KernelKnn if frame.correspondences.is_empty() => {
            Err(LossError::NoCorrespondences)
        }
        LossMode::KernelKnn => Ok(&[]),
        _ if frame.matches.is_empty() => Err(LossError::NoCorrespondences),
        _ => Ok(&frame.matches),
    }
}

/// Visits every term of the configured loss in a fixed order.
fn for_each_term(
    frame: &PreparedFrame,
    pairs: &[(u32, u32)],
    mode: LossMode,
    mut f: impl FnMut(usize, usize),
) {
    match mode {
        LossMode::KernelKnn => frame
            .correspondences
            .terms()
            .for_each(|(i, j)| f(i as usize, j as usize)),
        LossMode::KernelPairs | LossMode::SquaredPairs => {
            pairs.iter().for_each(|&(i, j)| f(i as usize, j as usize))
        }
    }
}

/// Loss value for an arbitrary essential matrix.
pub fn value_at(
    e: &Matrix3<f64>,
    frame: &PreparedFrame,
    cfg: &KernelConfig,
) -> Result<f64, LossError> {
    let pairs = check_frame(frame, cfg)?;
    let ex: Vec<Vector3<f64>> = frame.left.iter().map(|x| e * x).collect();
    let inv2s2 = 0.5 / (cfg.sigma * cfg.sigma);
    let mut acc = CompensatedSum::default();
    for_each_term(frame, pairs, cfg.mode, |i, j| {
        let r = frame.right[j].dot(&ex[i]);
        acc.add(match cfg.mode {
            LossMode::SquaredPairs => r * r,
            _ => -(-r * r * inv2s2).exp(),
        });
    });
    Ok(acc.total())
}

/// Loss, gradient and Hessian diagonal at θ = 0 of the chart around `state`.
pub fn evaluate(
    state: &EssentialState,
    frame: &PreparedFrame,
    cfg: &KernelConfig,
) -> Result<LossEval, LossError> {
    let pairs = check_frame(frame, cfg)?;
    let d = ChartDerivatives::new();
    let s0 = sigma0();
    let (u_t, v_t) = (state.u().transpose(), state.v().transpose());

    let left: Vec<LeftJet> = frame
        .left
        .iter()
        .map(|x| {
            let xr = v_t * x;
            LeftJet {
                base: s0 * xr,
                first: std::array::from_fn(|k| d.first[k] * xr),
                second: std::array::from_fn(|k| d.second[k] * xr),
            }
        })
        .collect();
    let right: Vec<Vector3<f64>> = frame.right.iter().map(|y| u_t * y).collect();

    let sigma2 = cfg.sigma * cfg.sigma;
    let inv2s2 = 0.5 / sigma2;
    let mut value = CompensatedSum::default();
    let mut grad = [CompensatedSum::default(); CHART_DIM];
    let mut hess = [CompensatedSum::default(); CHART_DIM];
    let mut terms = 0usize;

    for_each_term(frame, pairs, cfg.mode, |i, j| {
        let (jet, y) = (&left[i], &right[j]);
        let r = y.dot(&jet.base);
        terms += 1;
        match cfg.mode {
            LossMode::SquaredPairs => {
                value.add(r * r);
                for k in 0..CHART_DIM {
                    let (r1, r2) = (y.dot(&jet.first[k]), y.dot(&jet.second[k]));
                    grad[k].add(2.0 * r * r1);
                    hess[k].add(2.0 * (r1 * r1 + r * r2));
                }
            }
            LossMode::KernelKnn | LossMode::KernelPairs => {
                let w = (-r * r * inv2s2).exp();
                value.add(-w);
                // Terms far outside the kernel underflow to exactly zero.
                if w == 0.0 {
                    return;
                }
                let ws = w / sigma2;
                let curv = 1.0 - r * r / sigma2;
                for k in 0..CHART_DIM {
                    let (r1, r2) = (y.dot(&jet.first[k]), y.dot(&jet.second[k]));
                    grad[k].add(ws * r * r1);
                    hess[k].add(ws * (r1 * r1 * curv + r * r2));
                }
            }
        }
    });

    Ok(LossEval {
        value: value.total(),
        grad: grad.map(|g| g.total()),
        hess_diag: hess.map(|h| h.total()),
        terms,
    })
}
