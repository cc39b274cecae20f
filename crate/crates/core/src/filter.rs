//! Adaptive online stochastic optimizer on the chart coordinates.
//!
//! Per coordinate the filter keeps exponential moving averages of the
//! gradient (`g`), the squared gradient (`v`) and the Hessian diagonal
//! (`h`), each with its own adaptive memory size `m`. The step is a
//! quasi-Newton step scaled by the learning rate `ν = g² / (v + ε)`, which
//! is near one while the gradient is consistent and shrinks when it is
//! dominated by noise.

use crate::geometry::{EssentialState, LocalCoordinates, CHART_DIM};
use crate::loss::LossEval;

type Vec5 = [f64; CHART_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Frames that only accumulate statistics.
    pub burn_in: u64,
    /// Regularizer of `g² / (v + ε)`.
    pub epsilon: f64,
    /// Lower bound on `|h|` used in the step.
    pub h_floor: f64,
    /// Per-coordinate step clamp, radians.
    pub max_step: f64,
    /// Re-project `U`, `V` onto SO(3) after this many manifold updates.
    pub reorthonormalize_every: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            burn_in: 10,
            epsilon: 1e-7,
            h_floor: 1e-6,
            max_step: 0.01,
            reorthonormalize_every: 100,
        }
    }
}

/// Filter statistics. Together with the two 3×3 factors of the manifold
/// point these are the entire persistent state of a tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub g: Vec5,
    pub v: Vec5,
    pub h: Vec5,
    pub m: Vec5,
    /// Frames seen so far, skip-frames included.
    pub frame_count: u64,
}

impl Default for FilterState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub delta: LocalCoordinates,
    /// Effective learning rates `ν`.
    pub nu: Vec5,
    /// False during burn-in and on skip-frames.
    pub applied: bool,
}

impl FilterState {
    /// Number of persistent real scalars (`g`, `v`, `h`, `m`).
    pub const SCALARS: usize = 4 * CHART_DIM;

    pub fn new() -> Self {
        Self {
            g: [0.0; CHART_DIM],
            v: [0.0; CHART_DIM],
            h: [0.0; CHART_DIM],
            m: [1.0; CHART_DIM],
            frame_count: 0,
        }
    }

    pub fn in_burn_in(&self, cfg: &FilterConfig) -> bool {
        self.frame_count < cfg.burn_in
    }

    /// EMA of `g`, `v`, `h` with rate `γ = 1/m` from the previous memory.
    pub fn ema_update(&mut self, grad: &Vec5, hess_diag: &Vec5) {
        for i in 0..CHART_DIM {
            let gamma = 1.0 / self.m[i];
            self.g[i] += gamma * (grad[i] - self.g[i]);
            self.v[i] += gamma * (grad[i] * grad[i] - self.v[i]);
            self.h[i] += gamma * (hess_diag[i] - self.h[i]);
        }
    }

    /// `ν = g² / (v + ε)`, clamped to `[0, 1]` against rounding.
    pub fn learning_rates(&self, epsilon: f64) -> Vec5 {
        std::array::from_fn(|i| (self.g[i] * self.g[i] / (self.v[i] + epsilon)).clamp(0.0, 1.0))
    }

    /// `m ← (1 − ν) m + 1`.
    pub fn memory_update(&mut self, epsilon: f64) {
        let nu = self.learning_rates(epsilon);
        for i in 0..CHART_DIM {
            self.m[i] = (1.0 - nu[i]) * self.m[i] + 1.0;
        }
    }

    /// `Δθ = −ν grad / h̃` with `h̃ = max(|h|, h_floor)`, clamped per
    /// coordinate.
    pub fn step(&self, grad: &Vec5, cfg: &FilterConfig) -> StepResult {
        let nu = self.learning_rates(cfg.epsilon);
        let delta = std::array::from_fn(|i| {
            let curvature = self.h[i].abs().max(cfg.h_floor);
            (-nu[i] * grad[i] / curvature).clamp(-cfg.max_step, cfg.max_step)
        });
        StepResult {
            delta,
            nu,
            applied: true,
        }
    }

    /// Feeds one frame's derivatives (or a skip-frame) through the filter and
    /// returns the step to apply.
    pub fn observe(&mut self, eval: Option<&LossEval>, cfg: &FilterConfig) -> StepResult {
        let burn_in = self.in_burn_in(cfg);
        self.frame_count += 1;
        let idle = |s: &Self| StepResult {
            delta: [0.0; CHART_DIM],
            nu: s.learning_rates(cfg.epsilon),
            applied: false,
        };
        let Some(eval) = eval.filter(|e| e.is_finite()) else {
            return idle(self);
        };
        self.ema_update(&eval.grad, &eval.hess_diag);
        if burn_in {
            self.m.iter_mut().for_each(|m| *m += 1.0);
            return idle(self);
        }
        self.memory_update(cfg.epsilon);
        self.step(&eval.grad, cfg)
    }

    /// Checks `g² ≤ v + ε` (up to rounding), `m ≥ 1` and `v ≥ 0`.
    pub fn invariants_hold(&self, epsilon: f64) -> bool {
        (0..CHART_DIM).all(|i| {
            self.g[i] * self.g[i] <= self.v[i] * (1.0 + 1e-12) + epsilon
                && self.m[i] >= 1.0
                && self.v[i] >= 0.0
        })
    }

    /// `g`, `v`, `h`, `m` concatenated.
    pub fn to_array(&self) -> [f64; Self::SCALARS] {
        let mut out = [0.0; Self::SCALARS];
        for (k, part) in [&self.g, &self.v, &self.h, &self.m].into_iter().enumerate() {
            out[k * CHART_DIM..(k + 1) * CHART_DIM].copy_from_slice(part);
        }
        out
    }

    pub fn from_array(a: &[f64; Self::SCALARS], frame_count: u64) -> Self {
        let part = |k: usize| std::array::from_fn(|i| a[k * CHART_DIM + i]);
        Self {
            g: part(0),
            v: part(1),
            h: part(2),
            m: part(3),
            frame_count,
        }
    }
}

/// Total persistent scalars of a tracker: filter statistics plus `U`, `V`.
pub const PERSISTENT_SCALARS: usize = FilterState::SCALARS + 18;

/// One tracking step: filter the frame's derivatives, then move the manifold
/// point by the resulting step.
pub fn tick(
    filter: &mut FilterState,
    manifold: &mut EssentialState,
    eval: Option<&LossEval>,
    cfg: &FilterConfig,
) -> StepResult {
    let step = filter.observe(eval, cfg);
    debug_assert!(filter.invariants_hold(cfg.epsilon));
    if step.applied {
        *manifold = manifold.update(&step.delta);
        let applied_updates = filter.frame_count.saturating_sub(cfg.burn_in);
        if cfg.reorthonormalize_every > 0 && applied_updates.is_multiple_of(cfg.reorthonormalize_every) {
            manifold.reorthonormalize();
        }
    }
    step
}
