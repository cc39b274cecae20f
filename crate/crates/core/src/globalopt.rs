//! One-shot recalibration by differential evolution over the chart
//! coordinates, with the kernel bandwidth annealed between stages.
//!
//! Each stage runs a full rand/1/bin DE at a fixed `σ`, then re-centers the
//! manifold point at the best coordinates found so the next, narrower stage
//! searches around zero again. The initial population of a stage spreads
//! over `bound · σ / σ₀`, so it shrinks along with the kernel.
//! Stage `s` draws from the ChaCha8 stream `s` of `seed_from_u64(seed)`.

use crate::geometry::{chart, EssentialState, LocalCoordinates, CHART_DIM};
use crate::loss::{value_at, KernelConfig, LossError};
use crate::matching::PreparedFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeError {
    #[error("invalid DE configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate frame: {0}")]
    Degenerate(LossError),
    #[error("non-finite loss at stage {stage}")]
    NonFinite { stage: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeConfig {
    pub population: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    pub generations_per_stage: usize,
    pub stages: usize,
    /// Bandwidth of the first stage; halved at every following stage.
    pub sigma0: f64,
    /// Box bound on every chart coordinate.
    pub bound: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 64,
            f: 0.8,
            cr: 0.9,
            generations_per_stage: 40,
            stages: 7,
            sigma0: 0.02,
            bound: 0.1,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<(), DeError> {
        let fail = |m: &str| Err(DeError::InvalidConfig(m.to_string()));
        if self.population < 4 {
            return fail("population must be at least 4");
        }
        if !(self.f > 0.0 && self.f <= 2.0) {
            return fail("F must lie in (0, 2]");
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return fail("CR must lie in [0, 1]");
        }
        if self.stages == 0 {
            return fail("stages must be at least 1");
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return fail("sigma0 must be positive");
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return fail("bound must be positive");
        }
        Ok(())
    }
}

/// `σ₀ / 2ˢ` for every stage `s`.
pub fn sigma_schedule(cfg: &DeConfig) -> Vec<f64> {
    (0..cfg.stages)
        .map(|s| cfg.sigma0 / 2f64.powi(s as i32))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeResult {
    /// Final re-centered manifold point.
    pub state: EssentialState,
    /// Best loss of each stage at that stage's bandwidth.
    pub stage_losses: Vec<f64>,
    /// Best chart coordinates of each stage, relative to that stage's center.
    pub theta_history: Vec<LocalCoordinates>,
    /// Best-so-far loss after every generation, per stage.
    pub generation_best: Vec<Vec<f64>>,
}

/// Anneals `σ` over the stages of `cfg`; the loss mode and keypoint minimum
/// come from `kernel`, whose own `σ` is ignored.
pub fn solve(
    initial: &EssentialState,
    frame: &PreparedFrame,
    kernel: &KernelConfig,
    cfg: &DeConfig,
) -> Result<DeResult, DeError> {
    cfg.validate()?;
    let mut center = *initial;
    let mut result = DeResult {
        state: center,
        stage_losses: Vec::with_capacity(cfg.stages),
        theta_history: Vec::with_capacity(cfg.stages),
        generation_best: Vec::with_capacity(cfg.stages),
    };
    for (stage, sigma) in sigma_schedule(cfg).into_iter().enumerate() {
        let kc = KernelConfig { sigma, ..*kernel };
        let fitness = |theta: &LocalCoordinates| -> Result<f64, DeError> {
            let v = value_at(&chart(&center, theta), frame, &kc).map_err(DeError::Degenerate)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DeError::NonFinite { stage })
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stage as u64);
        let spread = cfg.bound * sigma / cfg.sigma0;
        let (best, best_loss, history) = run_stage(&mut rng, cfg, spread, fitness)?;
        log::debug!("stage {stage}: sigma {sigma}, loss {best_loss}, theta {best:?}");
        center = center.update(&best);
        center.reorthonormalize();
        result.stage_losses.push(best_loss);
        result.theta_history.push(best);
        result.generation_best.push(history);
    }
    result.state = center;
    Ok(result)
}

/// One DE run. The initial population is uniform in `±spread` (inside the
/// `±bound` box) with member 0 at the origin.
fn run_stage<F>(
    rng: &mut ChaCha8Rng,
    cfg: &DeConfig,
    spread: f64,
    fitness: F,
) -> Result<(LocalCoordinates, f64, Vec<f64>), DeError>
where
    F: Fn(&LocalCoordinates) -> Result<f64, DeError>,
{
    let np = cfg.population;
    let b = cfg.bound;
    let spread = spread.min(b);
    let mut pop: Vec<LocalCoordinates> = (0..np)
        .map(|i| {
            if i == 0 {
                [0.0; CHART_DIM]
            } else {
                std::array::from_fn(|_| rng.random_range(-spread..=spread))
            }
        })
        .collect();
    let mut cost = pop.iter().map(&fitness).collect::<Result<Vec<_>, _>>()?;
    let mut history = Vec::with_capacity(cfg.generations_per_stage);

    for _ in 0..cfg.generations_per_stage {
        let trials: Vec<LocalCoordinates> = (0..np)
            .map(|i| {
                let [r1, r2, r3] = distinct_others(rng, np, i);
                let jrand = rng.random_range(0..CHART_DIM);
                std::array::from_fn(|j| {
                    if j == jrand || rng.random::<f64>() < cfg.cr {
                        let x = pop[r1][j] + cfg.f * (pop[r2][j] - pop[r3][j]);
                        // bounce back between the target and the violated bound
                        if x > b {
                            pop[i][j] + rng.random::<f64>() * (b - pop[i][j])
                        } else if x < -b {
                            pop[i][j] + rng.random::<f64>() * (-b - pop[i][j])
                        } else {
                            x
                        }
                    } else {
                        pop[i][j]
                    }
                })
            })
            .collect();
        for (i, trial) in trials.into_iter().enumerate() {
            let c = fitness(&trial)?;
            if c <= cost[i] {
                pop[i] = trial;
                cost[i] = c;
            }
        }
        history.push(cost.iter().copied().fold(f64::INFINITY, f64::min));
    }

    let best = (0..np).fold(0, |a, i| if cost[i] < cost[a] { i } else { a });
    Ok((pop[best], cost[best], history))
}

fn distinct_others(rng: &mut ChaCha8Rng, n: usize, exclude: usize) -> [usize; 3] {
    let mut out = [exclude; 3];
    for k in 0..3 {
        loop {
            let c = rng.random_range(0..n);
            if c != exclude && !out[..k].contains(&c) {
                out[k] = c;
                break;
            }
        }
    }
    out
}
