//! Gradient descent with an adaptive step over the flat control vector
//! `x = [u..., w...]`.
//!
//! A trial `x - h grad F(x)` is accepted only if it strictly lowers `F`,
//! after which the step grows by `alpha`; otherwise the step shrinks by
//! `beta` and the same iteration is retried.

use crate::error::{GrapeError, Result};
use crate::gradient::{cost_and_gradient, DexpEvaluator};
use crate::nlevel::{cost_and_gradient_nlevel, NLevelDerivative, NLevelGrid, NLevelSystem};
use crate::types::{BlochVector, ControlGrid, DensityMatrix, Objective, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub h0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iters: usize,
    pub min_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { h0: 1.0, alpha: 1.1, beta: 0.5, eps1: 1e-4, eps2: 5e-3, max_iters: 10_000, min_step: 1e-15 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GrapeError::InvalidConfig(m.into()));
        if !(self.h0.is_finite() && self.h0 > 0.0) {
            return bad("h0 must be finite and > 0");
        }
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return bad("alpha must be >= 1");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if self.eps1.is_nan() || self.eps1 < 0.0 || self.eps2.is_nan() || self.eps2 < 0.0 {
            return bad("eps1 and eps2 must be >= 0");
        }
        if !(self.min_step.is_finite() && self.min_step > 0.0) {
            return bad("min_step must be finite and > 0");
        }
        Ok(())
    }
}

/// Supplies the cost and its gradient over a flat control vector.
pub trait GradientBackend {
    fn dimension(&self) -> usize;
    fn cost_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Analytic Bloch-ball backend.
#[derive(Debug, Clone)]
pub struct QubitBackend {
    pub objective: Objective,
    pub r0: BlochVector,
    pub grid: ControlGrid,
    pub params: SystemParams,
    pub evaluator: DexpEvaluator,
}

impl QubitBackend {
    pub fn new(objective: Objective, r0: BlochVector, grid: ControlGrid, params: SystemParams) -> Self {
        Self { objective, r0, grid, params, evaluator: DexpEvaluator::default() }
    }
}

impl GradientBackend for QubitBackend {
    fn dimension(&self) -> usize {
        2 * self.grid.segments()
    }

    fn cost_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let grid = self.grid.with_flat_controls(x)?;
        let (f, g) = cost_and_gradient(&self.objective, &self.r0, &grid, &self.params, self.evaluator)?;
        Ok((f, g.flat()))
    }
}

/// Superoperator backend for any N.
#[derive(Debug, Clone)]
pub struct NLevelBackend {
    pub objective: Objective,
    pub rho0: DensityMatrix,
    pub grid: NLevelGrid,
    pub system: NLevelSystem,
    pub derivative: NLevelDerivative,
}

impl NLevelBackend {
    pub fn new(objective: Objective, rho0: DensityMatrix, grid: NLevelGrid, system: NLevelSystem) -> Self {
        Self { objective, rho0, grid, system, derivative: NLevelDerivative::default() }
    }
}

impl GradientBackend for NLevelBackend {
    fn dimension(&self) -> usize {
        self.grid.flat_controls().len()
    }

    fn cost_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let grid = self.grid.with_flat_controls(x)?;
        let (f, g) = cost_and_gradient_nlevel(&self.objective, &self.rho0, &grid, &self.system, self.derivative)?;
        Ok((f, g.flat()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ObjectiveBelowEps1,
    GradientBelowEps2,
    MaxIters,
    StepUnderflow,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::ObjectiveBelowEps1 | Termination::GradientBelowEps2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ObjectiveBelowEps1 => "ObjectiveBelowEps1",
            Termination::GradientBelowEps2 => "GradientBelowEps2",
            Termination::MaxIters => "MaxIters",
            Termination::StepUnderflow => "StepUnderflow",
        }
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Cost after the step.
    pub objective: f64,
    /// Gradient norm after the step.
    pub gradient_norm: f64,
    /// Step length that was accepted.
    pub step: f64,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub initial_objective: f64,
    pub initial_gradient_norm: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_controls: Vec<f64>,
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub termination: Termination,
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|x| x.is_finite())
}

pub fn optimize_with(backend: &dyn GradientBackend, x0: &[f64], cfg: &OptimizerConfig) -> Result<OptimizationTrace> {
    cfg.validate()?;
    if x0.len() != backend.dimension() {
        return Err(GrapeError::DimensionMismatch { expected: backend.dimension(), got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(GrapeError::NonFinite { what: "initial controls" });
    }
    let mut x = x0.to_vec();
    let (mut f, mut g) = backend.cost_and_gradient(&x)?;
    if !finite(f, &g) {
        return Err(GrapeError::NonFinite { what: "objective or gradient" });
    }
    let (initial_objective, initial_gradient_norm) = (f, norm(&g));
    let mut h = cfg.h0;
    let mut iterations = Vec::new();

    let termination = 'outer: loop {
        if f < cfg.eps1 {
            break Termination::ObjectiveBelowEps1;
        }
        if norm(&g) < cfg.eps2 {
            break Termination::GradientBelowEps2;
        }
        if iterations.len() >= cfg.max_iters {
            break Termination::MaxIters;
        }
        let mut rejected = 0;
        loop {
            if h < cfg.min_step {
                break 'outer Termination::StepUnderflow;
            }
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - h * gi).collect();
            let accepted = match backend.cost_and_gradient(&trial) {
                Ok((ft, gt)) if finite(ft, &gt) && ft < f => Some((ft, gt)),
                Ok(_) => None,
                Err(GrapeError::SingularFinalState) | Err(GrapeError::NonFinite { .. }) => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some((ft, gt)) => {
                    x = trial;
                    f = ft;
                    g = gt;
                    iterations.push(IterationRecord {
                        iteration: iterations.len() + 1,
                        objective: f,
                        gradient_norm: norm(&g),
                        step: h,
                        rejected,
                    });
                    h *= cfg.alpha;
                    break;
                }
                None => {
                    h *= cfg.beta;
                    rejected += 1;
                }
            }
        }
    };

    Ok(OptimizationTrace {
        initial_objective,
        initial_gradient_norm,
        iterations,
        final_gradient_norm: norm(&g),
        final_objective: f,
        final_controls: x,
        termination,
    })
}

/// Runs the descent from the controls carried by `grid0`.
pub fn optimize(
    obj: &Objective,
    r0: &BlochVector,
    grid0: &ControlGrid,
    params: &SystemParams,
    cfg: &OptimizerConfig,
) -> Result<OptimizationTrace> {
    let backend = QubitBackend::new(obj.clone(), *r0, grid0.clone(), *params);
    optimize_with(&backend, &grid0.flat_controls(), cfg)
}

/// `u_j = sin(2 pi t_{j-1} / T)`, `w_j = exp(-4 (t_{j-1} / T - 1/2)^2)`.
pub fn sine_gaussian_guess(times: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t0 = times[0];
    let total = times[times.len() - 1] - t0;
    let left = &times[..times.len() - 1];
    let u = left.iter().map(|t| (2.0 * std::f64::consts::PI * (t - t0) / total).sin()).collect();
    let w = left.iter().map(|t| (-4.0 * ((t - t0) / total - 0.5).powi(2)).exp()).collect();
    (u, w)
}
