//! Objectives, gradients and the fixed-step gradient descent loop.

use std::time::Instant;

use serde::Serialize;

use crate::error::{dim, param, Result};
use crate::matrix::{FactorPair, GroundTruth};
use crate::metrics::{balancing_norm, dist, procrustes_align, relative_error};
use crate::sampling::{LooSelector, ObservationMask, WeightedCells};

/// Relative error above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Which objective gradient descent minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverVariant {
    /// `(1/2p) ||P_Omega(X Y^T - M*)||_F^2`.
    Vanilla,
    /// Vanilla plus `(lambda/2)(||X||_F^2 + ||Y||_F^2)`.
    Regularized { lambda: f64 },
    /// Vanilla plus `(1/8) ||X^T X - Y^T Y||_F^2`.
    Balancing,
    /// Balancing objective with the selected line fully observed at unit
    /// weight and every other line sampled at weight `1/p`.
    LeaveOneOut(LooSelector),
}

impl SolverVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Regularized { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                param(format!("regularization lambda = {lambda} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Penalty {
    None,
    Ridge(f64),
    Balance,
}

/// An objective bound to one ground truth and mask.
///
/// The sampled data term is evaluated on the observed cells only, so a
/// gradient costs `O(|Omega| r + (d1 + d2) r^2)`.
#[derive(Debug, Clone)]
pub struct Problem {
    cells: WeightedCells,
    penalty: Penalty,
}

impl Problem {
    pub fn new(gt: &GroundTruth, mask: &ObservationMask, variant: SolverVariant) -> Result<Self> {
        variant.validate()?;
        let (cells, penalty) = match variant {
            SolverVariant::Vanilla => (WeightedCells::sampled(&gt.m_star, mask)?, Penalty::None),
            SolverVariant::Regularized { lambda } => (
                WeightedCells::sampled(&gt.m_star, mask)?,
                Penalty::Ridge(lambda),
            ),
            SolverVariant::Balancing => {
                (WeightedCells::sampled(&gt.m_star, mask)?, Penalty::Balance)
            }
            SolverVariant::LeaveOneOut(sel) => (
                WeightedCells::leave_one_out(&gt.m_star, mask, sel)?,
                Penalty::Balance,
            ),
        };
        Ok(Self { cells, penalty })
    }

    fn check(&self, f: &FactorPair) -> Result<()> {
        if (f.d1(), f.d2()) != (self.cells.d1, self.cells.d2) {
            return dim(format!(
                "factors are {}x{} but the problem is {}x{}",
                f.d1(),
                f.d2(),
                self.cells.d1,
                self.cells.d2
            ));
        }
        Ok(())
    }

    pub fn value(&self, f: &FactorPair) -> Result<f64> {
        self.check(f)?;
        let data = self.cells.value(f);
        Ok(data + self.penalty_value(f))
    }

    fn penalty_value(&self, f: &FactorPair) -> f64 {
        match self.penalty {
            Penalty::None => 0.0,
            Penalty::Ridge(lambda) => {
                0.5 * lambda * (f.x.frobenius_norm().powi(2) + f.y.frobenius_norm().powi(2))
            }
            Penalty::Balance => 0.125 * balancing_norm(f).powi(2),
        }
    }

    /// Objective value and gradient in one pass.
    pub fn value_and_gradient(&self, f: &FactorPair) -> Result<(f64, FactorPair)> {
        self.check(f)?;
        let (data, mut g) = self.cells.value_and_gradient(f);
        match self.penalty {
            Penalty::None => {}
            Penalty::Ridge(lambda) => {
                g.x.axpy(lambda, &f.x);
                g.y.axpy(lambda, &f.y);
            }
            Penalty::Balance => {
                let diff = f.x.t_matmul(&f.x).sub(&f.y.t_matmul(&f.y));
                g.x.axpy(0.5, &f.x.matmul(&diff));
                g.y.axpy(-0.5, &f.y.matmul(&diff));
            }
        }
        Ok((data + self.penalty_value(f), g))
    }

    pub fn gradient(&self, f: &FactorPair) -> Result<FactorPair> {
        Ok(self.value_and_gradient(f)?.1)
    }
}

/// Objective of `variant` at `f`.
pub fn objective(
    f: &FactorPair,
    gt: &GroundTruth,
    mask: &ObservationMask,
    variant: SolverVariant,
) -> Result<f64> {
    Problem::new(gt, mask, variant)?.value(f)
}

/// Gradient `(grad_X, grad_Y)` of `variant` at `f`.
pub fn gradient(
    f: &FactorPair,
    gt: &GroundTruth,
    mask: &ObservationMask,
    variant: SolverVariant,
) -> Result<FactorPair> {
    Problem::new(gt, mask, variant)?.gradient(f)
}

/// `(X - s grad_X, Y - s grad_Y)`.
pub fn step(f: &FactorPair, g: &FactorPair, s: f64) -> FactorPair {
    let mut next = f.clone();
    next.x.axpy(-s, &g.x);
    next.y.axpy(-s, &g.y);
    next
}

/// Run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: SolverVariant,
    /// Step size `s`.
    pub step: f64,
    pub max_iters: usize,
    /// Stop once the relative error drops below this.
    pub tol: f64,
    /// Trace stride. The final iterate is always recorded.
    pub record_every: usize,
    /// Record `dist(F_k, F*)` (costs an alignment per recorded step).
    pub track_dist: bool,
    /// Keep a copy of every recorded iterate.
    pub keep_iterates: bool,
}

impl SolverConfig {
    pub fn new(variant: SolverVariant, step: f64) -> Self {
        Self {
            variant,
            step,
            max_iters: 5000,
            tol: 1e-14,
            record_every: 1,
            track_dist: false,
            keep_iterates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        if !(self.step > 0.0 && self.step.is_finite()) {
            return param(format!("step size {} must be positive", self.step));
        }
        if !(self.tol > 0.0) {
            return param(format!("tolerance {} must be positive", self.tol));
        }
        if self.record_every == 0 {
            return param("trace stride must be positive");
        }
        Ok(())
    }
}

/// Metrics recorded at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    pub rel_err: f64,
    pub dist: Option<f64>,
    pub balancing: f64,
    pub objective: f64,
    pub seconds: f64,
}

/// Per-iteration log, `k` strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterateTrace {
    pub records: Vec<TraceRecord>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// First recorded iteration whose relative error is below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.rel_err < threshold)
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub factors: FactorPair,
    pub trace: IterateTrace,
    pub status: RunStatus,
    /// Number of gradient steps taken.
    pub iterations: usize,
    /// Recorded iterates, aligned with `trace.records`, when requested.
    pub iterates: Option<Vec<FactorPair>>,
}

/// `dist` with a Procrustes fallback when the GL(r) alignment is degenerate.
fn tracked_dist(f: &FactorPair, f_star: &FactorPair) -> Option<f64> {
    dist(f, f_star)
        .or_else(|_| procrustes_align(f, f_star).map(|a| a.residual))
        .ok()
}

/// Gradient descent from `init` until the relative error falls below
/// `config.tol`, `config.max_iters` steps are taken, or the iterate diverges.
pub fn run(
    gt: &GroundTruth,
    mask: &ObservationMask,
    config: &SolverConfig,
    init: &FactorPair,
) -> Result<RunOutput> {
    config.validate()?;
    if !init.is_finite() {
        return param("initial factors contain non-finite entries");
    }
    let problem = Problem::new(gt, mask, config.variant)?;
    problem.check(init)?;
    let f_star = config.track_dist.then(|| gt.f_star());
    let start = Instant::now();

    let mut f = init.clone();
    let mut trace = IterateTrace::default();
    let mut iterates = config.keep_iterates.then(Vec::new);
    let mut k = 0;
    loop {
        let rel_err = relative_error(&f, &gt.m_star)?;
        let (value, grad) = problem.value_and_gradient(&f)?;
        let status = if !rel_err.is_finite() || rel_err > DIVERGENCE_THRESHOLD {
            Some(RunStatus::Diverged)
        } else if rel_err < config.tol {
            Some(RunStatus::Converged)
        } else if k >= config.max_iters {
            Some(RunStatus::MaxIters)
        } else {
            None
        };
        if k % config.record_every == 0 || status.is_some() {
            let dist = match (&f_star, status) {
                (_, Some(RunStatus::Diverged)) => None,
                (Some(fs), _) => tracked_dist(&f, fs),
                (None, _) => None,
            };
            trace.records.push(TraceRecord {
                k,
                rel_err,
                dist,
                balancing: balancing_norm(&f),
                objective: value,
                seconds: start.elapsed().as_secs_f64(),
            });
            if let Some(its) = iterates.as_mut() {
                its.push(f.clone());
            }
        }
        if let Some(status) = status {
            log::debug!("run stopped at k = {k}: {status:?}, rel_err {rel_err:e}");
            return Ok(RunOutput {
                factors: f,
                trace,
                status,
                iterations: k,
                iterates,
            });
        }
        f = step(&f, &grad, config.step);
        k += 1;
    }
}
