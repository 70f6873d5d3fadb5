//! Levenberg-Marquardt refinement of all non-gauge extrinsics.
//!
//! Each outer iteration redraws geo correspondences and cycle points at the
//! current estimate, then runs damped Gauss-Newton steps on that fixed sample
//! set. A step solves `(J^T J + mu diag(J^T J)) dx = -J^T r` and is kept only
//! if it lowers the loss.

use crate::geom::{RigidTransform, TangentVector};
use crate::residuals::{
    evaluate, linearize, ObjectiveConfig, ParamLayout, ResidualError, RigView, Samples, SparseRows,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Damping above this value means no descent step exists at the current linearization.
const MU_MAX: f64 = 1e12;

/// Relative pivot floor of the Cholesky factorization.
const PIVOT_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "normal equations are singular even with damping {mu:e}; some camera is unconstrained"
    )]
    SingularNormalEquations { mu: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("damped normal matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("Jacobian has {rows} rows but {residuals} residuals were given")]
    DimensionMismatch { rows: usize, residuals: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub lm_lambda0: f64,
    pub lm_up: f64,
    pub lm_down: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub gauge_camera: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 10,
            max_inner_iters: 20,
            lm_lambda0: 1e-4,
            lm_up: 10.0,
            lm_down: 0.1,
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            gauge_camera: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, n_cameras: usize) -> Result<(), OptError> {
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(OptError::InvalidConfig(
                "max_outer_iters and max_inner_iters must be positive".into(),
            ));
        }
        for (name, x) in [
            ("lm_lambda0", self.lm_lambda0),
            ("lm_up", self.lm_up),
            ("lm_down", self.lm_down),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(OptError::InvalidConfig(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        if self.lm_up <= 1.0 || self.lm_down >= 1.0 {
            return Err(OptError::InvalidConfig(
                "lm_up must exceed 1 and lm_down must be below 1".into(),
            ));
        }
        if self.gauge_camera >= n_cameras {
            return Err(OptError::InvalidConfig(format!(
                "gauge_camera {} out of range for {n_cameras} cameras",
                self.gauge_camera
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIters,
    Degenerate,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max-iters",
            Termination::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub outer: usize,
    pub inner: usize,
    /// Loss after this trial if accepted, the loss it failed to beat otherwise.
    pub loss: f64,
    pub mu: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub l_geo: f64,
    pub l_cycle: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub extrinsics: Vec<RigidTransform>,
    pub trace: Vec<TraceEntry>,
    /// Losses of the initial extrinsics on the first sample set.
    pub initial: Losses,
    /// Losses of the refined extrinsics on the last sample set.
    pub final_losses: Losses,
    pub termination: Termination,
    /// Total number of LM trials across all outer iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Valid geo and cycle blocks at the final evaluation.
    pub valid_blocks: (usize, usize),
}

fn normal_equations(j: &SparseRows, r: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>), SolveError> {
    if j.rows.len() != r.len() {
        return Err(SolveError::DimensionMismatch {
            rows: j.rows.len(),
            residuals: r.len(),
        });
    }
    let n = j.n_cols;
    let mut a = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for (row, &res) in j.rows.iter().zip(r) {
        for &(c1, v1) in row {
            g[c1] += v1 * res;
            for &(c2, v2) in row {
                a[(c1, c2)] += v1 * v2;
            }
        }
    }
    Ok((a, g))
}

/// In-place lower Cholesky factor; fails on pivots below `PIVOT_TOL` times the largest diagonal.
fn cholesky(mut a: DMatrix<f64>) -> Result<DMatrix<f64>, SolveError> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    for c in 0..n {
        let mut d = a[(c, c)];
        for k in 0..c {
            d -= a[(c, k)] * a[(c, k)];
        }
        if !(d > PIVOT_TOL * scale) || scale == 0.0 {
            return Err(SolveError::NotPositiveDefinite {
                column: c,
                pivot: d,
            });
        }
        let l = d.sqrt();
        a[(c, c)] = l;
        for r in c + 1..n {
            let mut s = a[(r, c)];
            for k in 0..c {
                s -= a[(r, k)] * a[(c, k)];
            }
            a[(r, c)] = s / l;
        }
    }
    for r in 0..n {
        for c in r + 1..n {
            a[(r, c)] = 0.0;
        }
    }
    Ok(a)
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solves `(J^T J + mu diag(J^T J)) dx = -J^T r` by Cholesky.
pub fn solve_normal_equations(
    j: &SparseRows,
    r: &[f64],
    mu: f64,
) -> Result<DVector<f64>, SolveError> {
    let (mut a, g) = normal_equations(j, r)?;
    for i in 0..a.nrows() {
        a[(i, i)] *= 1.0 + mu;
    }
    let l = cholesky(a)?;
    Ok(-cholesky_solve(&l, &g))
}

fn apply_step(
    ext: &[RigidTransform],
    step: &DVector<f64>,
    layout: &ParamLayout,
) -> Vec<RigidTransform> {
    ext.iter()
        .enumerate()
        .map(|(c, t)| match layout.column(c) {
            Some(col) => t.retract(&TangentVector::from_slice(&step.as_slice()[col..col + 6])),
            None => *t,
        })
        .collect()
}

fn losses(obj: &crate::residuals::Objective) -> Losses {
    Losses {
        l_geo: obj.l_geo,
        l_cycle: obj.l_cycle,
        total: obj.total,
    }
}

/// Minimizes `L_geo + lambda * L_cycle` starting from `initial`, keeping the gauge camera fixed.
pub fn refine(
    view: &(impl RigView + ?Sized),
    initial: &[RigidTransform],
    obj_cfg: &ObjectiveConfig,
    opt_cfg: &OptimizerConfig,
) -> Result<OptResult, OptError> {
    let n = view.num_cameras();
    if initial.len() != n {
        return Err(OptError::InvalidConfig(format!(
            "{} initial extrinsics for {n} cameras",
            initial.len()
        )));
    }
    obj_cfg.validate(n)?;
    opt_cfg.validate(n)?;
    let layout = ParamLayout::new(n, opt_cfg.gauge_camera);

    let mut ext = initial.to_vec();
    let mut mu = opt_cfg.lm_lambda0;
    let mut trace = Vec::new();
    let mut initial_losses = None;
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;
    let mut outer_done = 0;
    let mut last = None;

    'outer: for outer in 0..opt_cfg.max_outer_iters {
        outer_done = outer + 1;
        let samples = Samples::draw(view, &ext, obj_cfg, outer as u64)?;
        let mut current = evaluate(view, &ext, obj_cfg, &samples)?;
        if initial_losses.is_none() {
            initial_losses = Some(losses(&current));
        }
        if current.total <= opt_cfg.abs_tol {
            termination = Termination::Converged;
            last = Some(current);
            break;
        }
        let outer_start = current.total;
        let mut linearized = linearize(&current, obj_cfg, &layout);
        let mut stalled = false;
        for inner in 0..opt_cfg.max_inner_iters {
            iterations += 1;
            let step = match solve_normal_equations(&linearized.0, &linearized.1, mu) {
                Ok(s) => s,
                Err(SolveError::NotPositiveDefinite { .. }) => {
                    mu *= opt_cfg.lm_up;
                    if mu > MU_MAX {
                        return Err(OptError::SingularNormalEquations { mu });
                    }
                    continue;
                }
                Err(e) => unreachable!("system assembled from its own blocks: {e}"),
            };
            let candidate = apply_step(&ext, &step, &layout);
            let accepted = match evaluate(view, &candidate, obj_cfg, &samples) {
                Ok(obj) if obj.total < current.total => Some(obj),
                _ => None,
            };
            match accepted {
                Some(obj) => {
                    let prev = current.total;
                    trace.push(TraceEntry {
                        outer,
                        inner,
                        loss: obj.total,
                        mu,
                        accepted: true,
                    });
                    mu = (mu * opt_cfg.lm_down).max(f64::MIN_POSITIVE);
                    ext = candidate;
                    current = obj;
                    if current.total <= opt_cfg.abs_tol {
                        termination = Termination::Converged;
                        last = Some(current);
                        break 'outer;
                    }
                    if (prev - current.total) <= opt_cfg.rel_tol * prev {
                        break;
                    }
                    linearized = linearize(&current, obj_cfg, &layout);
                }
                None => {
                    trace.push(TraceEntry {
                        outer,
                        inner,
                        loss: current.total,
                        mu,
                        accepted: false,
                    });
                    mu *= opt_cfg.lm_up;
                    if mu > MU_MAX {
                        stalled = true;
                        break;
                    }
                }
            }
        }
        let gained = outer_start - current.total;
        last = Some(current);
        if stalled {
            mu = opt_cfg.lm_lambda0;
        }
        if gained <= opt_cfg.rel_tol * outer_start {
            termination = Termination::Converged;
            break;
        }
    }

    let last = last.expect("at least one outer iteration ran");
    Ok(OptResult {
        extrinsics: ext,
        trace,
        initial: initial_losses.expect("set on the first outer iteration"),
        final_losses: losses(&last),
        termination,
        iterations,
        outer_iterations: outer_done,
        valid_blocks: last.valid_counts(),
    })
}
