//! Levenberg–Marquardt method for the semismooth system `F(x) = 0`.
//!
//! Each iteration solves the damped normal equations
//!
//! ```text
//! (VᵀV + α‖F(x)‖ I) d = -Vᵀ F(x),    V ∈ ∂F(x)
//! ```
//!
//! and accepts `x + d` only if it strictly reduces `‖F‖`. A rejected step
//! multiplies `α` by 10 and re-solves with the same `V`; an accepted first
//! try divides `α` by 10. The re-solve loop is cut off when the step gets
//! shorter than `ε / ‖V‖_F` or after `max_inner_tries` attempts.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::alcore::{assemble_f, generalized_jacobian, KinkRule, PenalizedSystem, PenaltyState};
use crate::error::{Error, Result};
use crate::model::{GnepProblem, Point};

/// A square nonlinear system together with a generalized Jacobian provider.
pub trait NonlinearSystem {
    fn dim(&self) -> usize;
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

impl NonlinearSystem for PenalizedSystem<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        assemble_f(self.problem, x, self.state)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        generalized_jacobian(self.problem, x, self.state, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub alpha0: f64,
    pub decrease_factor: f64,
    pub increase_factor: f64,
    /// Lower bound applied after every decrease of `α`.
    pub alpha_floor: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub max_inner_tries: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            decrease_factor: 0.1,
            increase_factor: 10.0,
            alpha_floor: 1e-16,
            eps: 1e-8,
            max_iter: 200,
            max_inner_tries: 50,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.decrease_factor && self.decrease_factor < 1.0 && 1.0 < self.increase_factor) {
            return Err(Error::Config(
                "need 0 < decrease_factor < 1 < increase_factor".into(),
            ));
        }
        if !(self.eps > 0.0) || !(self.alpha0 > 0.0) {
            return Err(Error::Config("eps and alpha0 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LmStatus {
    Converged,
    SafeguardStop,
    MaxIter,
}

/// One pass through the damping loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmIterate {
    /// `‖F(x_k)‖`.
    pub residual: f64,
    /// `α_k` on entry.
    pub alpha: f64,
    /// `α_{k+1}`; for a rejected iterate, the last damping tried.
    pub alpha_next: f64,
    /// Number of re-solves with increased damping.
    pub resolves: usize,
    pub accepted: bool,
    /// `‖F(x_k + d_k)‖` of the last trial.
    pub trial_residual: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Point,
    pub iterations: usize,
    pub final_residual: f64,
    pub status: LmStatus,
    pub log: Vec<LmIterate>,
}

/// Solves `M sol = rhs` for symmetric positive definite `M` by Cholesky.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if !m.is_square() || m.nrows() != rhs.len() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: rhs.len(),
        });
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    let chol = Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(rhs))
}

/// Damped Gauss–Newton step `(VᵀV + α‖F‖I) d = -VᵀF`.
pub fn lm_step(v: &DMatrix<f64>, fx: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    if v.nrows() != fx.len() {
        return Err(Error::Dimension {
            expected: v.nrows(),
            got: fx.len(),
        });
    }
    let fnorm = fx.norm();
    if fnorm == 0.0 {
        return Ok(DVector::zeros(v.ncols()));
    }
    let mut normal = v.tr_mul(v);
    for i in 0..normal.nrows() {
        normal[(i, i)] += alpha * fnorm;
    }
    let rhs = -v.tr_mul(fx);
    spd_solve(&normal, &rhs)
}

fn trial_norm<S: NonlinearSystem + ?Sized>(system: &S, x: &DVector<f64>) -> (f64, Option<DVector<f64>>) {
    match system.residual(x) {
        Ok(f) => (f.norm(), Some(f)),
        // A trial point outside the evaluable region is simply rejected.
        Err(_) => (f64::INFINITY, None),
    }
}

/// Runs the damped semismooth Levenberg–Marquardt iteration from `x0`.
///
/// Mathematical failure is reported through [`LmStatus`]; `Err` is returned
/// only when the residual or Jacobian cannot be evaluated at an accepted
/// iterate.
pub fn lm_solve<S: NonlinearSystem + ?Sized>(
    system: &S,
    x0: &DVector<f64>,
    cfg: &LmConfig,
) -> Result<LmResult> {
    cfg.validate()?;
    if x0.len() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            got: x0.len(),
        });
    }
    let mut x = x0.clone();
    let mut fx = system.residual(&x)?;
    let mut norm = fx.norm();
    let mut alpha = cfg.alpha0;
    let mut log = Vec::new();
    let mut iterations = 0;

    let finish = |x, iterations, final_residual, status, log| LmResult {
        x,
        iterations,
        final_residual,
        status,
        log,
    };

    loop {
        if norm <= cfg.eps {
            return Ok(finish(x, iterations, norm, LmStatus::Converged, log));
        }
        if iterations >= cfg.max_iter {
            return Ok(finish(x, iterations, norm, LmStatus::MaxIter, log));
        }
        let v = system.jacobian(&x)?;
        let v_frobenius = v.norm();
        let alpha_in = alpha;

        let mut d = lm_step(&v, &fx, alpha)?;
        let mut x_trial = &x + &d;
        let (mut trial, mut f_trial) = trial_norm(system, &x_trial);
        let mut resolves = 0;

        if trial < norm {
            alpha = (cfg.decrease_factor * alpha).max(cfg.alpha_floor);
        } else {
            loop {
                if resolves >= cfg.max_inner_tries {
                    log.push(LmIterate {
                        residual: norm,
                        alpha: alpha_in,
                        alpha_next: alpha,
                        resolves,
                        accepted: false,
                        trial_residual: trial,
                        step_norm: d.norm(),
                    });
                    return Ok(finish(x, iterations, norm, LmStatus::SafeguardStop, log));
                }
                alpha *= cfg.increase_factor;
                resolves += 1;
                d = lm_step(&v, &fx, alpha)?;
                x_trial = &x + &d;
                (trial, f_trial) = trial_norm(system, &x_trial);
                if trial < norm {
                    break;
                }
                if d.norm() < cfg.eps / v_frobenius {
                    log.push(LmIterate {
                        residual: norm,
                        alpha: alpha_in,
                        alpha_next: alpha,
                        resolves,
                        accepted: false,
                        trial_residual: trial,
                        step_norm: d.norm(),
                    });
                    return Ok(finish(x, iterations, norm, LmStatus::SafeguardStop, log));
                }
            }
        }

        log.push(LmIterate {
            residual: norm,
            alpha: alpha_in,
            alpha_next: alpha,
            resolves,
            accepted: true,
            trial_residual: trial,
            step_norm: d.norm(),
        });
        x = x_trial;
        fx = f_trial.expect("accepted trial has a finite residual");
        norm = trial;
        iterations += 1;
    }
}

/// Result of one approximate subproblem solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub x: Point,
    /// Multipliers of retained constraints; `None` under full penalization.
    pub mu: Option<Vec<DVector<f64>>>,
    pub iterations: usize,
    pub residual: f64,
    pub status: LmStatus,
    pub log: Vec<LmIterate>,
}

/// Solver for the penalized subproblem of one outer iteration.
///
/// Implementations that can keep `h` as explicit constraints return `true`
/// from [`InnerSolver::supports_retained_constraints`]; otherwise the outer
/// loop folds `h` into `g` before iterating.
pub trait InnerSolver: Sync {
    fn supports_retained_constraints(&self) -> bool {
        false
    }

    fn solve(
        &self,
        problem: &GnepProblem,
        x0: &Point,
        state: &PenaltyState,
        tol: f64,
    ) -> Result<InnerOutcome>;
}

/// Full-penalization subsolver: Levenberg–Marquardt on the stacked
/// augmented-Lagrangian gradients.
#[derive(Debug, Clone, Default)]
pub struct LmSubsolver {
    pub config: LmConfig,
    pub rule: KinkRule,
}

impl InnerSolver for LmSubsolver {
    fn solve(
        &self,
        problem: &GnepProblem,
        x0: &Point,
        state: &PenaltyState,
        tol: f64,
    ) -> Result<InnerOutcome> {
        let system = PenalizedSystem::new(problem, state, self.rule)?;
        let cfg = LmConfig {
            eps: tol,
            ..self.config.clone()
        };
        let res = lm_solve(&system, x0, &cfg)?;
        Ok(InnerOutcome {
            x: res.x,
            mu: None,
            iterations: res.iterations,
            residual: res.final_residual,
            status: res.status,
            log: res.log,
        })
    }
}
