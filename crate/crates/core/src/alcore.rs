//! Powell–Hestenes–Rockafellar augmented Lagrangian of each player, the
//! stacked residual map `F` of the fully penalized subproblem, and an element
//! of its generalized Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{GnepProblem, PerPlayer, Point};

/// Components with `|u_i + ρ g_i(x)|` below `KINK_TOL * (1 + |u_i|)` are
/// reported as kinks. Branching itself always uses the exact sign.
pub const KINK_TOL: f64 = 1e-12;

/// Safeguarded multiplier estimates `u`, penalty parameters `ρ` and the
/// bound `u_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    u: PerPlayer<DVector<f64>>,
    rho: PerPlayer<f64>,
    u_max: f64,
}

impl PenaltyState {
    pub fn new(u: PerPlayer<DVector<f64>>, rho: PerPlayer<f64>, u_max: f64) -> Result<Self> {
        if !(u_max >= 0.0) {
            return Err(Error::Config(format!("u_max must be >= 0, got {u_max}")));
        }
        if u.len() != rho.len() {
            return Err(Error::Dimension {
                expected: u.len(),
                got: rho.len(),
            });
        }
        if let Some(r) = rho.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("penalty parameter must be positive, got {r}")));
        }
        if u.iter().flat_map(|v| v.iter()).any(|a| !(0.0..=u_max).contains(a)) {
            return Err(Error::Config("safeguarded multipliers must lie in [0, u_max]".into()));
        }
        Ok(Self { u, rho, u_max })
    }

    /// `u = 0` and a uniform `ρ`, shared across players when the problem
    /// has shared constraints.
    pub fn initial(problem: &GnepProblem, rho0: f64, u_max: f64) -> Result<Self> {
        let n = problem.num_players();
        if problem.shared_constraints() {
            Self::new(
                PerPlayer::shared(DVector::zeros(problem.g_count(0)), n),
                PerPlayer::shared(rho0, n),
                u_max,
            )
        } else {
            Self::new(
                PerPlayer::Each((0..n).map(|v| DVector::zeros(problem.g_count(v))).collect()),
                PerPlayer::Each(vec![rho0; n]),
                u_max,
            )
        }
    }

    pub fn u(&self, v: usize) -> &DVector<f64> {
        self.u.get(v)
    }

    pub fn rho(&self, v: usize) -> f64 {
        *self.rho.get(v)
    }

    pub fn u_all(&self) -> &PerPlayer<DVector<f64>> {
        &self.u
    }

    pub fn rho_all(&self) -> &PerPlayer<f64> {
        &self.rho
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn is_shared(&self) -> bool {
        self.u.is_shared() && self.rho.is_shared()
    }

    pub fn rho_max(&self) -> f64 {
        self.rho.iter().copied().fold(f64::MIN, f64::max)
    }
}

/// Element of the Clarke Jacobian picked at components where
/// `u_i + ρ g_i(x) = 0` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KinkRule {
    TreatActive,
    #[default]
    TreatInactive,
}

/// `(u + ρ g)_+`, componentwise.
pub fn shifted_multiplier(g_val: &DVector<f64>, u: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    if g_val.len() != u.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: g_val.len(),
        });
    }
    Ok(u.zip_map(g_val, |ui, gi| (ui + rho * gi).max(0.0)))
}

/// `(ρ/2)‖(g + u/ρ)_+‖²`.
fn phr_penalty(g_val: &DVector<f64>, u: &DVector<f64>, rho: f64) -> f64 {
    let sq: f64 = g_val
        .iter()
        .zip(u.iter())
        .map(|(gi, ui)| (gi + ui / rho).max(0.0).powi(2))
        .sum();
    0.5 * rho * sq
}

/// `L_a^ν(x, u^ν; ρ_ν) = θ_ν(x) + (ρ/2)‖(g^ν(x) + u/ρ)_+‖²`.
pub fn al_value(problem: &GnepProblem, v: usize, x: &Point, state: &PenaltyState) -> Result<f64> {
    problem.check_player(v)?;
    let theta = problem.theta(v, x)?;
    let g = problem.g(v, x)?;
    Ok(theta + phr_penalty(&g, state.u(v), state.rho(v)))
}

/// `∇_{x^ν} θ_ν(x) + ∇_{x^ν} g^ν(x) (u + ρ g^ν(x))_+`.
pub fn al_gradient_block(
    problem: &GnepProblem,
    v: usize,
    x: &Point,
    state: &PenaltyState,
) -> Result<DVector<f64>> {
    problem.check_player(v)?;
    let grad = problem.theta_grad(v, x)?;
    let g = problem.g(v, x)?;
    let lambda = shifted_multiplier(&g, state.u(v), state.rho(v))?;
    Ok(grad + problem.g_own_grad(v, x)? * lambda)
}

fn require_full_penalization(problem: &GnepProblem) -> Result<()> {
    match (0..problem.num_players()).find(|&v| problem.h_count(v) > 0) {
        Some(v) => Err(Error::NotFullyPenalized(v)),
        None => Ok(()),
    }
}

/// Stacked partial gradients of all augmented Lagrangians.
pub fn assemble_f(problem: &GnepProblem, x: &Point, state: &PenaltyState) -> Result<DVector<f64>> {
    require_full_penalization(problem)?;
    problem.check_point(x)?;
    let mut out = DVector::zeros(problem.dim());
    for v in 0..problem.num_players() {
        let b = problem.block(v);
        out.rows_mut(b.start, b.len())
            .copy_from(&al_gradient_block(problem, v, x, state)?);
    }
    Ok(out)
}

/// An element `V ∈ ∂F(x)`; `n × n`, nonsymmetric in general.
pub fn generalized_jacobian(
    problem: &GnepProblem,
    x: &Point,
    state: &PenaltyState,
    rule: KinkRule,
) -> Result<DMatrix<f64>> {
    require_full_penalization(problem)?;
    problem.check_point(x)?;
    let n = problem.dim();
    let mut jac = DMatrix::zeros(n, n);
    for v in 0..problem.num_players() {
        let b = problem.block(v);
        let rho = state.rho(v);
        let u = state.u(v);
        let mut rows = problem.theta_hess_rows(v, x)?;
        if problem.g_count(v) > 0 {
            let g = problem.g(v, x)?;
            let grads = problem.g_grad(v, x)?;
            let hess = problem.g_hess_rows(v, x)?;
            for i in 0..g.len() {
                let shifted = u[i] + rho * g[i];
                let active = if shifted > 0.0 {
                    true
                } else if shifted < 0.0 {
                    false
                } else {
                    rule == KinkRule::TreatActive
                };
                if active {
                    let full = grads.column(i);
                    let own = full.rows(b.start, b.len());
                    rows += (own * full.transpose()) * rho;
                }
                if shifted > 0.0 {
                    rows += &hess[i] * shifted;
                }
            }
        }
        jac.rows_mut(b.start, b.len()).copy_from(&rows);
    }
    Ok(jac)
}

/// Number of components sitting within [`KINK_TOL`] of the activity switch.
pub fn kink_count(problem: &GnepProblem, x: &Point, state: &PenaltyState) -> Result<usize> {
    let mut count = 0;
    for v in 0..problem.num_players() {
        let g = problem.g(v, x)?;
        let u = state.u(v);
        count += g
            .iter()
            .zip(u.iter())
            .filter(|(gi, ui)| (*ui + state.rho(v) * *gi).abs() <= KINK_TOL * (1.0 + ui.abs()))
            .count();
    }
    Ok(count)
}

/// Player-independent part `P` of `L_a^ν = θ_ν + P` for shared constraints.
pub fn shared_penalty_term(problem: &GnepProblem, x: &Point, state: &PenaltyState) -> Result<f64> {
    if !problem.shared_constraints() {
        return Err(Error::NotShared);
    }
    let g = problem.g(0, x)?;
    Ok(phr_penalty(&g, state.u(0), state.rho(0)))
}

/// The fully penalized subproblem `F(x) = 0` for fixed `(u, ρ)`.
pub struct PenalizedSystem<'a> {
    pub problem: &'a GnepProblem,
    pub state: &'a PenaltyState,
    pub rule: KinkRule,
}

impl<'a> PenalizedSystem<'a> {
    pub fn new(problem: &'a GnepProblem, state: &'a PenaltyState, rule: KinkRule) -> Result<Self> {
        require_full_penalization(problem)?;
        Ok(Self {
            problem,
            state,
            rule,
        })
    }
}
