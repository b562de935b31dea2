//! Outer augmented Lagrangian loop for general GNEPs and its variational
//! specialization with a single shared multiplier and penalty parameter.
//!
//! Each outer iteration approximately solves the penalized game for fixed
//! safeguarded multipliers `u` and penalties `ρ`, then
//!
//! * sets `λ = (u + ρ g(x))_+`,
//! * keeps `ρ` if `‖min{-g, λ}‖` fell by at least the factor `τ`, otherwise
//!   multiplies it by `γ`,
//! * clamps `u = min{λ, u_max}`.

mod nnls;

pub use nnls::nnls;

use nalgebra::DVector;
use serde::{Serialize, Serializer};

use crate::alcore::{shifted_multiplier, PenaltyState};
use crate::diagnostics::feasibility_gnep_residual;
use crate::error::{Error, Result};
use crate::model::{GnepProblem, MultiplierSet, PerPlayer, Point};
use crate::subsolver::{InnerSolver, LmIterate, LmStatus, LmSubsolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Mode {
    #[default]
    General,
    Variational,
}

/// Tolerance `ε_k` handed to the subsolver at outer iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerTolerance {
    Fixed(f64),
    /// `max(start · factor^k, floor)`.
    Geometric { start: f64, factor: f64, floor: f64 },
}

impl InnerTolerance {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            InnerTolerance::Fixed(v) => v,
            InnerTolerance::Geometric { start, factor, floor } => {
                (start * factor.powi(k.min(i32::MAX as usize) as i32)).max(floor)
            }
        }
    }
}

/// A parameter given once for all players or individually.
#[derive(Debug, Clone, PartialEq)]
pub enum PlayerParam {
    Uniform(f64),
    PerPlayer(Vec<f64>),
}

impl PlayerParam {
    fn layout(&self, players: usize, shared: bool, name: &str) -> Result<PerPlayer<f64>> {
        match self {
            PlayerParam::Uniform(v) if shared => Ok(PerPlayer::shared(*v, players)),
            PlayerParam::Uniform(v) => Ok(PerPlayer::Each(vec![*v; players])),
            PlayerParam::PerPlayer(_) if shared => Err(Error::Config(format!(
                "{name} must be a single scalar in variational mode"
            ))),
            PlayerParam::PerPlayer(vs) if vs.len() == players => Ok(PerPlayer::Each(vs.clone())),
            PlayerParam::PerPlayer(vs) => Err(Error::Config(format!(
                "{name} has {} entries for {players} players",
                vs.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    pub u_max: f64,
    pub rho0: PlayerParam,
    /// `None` picks 0.1 for `n <= 100` and 0.5 otherwise.
    pub tau: Option<PlayerParam>,
    /// `None` picks 10 for `n <= 100` and 2 otherwise.
    pub gamma: Option<PlayerParam>,
    pub eps: f64,
    pub eps_inner: InnerTolerance,
    pub max_outer: usize,
    pub mode: Mode,
    /// Feasibility-GNEP residual accepted for `InfeasibleStationary`.
    pub eps_feas: f64,
    /// Penalty level above which stagnating infeasibility ends the run early.
    pub rho_limit: f64,
    pub stagnation_window: usize,
    pub stagnation_decrease: f64,
    /// A subsolver that stops early is accepted if `‖F‖ <= ε_k · slack`.
    pub inner_slack: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            u_max: 1e6,
            rho0: PlayerParam::Uniform(1.0),
            tau: None,
            gamma: None,
            eps: 1e-8,
            eps_inner: InnerTolerance::Fixed(1e-8),
            max_outer: 100,
            mode: Mode::General,
            eps_feas: 1e-6,
            rho_limit: 1e12,
            stagnation_window: 5,
            stagnation_decrease: 1e-3,
            inner_slack: 1e3,
        }
    }
}

struct Schedule {
    tau: PerPlayer<f64>,
    gamma: PerPlayer<f64>,
    rho0: PerPlayer<f64>,
}

impl OuterConfig {
    fn schedule(&self, problem: &GnepProblem, shared: bool) -> Result<Schedule> {
        let large = problem.dim() > 100;
        let n = problem.num_players();
        let tau = self
            .tau
            .clone()
            .unwrap_or(PlayerParam::Uniform(if large { 0.5 } else { 0.1 }))
            .layout(n, shared, "tau")?;
        let gamma = self
            .gamma
            .clone()
            .unwrap_or(PlayerParam::Uniform(if large { 2.0 } else { 10.0 }))
            .layout(n, shared, "gamma")?;
        let rho0 = self.rho0.layout(n, shared, "rho0")?;
        if tau.iter().any(|t| !(0.0 < *t && *t < 1.0)) {
            return Err(Error::Config("tau must lie in (0, 1)".into()));
        }
        if gamma.iter().any(|g| !(*g > 1.0)) {
            return Err(Error::Config("gamma must exceed 1".into()));
        }
        if rho0.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("rho0 must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if !(self.u_max >= 0.0) {
            return Err(Error::Config("u_max must be nonnegative".into()));
        }
        if !(self.eps_inner.at(0) > 0.0) {
            return Err(Error::Config("inner tolerance must be positive".into()));
        }
        Ok(Schedule { tau, gamma, rho0 })
    }
}

/// Infinity-norm residuals of feasibility, stationarity and complementarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub r_f: f64,
    pub r_o: f64,
    pub r_c: f64,
}

impl Residuals {
    pub fn all_within(&self, eps: f64) -> bool {
        self.r_f <= eps && self.r_o <= eps && self.r_c <= eps
    }
}

/// Trace entry after outer iteration `k`; `k = 0` is the starting point.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    #[serde(serialize_with = "ser_point")]
    pub x: Point,
    pub lambda: PerPlayer<Vec<f64>>,
    pub mu: PerPlayer<Vec<f64>>,
    /// Safeguarded multipliers for the next subproblem.
    pub u: PerPlayer<Vec<f64>>,
    /// Penalty parameters for the next subproblem.
    pub rho: PerPlayer<f64>,
    pub inner_iters: usize,
    pub i_total: usize,
    pub inner_status: Option<LmStatus>,
    pub inner_residual: Option<f64>,
    pub residuals: Residuals,
    /// `‖min{-g^ν(x), λ^ν}‖₂`.
    pub vmeasure: PerPlayer<f64>,
    pub lm_log: Vec<LmIterate>,
}

fn ser_point<S: Serializer>(x: &Point, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(x.iter())
}

impl<T: Serialize> Serialize for PerPlayer<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    SolvedKKT,
    InfeasibleStationary,
    MaxOuterIterations,
    SubsolverFailure,
}

#[derive(Debug, Clone)]
pub struct TerminationReport {
    pub status: Status,
    pub mode: Mode,
    pub x: Point,
    pub multipliers: MultiplierSet,
    pub residuals: Residuals,
    pub rho_max: f64,
    pub outer_iterations: usize,
    pub i_total: usize,
    pub trace: Vec<IterationRecord>,
    /// Final safeguard/penalty state; in variational mode it is stored once
    /// for all players.
    pub state: PenaltyState,
}

impl TerminationReport {
    pub fn last(&self) -> &IterationRecord {
        self.trace.last().expect("trace holds at least the starting record")
    }
}

/// `λ^{ν,0}` from a nonnegative least-squares fit of the stationarity
/// condition at `x0`, restricted to constraints with `g_i(x0) >= 0`.
pub fn initial_multipliers(problem: &GnepProblem, x0: &Point) -> Result<MultiplierSet> {
    problem.check_point(x0)?;
    let lambda = (0..problem.num_players())
        .map(|v| {
            let g = problem.g(v, x0)?;
            let active: Vec<usize> = (0..g.len()).filter(|&i| !(g[i] < 0.0)).collect();
            let mut lam = DVector::zeros(g.len());
            if !active.is_empty() {
                let a = problem.g_own_grad(v, x0)?.select_columns(&active);
                let b = -problem.theta_grad(v, x0)?;
                let fit = nnls(&a, &b)?;
                for (k, &i) in active.iter().enumerate() {
                    lam[i] = fit[k];
                }
            }
            Ok(lam)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiplierSet::from_lambda(PerPlayer::Each(lambda)))
}

/// Shared-constraint variant: one `λ^0` fitted to the stacked stationarity
/// conditions of all players.
pub fn initial_multipliers_shared(problem: &GnepProblem, x0: &Point) -> Result<MultiplierSet> {
    if !problem.shared_constraints() {
        return Err(Error::NotShared);
    }
    problem.check_point(x0)?;
    let n = problem.dim();
    let g = problem.g(0, x0)?;
    let active: Vec<usize> = (0..g.len()).filter(|&i| !(g[i] < 0.0)).collect();
    let mut lam = DVector::zeros(g.len());
    if !active.is_empty() {
        let mut a = nalgebra::DMatrix::zeros(n, active.len());
        let mut b = DVector::zeros(n);
        for v in 0..problem.num_players() {
            let blk = problem.block(v);
            let own = problem.g_own_grad(v, x0)?.select_columns(&active);
            a.rows_mut(blk.start, blk.len()).copy_from(&own);
            b.rows_mut(blk.start, blk.len())
                .copy_from(&-problem.theta_grad(v, x0)?);
        }
        let fit = nnls(&a, &b)?;
        for (k, &i) in active.iter().enumerate() {
            lam[i] = fit[k];
        }
    }
    let players = problem.num_players();
    Ok(MultiplierSet {
        lambda: PerPlayer::shared(lam, players),
        mu: PerPlayer::shared(DVector::zeros(problem.h_count(0)), players),
    })
}

/// `λ^{k+1} = (u^k + ρ_k g(x^{k+1}))_+`, computed once when `u` is shared.
pub fn update_multipliers(
    problem: &GnepProblem,
    x_next: &Point,
    state: &PenaltyState,
) -> Result<PerPlayer<DVector<f64>>> {
    match state.u_all() {
        PerPlayer::Shared { value, players } => {
            let g = problem.g(0, x_next)?;
            Ok(PerPlayer::shared(shifted_multiplier(&g, value, state.rho(0))?, *players))
        }
        PerPlayer::Each(us) => us
            .iter()
            .enumerate()
            .map(|(v, u)| shifted_multiplier(&problem.g(v, x_next)?, u, state.rho(v)))
            .collect::<Result<Vec<_>>>()
            .map(PerPlayer::Each),
    }
}

/// Keeps `ρ_ν` when `new_ν <= τ_ν · old_ν`, otherwise multiplies by `γ_ν`.
pub fn update_penalty(
    vmeasure_new: &PerPlayer<f64>,
    vmeasure_old: &PerPlayer<f64>,
    tau: &PerPlayer<f64>,
    gamma: &PerPlayer<f64>,
    rho: &PerPlayer<f64>,
) -> PerPlayer<f64> {
    let step = |v: usize| {
        if *vmeasure_new.get(v) <= tau.get(v) * vmeasure_old.get(v) {
            *rho.get(v)
        } else {
            gamma.get(v) * rho.get(v)
        }
    };
    match rho {
        PerPlayer::Shared { players, .. } => PerPlayer::shared(step(0), *players),
        PerPlayer::Each(r) => PerPlayer::Each((0..r.len()).map(step).collect()),
    }
}

/// `u^{k+1} = min{λ^{k+1}, u_max}`.
pub fn update_safeguard(lambda_next: &PerPlayer<DVector<f64>>, u_max: f64) -> PerPlayer<DVector<f64>> {
    lambda_next.map(|l| l.map(|a| a.min(u_max).max(0.0)))
}

/// `‖min{-g^ν(x), λ^ν}‖₂` for every player.
pub fn vmeasure(
    problem: &GnepProblem,
    x: &Point,
    lambda: &PerPlayer<DVector<f64>>,
) -> Result<PerPlayer<f64>> {
    let one = |v: usize, l: &DVector<f64>| -> Result<f64> {
        let g = problem.g(v, x)?;
        Ok(g.zip_map(l, |gi, li| (-gi).min(li)).norm())
    };
    match lambda {
        PerPlayer::Shared { value, players } => Ok(PerPlayer::shared(one(0, value)?, *players)),
        PerPlayer::Each(ls) => ls
            .iter()
            .enumerate()
            .map(|(v, l)| one(v, l))
            .collect::<Result<Vec<_>>>()
            .map(PerPlayer::Each),
    }
}

/// Feasibility, stationarity and complementarity residuals:
///
/// ```text
/// R_f = max_ν ‖g_+^ν(x)‖_∞
/// R_o = max_ν ‖∇_{x^ν}θ_ν(x) + ∇_{x^ν}g^ν(x) λ^ν‖_∞
/// R_c = max_ν |g^ν(x)ᵀ λ^ν|
/// ```
pub fn stopping_residuals(
    problem: &GnepProblem,
    x: &Point,
    lambda: &PerPlayer<DVector<f64>>,
) -> Result<Residuals> {
    let mut r = Residuals {
        r_f: 0.0,
        r_o: 0.0,
        r_c: 0.0,
    };
    for v in 0..problem.num_players() {
        let g = problem.g(v, x)?;
        let l = lambda.get(v);
        if g.len() != l.len() {
            return Err(Error::Dimension {
                expected: g.len(),
                got: l.len(),
            });
        }
        let stat = problem.theta_grad(v, x)? + problem.g_own_grad(v, x)? * l;
        r.r_f = r.r_f.max(g.iter().fold(0.0, |m, gi| m.max(gi.max(0.0))));
        r.r_o = r.r_o.max(stat.amax());
        r.r_c = r.r_c.max(g.dot(l).abs());
    }
    Ok(r)
}

/// General augmented Lagrangian method with per-player multipliers and
/// penalty parameters, using the Levenberg–Marquardt subsolver.
pub fn solve(problem: &GnepProblem, x0: &Point, cfg: &OuterConfig) -> Result<TerminationReport> {
    run_loop(problem, x0, cfg, false, &LmSubsolver::default())
}

/// Variational-equilibrium method: one multiplier vector and one penalty
/// parameter shared by every player.
pub fn solve_variational(
    problem: &GnepProblem,
    x0: &Point,
    cfg: &OuterConfig,
) -> Result<TerminationReport> {
    if !problem.shared_constraints() {
        return Err(Error::Config(
            "variational mode requires a problem with shared constraints".into(),
        ));
    }
    run_loop(problem, x0, cfg, true, &LmSubsolver::default())
}

/// Dispatches on `cfg.mode` with a caller-supplied subsolver.
pub fn solve_with(
    problem: &GnepProblem,
    x0: &Point,
    cfg: &OuterConfig,
    inner: &dyn InnerSolver,
) -> Result<TerminationReport> {
    let shared = cfg.mode == Mode::Variational;
    if shared && !problem.shared_constraints() {
        return Err(Error::Config(
            "variational mode requires a problem with shared constraints".into(),
        ));
    }
    run_loop(problem, x0, cfg, shared, inner)
}

fn to_vecs(p: &PerPlayer<DVector<f64>>) -> PerPlayer<Vec<f64>> {
    p.map(|v| v.as_slice().to_vec())
}

fn run_loop(
    original: &GnepProblem,
    x0: &Point,
    cfg: &OuterConfig,
    shared: bool,
    inner: &dyn InnerSolver,
) -> Result<TerminationReport> {
    let folded;
    let problem = if inner.supports_retained_constraints() {
        original
    } else {
        folded = original.fully_penalized();
        &folded
    };
    problem.check_point(x0)?;
    let sched = cfg.schedule(problem, shared)?;
    let players = problem.num_players();
    let mode = if shared { Mode::Variational } else { Mode::General };

    let init = if shared {
        initial_multipliers_shared(problem, x0)?
    } else {
        initial_multipliers(problem, x0)?
    };
    let mut lambda = init.lambda;
    let mut mu = init.mu;
    let mut state = PenaltyState::new(
        update_safeguard(&lambda, cfg.u_max),
        sched.rho0.clone(),
        cfg.u_max,
    )?;
    let mut x = x0.clone();
    let mut vm_old = vmeasure(problem, &x, &lambda)?;
    let mut residuals = stopping_residuals(problem, &x, &lambda)?;
    let mut i_total = 0;

    let mut trace = vec![IterationRecord {
        k: 0,
        x: x.clone(),
        lambda: to_vecs(&lambda),
        mu: to_vecs(&mu),
        u: to_vecs(state.u_all()),
        rho: state.rho_all().clone(),
        inner_iters: 0,
        i_total: 0,
        inner_status: None,
        inner_residual: None,
        residuals,
        vmeasure: vm_old.clone(),
        lm_log: Vec::new(),
    }];

    let feasibility_residual = |x: &Point, mu: &PerPlayer<DVector<f64>>| -> Result<f64> {
        let mu_hat: Vec<DVector<f64>> = mu.to_vec();
        Ok(feasibility_gnep_residual(problem, x, &mu_hat)?
            .into_iter()
            .fold(0.0, f64::max))
    };

    let status = 'outer: loop {
        let k = trace.len() - 1;
        if residuals.all_within(cfg.eps) {
            break Status::SolvedKKT;
        }
        if k >= cfg.max_outer {
            if residuals.r_f > cfg.eps && feasibility_residual(&x, &mu)? <= cfg.eps_feas {
                break Status::InfeasibleStationary;
            }
            break Status::MaxOuterIterations;
        }
        if state.rho_max() > cfg.rho_limit && k >= cfg.stagnation_window && residuals.r_f > cfg.eps {
            let before = trace[k - cfg.stagnation_window].residuals.r_f;
            let decrease = (before - residuals.r_f) / before;
            if decrease < cfg.stagnation_decrease && feasibility_residual(&x, &mu)? <= cfg.eps_feas {
                break Status::InfeasibleStationary;
            }
        }

        let tol = cfg.eps_inner.at(k);
        let outcome = match inner.solve(problem, &x, &state, tol) {
            Ok(o) => o,
            Err(_) => break 'outer Status::SubsolverFailure,
        };
        match outcome.status {
            LmStatus::Converged => {}
            LmStatus::SafeguardStop | LmStatus::MaxIter => {
                if !(outcome.residual <= tol * cfg.inner_slack) {
                    break Status::SubsolverFailure;
                }
            }
        }
        i_total += outcome.iterations;
        x = outcome.x;
        if let Some(m) = outcome.mu {
            mu = if shared {
                PerPlayer::shared(m.into_iter().next().unwrap_or_default(), players)
            } else {
                PerPlayer::Each(m)
            };
        }

        lambda = update_multipliers(problem, &x, &state)?;
        let vm_new = vmeasure(problem, &x, &lambda)?;
        let rho = update_penalty(&vm_new, &vm_old, &sched.tau, &sched.gamma, state.rho_all());
        state = PenaltyState::new(update_safeguard(&lambda, cfg.u_max), rho, cfg.u_max)?;
        residuals = stopping_residuals(problem, &x, &lambda)?;
        vm_old = vm_new;

        trace.push(IterationRecord {
            k: k + 1,
            x: x.clone(),
            lambda: to_vecs(&lambda),
            mu: to_vecs(&mu),
            u: to_vecs(state.u_all()),
            rho: state.rho_all().clone(),
            inner_iters: outcome.iterations,
            i_total,
            inner_status: Some(outcome.status),
            inner_residual: Some(outcome.residual),
            residuals,
            vmeasure: vm_old.clone(),
            lm_log: outcome.log,
        });
    };

    Ok(TerminationReport {
        status,
        mode,
        rho_max: state.rho_max(),
        outer_iterations: trace.len() - 1,
        i_total,
        residuals,
        multipliers: MultiplierSet { lambda, mu },
        x,
        trace,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pp(v: &[f64]) -> PerPlayer<f64> {
        PerPlayer::Each(v.to_vec())
    }

    #[test]
    fn penalty_update_examples() {
        let tau = pp(&[0.1]);
        let gamma = pp(&[10.0]);
        let rho = pp(&[1.0]);
        assert_eq!(update_penalty(&pp(&[0.05]), &pp(&[1.0]), &tau, &gamma, &rho), rho);
        assert_eq!(update_penalty(&pp(&[0.5]), &pp(&[1.0]), &tau, &gamma, &rho), pp(&[10.0]));
        assert_eq!(update_penalty(&pp(&[0.0]), &pp(&[0.0]), &tau, &gamma, &rho), rho);
    }

    #[test]
    fn penalty_update_shared_is_single_test() {
        let shared = |v| PerPlayer::shared(v, 3);
        let out = update_penalty(&shared(0.5), &shared(1.0), &shared(0.1), &shared(10.0), &shared(2.0));
        assert!(out.is_shared());
        assert_eq!(*out.get(2), 20.0);
    }

    #[test]
    fn safeguard_examples() {
        let one = |a| PerPlayer::Each(vec![DVector::from_element(1, a)]);
        assert_eq!(update_safeguard(&one(1e9), 1e6).get(0)[0], 1e6);
        assert_eq!(update_safeguard(&one(0.3), 1e6).get(0)[0], 0.3);
        assert_eq!(update_safeguard(&one(7.0), 0.0).get(0)[0], 0.0);
    }

    #[test]
    fn inner_tolerance_schedule() {
        let g = InnerTolerance::Geometric {
            start: 1e-2,
            factor: 0.1,
            floor: 1e-8,
        };
        assert_eq!(g.at(0), 1e-2);
        assert!((g.at(3) - 1e-5).abs() < 1e-18);
        assert_eq!(g.at(50), 1e-8);
        assert_eq!(InnerTolerance::Fixed(1e-8).at(7), 1e-8);
    }

    #[test]
    fn variational_params_must_be_scalar() {
        let cfg = OuterConfig {
            tau: Some(PlayerParam::PerPlayer(vec![0.1, 0.2])),
            ..OuterConfig::default()
        };
        let p = crate::problems::duopoly_shared();
        let err = solve_variational(&p, &DVector::zeros(2), &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let p = crate::problems::duopoly_shared();
        for cfg in [
            OuterConfig { tau: Some(PlayerParam::Uniform(1.0)), ..Default::default() },
            OuterConfig { gamma: Some(PlayerParam::Uniform(1.0)), ..Default::default() },
            OuterConfig { rho0: PlayerParam::Uniform(0.0), ..Default::default() },
            OuterConfig { eps: 0.0, ..Default::default() },
        ] {
            assert!(solve(&p, &DVector::zeros(2), &cfg).is_err());
        }
    }
}
