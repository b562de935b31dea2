//! Built-in test games with hand-derivable solutions and a grid-search
//! best-response oracle for small player dimensions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ConstraintFn, FnConstraints, FnObjective, GnepProblem, PlayerSpec, Point};

/// Seed of the random quadratic game `quad3`.
pub const QUAD3_SEED: u64 = 0x5eed_0003;

fn v1(a: f64) -> DVector<f64> {
    DVector::from_element(1, a)
}

/// `θ_ν(x) = (x_ν − target)²` for a player owning coordinate `idx` of `x`.
fn separable_square(idx: usize, n: usize, target: f64) -> FnObjective {
    FnObjective::new(
        move |x: &Point| (x[idx] - target).powi(2),
        move |x: &Point| v1(2.0 * (x[idx] - target)),
    )
    .with_hessian_rows(move |_: &Point| {
        let mut h = DMatrix::zeros(1, n);
        h[(0, idx)] = 2.0;
        h
    })
}

fn zero_objective(n: usize) -> FnObjective {
    FnObjective::new(|_: &Point| 0.0, |_: &Point| v1(0.0))
        .with_hessian_rows(move |_: &Point| DMatrix::zeros(1, n))
}

/// Two players, `θ₁ = (x₁−1)²`, `θ₂ = (x₂−½)²`, shared `x₁ + x₂ ≤ 1`.
///
/// Equilibria: `{(α, 1−α) : α ∈ [½, 1]}`; the variational equilibrium is
/// `(¾, ¼)` with shared multiplier `½`.
pub fn duopoly_shared() -> GnepProblem {
    let g: Arc<dyn ConstraintFn> = Arc::new(
        FnConstraints::new(
            1,
            |x: &Point| v1(x[0] + x[1] - 1.0),
            |_: &Point| DMatrix::from_element(2, 1, 1.0),
        )
        .with_hessians(|_: &Point| vec![DMatrix::zeros(2, 2)]),
    );
    let players = vec![
        PlayerSpec::new(1, separable_square(0, 2, 1.0)).with_g(g.clone()),
        PlayerSpec::new(1, separable_square(1, 2, 0.5)).with_g(g),
    ];
    GnepProblem::new("duopoly_shared", players, true).expect("valid catalog problem")
}

/// `min x` subject to `x² + 1 ≤ 0`: no feasible point; the feasibility game
/// is stationary only at `x = 0`.
pub fn infeasible_single() -> GnepProblem {
    let obj = FnObjective::new(|x: &Point| x[0], |_: &Point| v1(1.0))
        .with_hessian_rows(|_: &Point| DMatrix::zeros(1, 1));
    let g = FnConstraints::new(
        1,
        |x: &Point| v1(x[0] * x[0] + 1.0),
        |x: &Point| DMatrix::from_element(1, 1, 2.0 * x[0]),
    )
    .with_hessians(|_: &Point| vec![DMatrix::from_element(1, 1, 2.0)]);
    GnepProblem::new("infeasible_single", vec![PlayerSpec::new(1, obj).with_g(Arc::new(g))], false)
        .expect("valid catalog problem")
}

/// Constraint-only fixture: `c¹ = x₁`, `c² = x₁ + x₂²`.
pub fn example24a() -> GnepProblem {
    let c1 = FnConstraints::new(
        1,
        |x: &Point| v1(x[0]),
        |_: &Point| DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
    )
    .with_hessians(|_: &Point| vec![DMatrix::zeros(2, 2)]);
    let c2 = FnConstraints::new(
        1,
        |x: &Point| v1(x[0] + x[1] * x[1]),
        |x: &Point| DMatrix::from_column_slice(2, 1, &[1.0, 2.0 * x[1]]),
    )
    .with_hessians(|_: &Point| vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0])]);
    let players = vec![
        PlayerSpec::new(1, zero_objective(2)).with_g(Arc::new(c1)),
        PlayerSpec::new(1, zero_objective(2)).with_g(Arc::new(c2)),
    ];
    GnepProblem::new("example24a", players, false).expect("valid catalog problem")
}

/// Constraint-only fixture: `c¹ = 2x₁ − x₂² − 1`, `c² = 2x₂ − x₁² − 1`.
pub fn example24b() -> GnepProblem {
    let c1 = FnConstraints::new(
        1,
        |x: &Point| v1(2.0 * x[0] - x[1] * x[1] - 1.0),
        |x: &Point| DMatrix::from_column_slice(2, 1, &[2.0, -2.0 * x[1]]),
    )
    .with_hessians(|_: &Point| vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0])]);
    let c2 = FnConstraints::new(
        1,
        |x: &Point| v1(2.0 * x[1] - x[0] * x[0] - 1.0),
        |x: &Point| DMatrix::from_column_slice(2, 1, &[-2.0 * x[0], 2.0]),
    )
    .with_hessians(|_: &Point| vec![DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 0.0])]);
    let players = vec![
        PlayerSpec::new(1, zero_objective(2)).with_g(Arc::new(c1)),
        PlayerSpec::new(1, zero_objective(2)).with_g(Arc::new(c2)),
    ];
    GnepProblem::new("example24b", players, false).expect("valid catalog problem")
}

/// Three players with two variables each and strongly monotone quadratic
/// objectives `½ x^νᵀ Q_ν x^ν + x^νᵀ C_ν x^{-ν} + b_νᵀ x^ν` drawn from
/// [`QUAD3_SEED`], sharing `Σ x_i ≤ 1`.
pub fn quad3() -> GnepProblem {
    quad3_with_seed(QUAD3_SEED)
}

/// [`quad3`] with the coefficients drawn from another seed.
pub fn quad3_with_seed(seed: u64) -> GnepProblem {
    const N: usize = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Arc<dyn ConstraintFn> = Arc::new(
        FnConstraints::new(
            1,
            |x: &Point| v1(x.sum() - 1.0),
            |_: &Point| DMatrix::from_element(N, 1, 1.0),
        )
        .with_hessians(|_: &Point| vec![DMatrix::zeros(N, N)]),
    );
    let players = (0..3)
        .map(|v| {
            let off = 2 * v;
            let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let mut rows = DMatrix::from_fn(2, N, |_, _| rng.random_range(-0.1..0.1));
            let q = &b * b.transpose() + DMatrix::identity(2, 2);
            rows.view_mut((0, off), (2, 2)).copy_from(&q);
            let lin = DVector::from_fn(2, |_, _| rng.random_range(-3.0..-1.0));
            let (rows_g, lin_g) = (rows.clone(), lin.clone());
            let rows_h = rows.clone();
            let obj = FnObjective::new(
                move |x: &Point| {
                    let own = x.rows(off, 2);
                    let mut coupled = x.clone_owned();
                    coupled.rows_mut(off, 2).fill(0.0);
                    let q = rows.view((0, off), (2, 2));
                    0.5 * own.dot(&(q * own)) + own.dot(&(&rows * coupled)) + lin.dot(&own)
                },
                move |x: &Point| &rows_g * x + &lin_g,
            )
            .with_hessian_rows(move |_: &Point| rows_h.clone());
            PlayerSpec::new(2, obj).with_g(g.clone())
        })
        .collect();
    GnepProblem::new("quad3", players, true).expect("valid catalog problem")
}

/// Two players with distinct constraints: `θ₁ = (x₁−2)²` with
/// `x₁ + x₂ ≤ 1`, and `θ₂ = (x₂−2)²` with `x₁² + x₂² ≤ 2`.
///
/// The unique equilibrium has both constraints active:
/// `x₂ = (1+√3)/2`, `x₁ = 1 − x₂`.
pub fn nonshared2() -> GnepProblem {
    let g1 = FnConstraints::new(
        1,
        |x: &Point| v1(x[0] + x[1] - 1.0),
        |_: &Point| DMatrix::from_element(2, 1, 1.0),
    )
    .with_hessians(|_: &Point| vec![DMatrix::zeros(2, 2)]);
    let g2 = FnConstraints::new(
        1,
        |x: &Point| v1(x[0] * x[0] + x[1] * x[1] - 2.0),
        |x: &Point| DMatrix::from_column_slice(2, 1, &[2.0 * x[0], 2.0 * x[1]]),
    )
    .with_hessians(|_: &Point| vec![DMatrix::identity(2, 2) * 2.0]);
    let players = vec![
        PlayerSpec::new(1, separable_square(0, 2, 2.0)).with_g(Arc::new(g1)),
        PlayerSpec::new(1, separable_square(1, 2, 2.0)).with_g(Arc::new(g2)),
    ];
    GnepProblem::new("nonshared2", players, false).expect("valid catalog problem")
}

/// All built-in problems.
pub fn catalog() -> Vec<GnepProblem> {
    vec![
        duopoly_shared(),
        infeasible_single(),
        example24a(),
        example24b(),
        quad3(),
        nonshared2(),
    ]
}

pub fn by_name(name: &str) -> Option<GnepProblem> {
    match name {
        "duopoly_shared" => Some(duopoly_shared()),
        "infeasible_single" => Some(infeasible_single()),
        "example24a" => Some(example24a()),
        "example24b" => Some(example24b()),
        "quad3" => Some(quad3()),
        "nonshared2" => Some(nonshared2()),
        _ => None,
    }
}

/// Constraint violation tolerated for grid points in the oracle.
pub const ORACLE_FEAS_TOL: f64 = 1e-9;

/// Default violation tolerated at the point under test; matches the solver's
/// default feasibility tolerance so that its solutions can be checked.
pub const ORACLE_POINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// `bounds[ν][j] = (lo, hi)` for coordinate `j` of `x^ν`.
    pub bounds: Vec<Vec<(f64, f64)>>,
    pub resolution: usize,
    pub improvement_tol: f64,
    /// `x` is `NotApplicable` if some player's own constraint exceeds this.
    pub point_tol: f64,
}

impl OracleConfig {
    /// Same box `[lo, hi]` for every coordinate.
    pub fn uniform(problem: &GnepProblem, lo: f64, hi: f64) -> Self {
        Self {
            bounds: (0..problem.num_players())
                .map(|v| vec![(lo, hi); problem.player_dim(v)])
                .collect(),
            resolution: 401,
            improvement_tol: 1e-6,
            point_tol: ORACLE_POINT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BestResponse {
    Equilibrium,
    Improvable {
        player: usize,
        better_point: Vec<f64>,
        gain: f64,
    },
    /// `x` violates the constraints of `player`, so it cannot be an
    /// equilibrium.
    NotApplicable { player: usize },
}

/// Grid search over each player's own block with the others fixed.
///
/// A grid point counts as an improvement if it is feasible for the player and
/// lowers `θ_ν` by more than `improvement_tol + 10 · cell width`.
pub fn best_response_check(problem: &GnepProblem, x: &Point, cfg: &OracleConfig) -> Result<BestResponse> {
    problem.check_point(x)?;
    if cfg.resolution < 3 || !(cfg.point_tol >= 0.0) {
        return Err(Error::Config(
            "oracle resolution must be at least 3 and point_tol nonnegative".into(),
        ));
    }
    if cfg.bounds.len() != problem.num_players() {
        return Err(Error::Config("oracle bounds must be given for every player".into()));
    }
    for v in 0..problem.num_players() {
        let dim = problem.player_dim(v);
        if dim > 3 {
            return Err(Error::OracleDimension { player: v, dim });
        }
        let b = &cfg.bounds[v];
        if b.len() != dim || b.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(Error::Config(format!("invalid oracle bounds for player {v}")));
        }
    }

    let own_violation = |v: usize, y: &Point| -> Result<f64> {
        Ok(problem
            .g(v, y)?
            .iter()
            .chain(problem.h(v, y)?.iter())
            .fold(f64::NEG_INFINITY, |m, c| m.max(*c)))
    };

    for v in 0..problem.num_players() {
        if own_violation(v, x)? > cfg.point_tol {
            return Ok(BestResponse::NotApplicable { player: v });
        }
    }

    let res = cfg.resolution;
    for v in 0..problem.num_players() {
        let block = problem.block(v);
        let bounds = &cfg.bounds[v];
        let cells: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / (res - 1) as f64).collect();
        let slack = 10.0 * cells.iter().copied().fold(0.0, f64::max);
        let current = problem.theta(v, x)?;
        let mut best: Option<(f64, Point)> = None;
        let mut idx = vec![0usize; bounds.len()];
        let mut y = x.clone();
        'grid: loop {
            for (j, &i) in idx.iter().enumerate() {
                y[block.start + j] = bounds[j].0 + i as f64 * cells[j];
            }
            if own_violation(v, &y)? <= ORACLE_FEAS_TOL {
                let val = problem.theta(v, &y)?;
                if best.as_ref().is_none_or(|(b, _)| val < *b) {
                    best = Some((val, y.clone()));
                }
            }
            for j in 0..idx.len() {
                idx[j] += 1;
                if idx[j] < res {
                    continue 'grid;
                }
                idx[j] = 0;
            }
            break;
        }
        if let Some((val, point)) = best {
            let gain = current - val;
            if gain > cfg.improvement_tol + slack {
                return Ok(BestResponse::Improvable {
                    player: v,
                    better_point: point.as_slice().to_vec(),
                    gain,
                });
            }
        }
    }
    Ok(BestResponse::Equilibrium)
}
