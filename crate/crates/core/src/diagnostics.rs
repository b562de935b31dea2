//! Numerical checks for KKT points, stationarity of the feasibility game
//! (each player minimizing `‖g_+^ν(x)‖²` subject to `h^ν(x) <= 0`), and the
//! player-wise extended Mangasarian–Fromovitz condition.
//!
//! Player-wise CPLD quantifies over a neighbourhood and has no pointwise
//! certificate; only its building block [`positive_linear_independence`]
//! is provided.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GnepProblem, MultiplierSet, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub complementarity: f64,
}

/// Per-player `‖∇θ + ∇g λ + ∇h μ‖_∞` and `‖min{-c, (λ, μ)}‖_∞`.
pub fn kkt_residual(
    problem: &GnepProblem,
    x: &Point,
    multipliers: &MultiplierSet,
) -> Result<Vec<KktResidual>> {
    multipliers.check_shapes(problem)?;
    (0..problem.num_players())
        .map(|v| {
            let lam = multipliers.lambda.get(v);
            let mu = multipliers.mu.get(v);
            let stat = problem.theta_grad(v, x)?
                + problem.g_own_grad(v, x)? * lam
                + problem.h_own_grad(v, x)? * mu;
            let g = problem.g(v, x)?;
            let h = problem.h(v, x)?;
            let comp = g
                .iter()
                .zip(lam.iter())
                .chain(h.iter().zip(mu.iter()))
                .map(|(c, m)| (-c).min(*m).abs())
                .fold(0.0, f64::max);
            Ok(KktResidual {
                stationarity: stat.amax(),
                complementarity: comp,
            })
        })
        .collect()
}

/// KKT residual of the feasibility game for each player:
/// `max(‖2 Σ_i g_{i,+} ∇_{x^ν} g_i + ∇_{x^ν} h μ̂‖_∞, ‖min{-h, μ̂}‖_∞)`.
///
/// `mu_hat` may be empty when no player has retained constraints.
pub fn feasibility_gnep_residual(
    problem: &GnepProblem,
    x: &Point,
    mu_hat: &[DVector<f64>],
) -> Result<Vec<f64>> {
    (0..problem.num_players())
        .map(|v| {
            let p = problem.h_count(v);
            let empty = DVector::zeros(0);
            let mu = match mu_hat.get(v) {
                Some(m) => m,
                None if p == 0 => &empty,
                None => {
                    return Err(Error::Dimension {
                        expected: problem.num_players(),
                        got: mu_hat.len(),
                    })
                }
            };
            if mu.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: mu.len(),
                });
            }
            let g_plus = problem.g(v, x)?.map(|a| a.max(0.0));
            let mut grad = problem.g_own_grad(v, x)? * g_plus * 2.0;
            let mut comp: f64 = 0.0;
            if p > 0 {
                grad += problem.h_own_grad(v, x)? * mu;
                let h = problem.h(v, x)?;
                comp = h.zip_map(mu, |hi, mi| (-hi).min(mi)).amax();
            }
            Ok(grad.amax().max(comp))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PositiveDependence {
    Independent { sigma: f64 },
    /// Simplex weights with `‖V λ‖ = sigma <= tol`.
    Dependent { weights: Vec<f64>, sigma: f64 },
}

impl PositiveDependence {
    pub fn is_dependent(&self) -> bool {
        matches!(self, PositiveDependence::Dependent { .. })
    }

    pub fn sigma(&self) -> f64 {
        match self {
            PositiveDependence::Independent { sigma } | PositiveDependence::Dependent { sigma, .. } => {
                *sigma
            }
        }
    }
}

/// Minimizer of `‖V_S μ‖` over the affine hull `Σμ = 1` of the columns in
/// `set`, via least squares on the differences to the first column.
fn affine_min(v: &DMatrix<f64>, set: &[usize]) -> DVector<f64> {
    let base = v.column(set[0]).into_owned();
    let s = set.len();
    if s == 1 {
        return DVector::from_element(1, 1.0);
    }
    let d = DMatrix::from_fn(v.nrows(), s - 1, |r, c| v[(r, set[c + 1])] - base[r]);
    let svd = d.svd(true, true);
    let cut = f64::EPSILON * svd.singular_values.max() * (v.nrows().max(s)) as f64;
    let t = svd
        .solve(&-&base, cut)
        .unwrap_or_else(|_| DVector::zeros(s - 1));
    let mut mu = DVector::zeros(s);
    mu[0] = 1.0 - t.sum();
    mu.rows_mut(1, s - 1).copy_from(&t);
    mu
}

/// Minimum-norm point of the convex hull of the columns (Wolfe's method):
/// returns the simplex weights and `σ = min{‖Vλ‖ : λ >= 0, Σλ = 1}`.
pub fn hull_min_norm(v: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let k = v.ncols();
    let norms: Vec<f64> = v.column_iter().map(|c| c.norm()).collect();
    let scale = norms.iter().copied().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok((DVector::from_element(k, 1.0 / k as f64), 0.0));
    }
    let first = (0..k).min_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap_or(0);
    let mut set = vec![first];
    let mut lam = vec![1.0];
    let mut x = v.column(first).into_owned();
    for _ in 0..(50 * k + 100) {
        let xn = x.norm();
        if xn <= 1e-15 * scale {
            break;
        }
        let dots: Vec<f64> = v.column_iter().map(|c| c.dot(&x)).collect();
        let j = (0..k).min_by(|&a, &b| dots[a].total_cmp(&dots[b])).unwrap_or(0);
        if dots[j] >= xn * xn - 1e-14 * scale * xn || set.contains(&j) {
            break;
        }
        set.push(j);
        lam.push(0.0);
        for _ in 0..=k {
            let mu = affine_min(v, &set);
            if mu.iter().all(|&m| m > 0.0) {
                lam = mu.as_slice().to_vec();
                break;
            }
            let theta = (0..set.len())
                .filter(|&i| mu[i] <= 0.0)
                .map(|i| lam[i] / (lam[i] - mu[i]))
                .fold(1.0, f64::min);
            let mut leaving = None;
            let mut smallest = f64::INFINITY;
            for i in 0..set.len() {
                lam[i] += theta * (mu[i] - lam[i]);
                if mu[i] <= 0.0 && lam[i] < smallest {
                    smallest = lam[i];
                    leaving = Some(i);
                }
            }
            let mut keep: Vec<bool> = lam.iter().map(|&l| l > 0.0).collect();
            if let Some(i) = leaving {
                keep[i] = false;
            }
            let mut i = 0;
            set.retain(|_| {
                i += 1;
                keep[i - 1]
            });
            let mut i = 0;
            lam.retain(|_| {
                i += 1;
                keep[i - 1]
            });
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= total);
        }
        x = set
            .iter()
            .zip(&lam)
            .fold(DVector::zeros(v.nrows()), |acc, (&j, &l)| acc + v.column(j) * l);
    }
    let mut weights = DVector::zeros(k);
    for (&j, &l) in set.iter().zip(&lam) {
        weights[j] += l;
    }
    let sigma = (v * &weights).norm();
    Ok((weights, sigma))
}

/// Decides whether the columns of `v` are positively linearly dependent.
pub fn positive_linear_independence(v: &DMatrix<f64>, tol: f64) -> Result<PositiveDependence> {
    if v.ncols() == 0 {
        return Err(Error::Config("positive linear independence needs at least one vector".into()));
    }
    let (weights, sigma) = hull_min_norm(v)?;
    Ok(if sigma <= tol {
        PositiveDependence::Dependent {
            weights: weights.as_slice().to_vec(),
            sigma,
        }
    } else {
        PositiveDependence::Independent { sigma }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EmfcqVerdict {
    /// `d` with `∇_{x^ν} c_i(x)ᵀ d < 0` for every `c_i(x) >= -tol`.
    Holds { direction: Vec<f64> },
    /// Weights of a vanishing nonnegative combination of the gradients.
    Fails { weights: Vec<f64> },
    /// Positively independent, but no direction passed verification.
    Inconclusive { sigma: f64 },
}

impl EmfcqVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, EmfcqVerdict::Holds { .. })
    }

    pub fn fails(&self) -> bool {
        matches!(self, EmfcqVerdict::Fails { .. })
    }
}

fn strict_descent(v: &DMatrix<f64>, d: &DVector<f64>, tol: f64) -> bool {
    let bound = -tol * d.norm();
    d.norm() > 0.0 && v.tr_mul(d).iter().all(|&s| s < bound)
}

/// Extended MFCQ for player `v` at `x`, using partial gradients with respect
/// to `x^ν` of all components of `c^ν = (g^ν, h^ν)` with `c_i >= -tol`.
pub fn emfcq_check(problem: &GnepProblem, v: usize, x: &Point, tol: f64) -> Result<EmfcqVerdict> {
    problem.check_player(v)?;
    let c_vals: Vec<f64> = problem
        .g(v, x)?
        .iter()
        .chain(problem.h(v, x)?.iter())
        .copied()
        .collect();
    let g_own = problem.g_own_grad(v, x)?;
    let h_own = problem.h_own_grad(v, x)?;
    let active: Vec<usize> = (0..c_vals.len()).filter(|&i| c_vals[i] >= -tol).collect();
    let nv = problem.player_dim(v);
    if active.is_empty() {
        return Ok(EmfcqVerdict::Holds {
            direction: vec![0.0; nv],
        });
    }
    let mut cols = DMatrix::zeros(nv, active.len());
    for (k, &i) in active.iter().enumerate() {
        if i < g_own.ncols() {
            cols.set_column(k, &g_own.column(i));
        } else {
            cols.set_column(k, &h_own.column(i - g_own.ncols()));
        }
    }
    verdict_for_columns(&cols, tol)
}

/// EMFCQ verdict for an explicit set of active gradient columns.
pub fn verdict_for_columns(cols: &DMatrix<f64>, tol: f64) -> Result<EmfcqVerdict> {
    let (weights, sigma) = hull_min_norm(cols)?;
    if sigma <= tol {
        return Ok(EmfcqVerdict::Fails {
            weights: weights.as_slice().to_vec(),
        });
    }
    // Least-squares direction: d = -V w with VᵀV w ≈ 1.
    let gram = cols.tr_mul(cols);
    let ones = DVector::from_element(cols.ncols(), 1.0);
    let svd = gram.clone().svd(true, true);
    let cut = f64::EPSILON * svd.singular_values.max() * gram.nrows() as f64;
    if let Ok(w) = svd.solve(&ones, cut) {
        let d = -(cols * w.column(0));
        if strict_descent(cols, &d, tol) {
            return Ok(EmfcqVerdict::Holds {
                direction: d.as_slice().to_vec(),
            });
        }
    }
    // The negated minimum-norm hull point p satisfies v_iᵀp >= ‖p‖².
    let d = -(cols * weights);
    if strict_descent(cols, &d, tol) {
        return Ok(EmfcqVerdict::Holds {
            direction: d.as_slice().to_vec(),
        });
    }
    Ok(EmfcqVerdict::Inconclusive { sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PointClass {
    FeasibleKkt,
    InfeasibleStationary,
    Neither,
}

fn max_violation(problem: &GnepProblem, x: &Point) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for v in 0..problem.num_players() {
        for c in problem.g(v, x)?.iter().chain(problem.h(v, x)?.iter()) {
            worst = worst.max(c.max(0.0));
        }
    }
    Ok(worst)
}

/// Classifies `(x, λ, μ)` as a feasible KKT point, an infeasible stationary
/// point of the feasibility game, or neither.
pub fn classify_point(
    problem: &GnepProblem,
    x: &Point,
    multipliers: &MultiplierSet,
    eps: f64,
    eps_feas: f64,
) -> Result<PointClass> {
    let violation = max_violation(problem, x)?;
    if violation <= eps {
        let kkt = kkt_residual(problem, x, multipliers)?;
        if kkt
            .iter()
            .all(|r| r.stationarity <= eps && r.complementarity <= eps)
        {
            return Ok(PointClass::FeasibleKkt);
        }
        return Ok(PointClass::Neither);
    }
    let mu_hat = multipliers.mu.to_vec();
    let feas = feasibility_gnep_residual(problem, x, &mu_hat)?;
    if feas.iter().all(|&r| r <= eps_feas) {
        Ok(PointClass::InfeasibleStationary)
    } else {
        Ok(PointClass::Neither)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsVerdict {
    pub kkt: Vec<KktResidual>,
    pub feasibility_gnep_residual: Vec<f64>,
    pub emfcq: Vec<EmfcqVerdict>,
    pub class: PointClass,
    pub tol: f64,
    pub eps: f64,
    pub eps_feas: f64,
}

/// Runs every check at `(x, λ, μ)`.
pub fn diagnose(
    problem: &GnepProblem,
    x: &Point,
    multipliers: &MultiplierSet,
    eps: f64,
    eps_feas: f64,
    tol: f64,
) -> Result<DiagnosticsVerdict> {
    let mu_hat = multipliers.mu.to_vec();
    Ok(DiagnosticsVerdict {
        kkt: kkt_residual(problem, x, multipliers)?,
        feasibility_gnep_residual: feasibility_gnep_residual(problem, x, &mu_hat)?,
        emfcq: (0..problem.num_players())
            .map(|v| emfcq_check(problem, v, x, tol))
            .collect::<Result<_>>()?,
        class: classify_point(problem, x, multipliers, eps, eps_feas)?,
        tol,
        eps,
        eps_feas,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{FnConstraints, FnObjective, PerPlayer, PlayerSpec};

    fn cols(data: &[&[f64]]) -> DMatrix<f64> {
        let rows = data[0].len();
        DMatrix::from_fn(rows, data.len(), |r, c| data[c][r])
    }

    #[test]
    fn cancelling_pair_is_dependent() {
        let res = positive_linear_independence(&cols(&[&[1.0, 0.0], &[-1.0, 0.0]]), 1e-8).unwrap();
        match res {
            PositiveDependence::Dependent { weights, sigma } => {
                assert!(sigma <= 1e-8);
                assert!((weights[0] - 0.5).abs() < 1e-9 && (weights[1] - 0.5).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_column_sigma_is_its_norm() {
        let res = positive_linear_independence(&cols(&[&[1.0, 0.0]]), 1e-8).unwrap();
        assert!(!res.is_dependent());
        assert!((res.sigma() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pair_sigma() {
        let res = positive_linear_independence(&cols(&[&[1.0, 0.0], &[0.0, 1.0]]), 1e-8).unwrap();
        assert!(!res.is_dependent());
        assert!((res.sigma() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn zero_column_is_dependent() {
        assert!(positive_linear_independence(&cols(&[&[0.0]]), 1e-8).unwrap().is_dependent());
    }

    #[test]
    fn direction_fallback_for_rank_deficient_gram() {
        // (1,0), (0,1), (1,1): positively independent, 1 not in range(VᵀV)
        let v = cols(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        match verdict_for_columns(&v, 1e-8).unwrap() {
            EmfcqVerdict::Holds { direction } => {
                let d = DVector::from_vec(direction);
                assert!(v.tr_mul(&d).iter().all(|&s| s < 0.0));
            }
            other => panic!("{other:?}"),
        }
    }

    fn infeasible() -> GnepProblem {
        let obj = FnObjective::new(|x: &Point| x[0], |_: &Point| DVector::from_element(1, 1.0));
        let g = FnConstraints::new(
            1,
            |x: &Point| DVector::from_element(1, x[0] * x[0] + 1.0),
            |x: &Point| DMatrix::from_element(1, 1, 2.0 * x[0]),
        );
        GnepProblem::new("inf", vec![PlayerSpec::new(1, obj).with_g(Arc::new(g))], false).unwrap()
    }

    fn one_player_mult(l: f64) -> MultiplierSet {
        MultiplierSet::from_lambda(PerPlayer::Each(vec![DVector::from_element(1, l)]))
    }

    #[test]
    fn feasibility_residual_examples() {
        let p = infeasible();
        assert_eq!(feasibility_gnep_residual(&p, &DVector::zeros(1), &[]).unwrap(), vec![0.0]);
        assert_eq!(
            feasibility_gnep_residual(&p, &DVector::from_element(1, 1.0), &[]).unwrap(),
            vec![8.0]
        );
    }

    #[test]
    fn classify_infeasible_problem() {
        let p = infeasible();
        let m = one_player_mult(0.0);
        assert_eq!(
            classify_point(&p, &DVector::zeros(1), &m, 1e-8, 1e-6).unwrap(),
            PointClass::InfeasibleStationary
        );
        assert_eq!(
            classify_point(&p, &DVector::from_element(1, 1.0), &m, 1e-8, 1e-6).unwrap(),
            PointClass::Neither
        );
    }

    #[test]
    fn kkt_residual_examples() {
        // c = x - 2 at x = 0 (value -2), theta = 0
        let obj = FnObjective::new(|_: &Point| 0.0, |_: &Point| DVector::zeros(1));
        let g = FnConstraints::new(
            1,
            |x: &Point| DVector::from_element(1, x[0] - 2.0),
            |_: &Point| DMatrix::from_element(1, 1, 1.0),
        );
        let p = GnepProblem::new("k", vec![PlayerSpec::new(1, obj).with_g(Arc::new(g))], false).unwrap();
        let r = kkt_residual(&p, &DVector::zeros(1), &one_player_mult(0.0)).unwrap();
        assert_eq!(r[0], KktResidual { stationarity: 0.0, complementarity: 0.0 });
        // c = 0 at x = 2 with a negative multiplier
        let r = kkt_residual(&p, &DVector::from_element(1, 2.0), &one_player_mult(-1.0)).unwrap();
        assert_eq!(r[0].complementarity, 1.0);
    }

    #[test]
    fn no_active_constraints_holds_vacuously() {
        let p = infeasible();
        // g = x^2 + 1 is never <= 0; use a problem with an inactive constraint instead
        let obj = FnObjective::new(|_: &Point| 0.0, |_: &Point| DVector::zeros(1));
        let g = FnConstraints::new(
            1,
            |x: &Point| DVector::from_element(1, x[0] - 5.0),
            |_: &Point| DMatrix::from_element(1, 1, 1.0),
        );
        let q = GnepProblem::new("q", vec![PlayerSpec::new(1, obj).with_g(Arc::new(g))], false).unwrap();
        assert_eq!(
            emfcq_check(&q, 0, &DVector::zeros(1), 1e-8).unwrap(),
            EmfcqVerdict::Holds { direction: vec![0.0] }
        );
        // violated constraint with zero gradient at the origin fails
        assert!(emfcq_check(&p, 0, &DVector::zeros(1), 1e-8).unwrap().fails());
    }
}
