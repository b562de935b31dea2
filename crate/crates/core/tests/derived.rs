use gnep::alcore::{assemble_f, PenaltyState, PenalizedSystem, KinkRule};
use gnep::diagnostics::{classify_point, kkt_residual, PointClass};
use gnep::model::{validate_problem, MultiplierSet, PerPlayer};
use gnep::outer::{initial_multipliers_shared, solve, solve_variational, stopping_residuals, OuterConfig, Status};
use gnep::problems;
use gnep::subsolver::{lm_solve, lm_step, spd_solve, LmConfig, LmStatus, NonlinearSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_vec(xs.to_vec())
}

fn duopoly_equilibrium() -> (DVector<f64>, MultiplierSet) {
    let m = MultiplierSet {
        lambda: PerPlayer::shared(v(&[0.5]), 2),
        mu: PerPlayer::shared(DVector::zeros(0), 2),
    };
    (v(&[0.75, 0.25]), m)
}

#[test]
fn catalog_validates_at_random_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in problems::catalog() {
        let probes: Vec<_> = (0..10)
            .map(|_| DVector::from_fn(p.dim(), |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let report = validate_problem(&p, &probes, 1e-5).unwrap();
        assert!(report.passed(), "{}: {:?}", p.name(), report.worst());
    }
}

#[test]
fn example24b_gradients_at_fixture_point() {
    let p = problems::example24b();
    let x = v(&[1.0, 1.0]);
    assert_eq!(p.g_grad(0, &x).unwrap().as_slice(), &[2.0, -2.0]);
    assert_eq!(p.g_grad(1, &x).unwrap().as_slice(), &[-2.0, 2.0]);
    assert!(validate_problem(&p, &[x], 1e-6).unwrap().passed());
}

#[test]
fn duopoly_equilibrium_residuals() {
    let p = problems::duopoly_shared();
    let (x, m) = duopoly_equilibrium();
    let r = stopping_residuals(&p, &x, &m.lambda).unwrap();
    assert!(r.r_f <= 1e-12 && r.r_o <= 1e-12 && r.r_c <= 1e-12, "{r:?}");
    for k in kkt_residual(&p, &x, &m).unwrap() {
        assert!(k.stationarity <= 1e-12 && k.complementarity <= 1e-12);
    }
    assert_eq!(classify_point(&p, &x, &m, 1e-8, 1e-6).unwrap(), PointClass::FeasibleKkt);
}

#[test]
fn duopoly_f_vanishes_at_converged_state() {
    let p = problems::duopoly_shared();
    let rep = solve_variational(&p, &DVector::zeros(2), &OuterConfig::default()).unwrap();
    let (x, m) = duopoly_equilibrium();
    let state = PenaltyState::new(m.lambda, PerPlayer::shared(rep.state.rho(0), 2), 1e6).unwrap();
    let f = assemble_f(&p, &x, &state).unwrap();
    assert!(f.amax() <= 1e-8, "{f}");
}

#[test]
fn lm_step_solves_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let jac = DMatrix::from_fn(4, 4, |i, j| if i == j { 3.0 } else { 0.0 } + rng.random_range(-1.0..1.0));
        let fx = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let alpha = rng.random_range(1e-3..10.0);
        let d = lm_step(&jac, &fx, alpha).unwrap();
        let lhs = (jac.tr_mul(&jac) + DMatrix::identity(4, 4) * (alpha * fx.norm())) * &d;
        assert!((lhs + jac.tr_mul(&fx)).norm() <= 1e-10);
        assert_eq!(d, lm_step(&jac, &fx, alpha).unwrap());
    }
}

#[test]
fn spd_solve_back_substitution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let m = a.tr_mul(&a) + DMatrix::identity(5, 5);
        let rhs = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let sol = spd_solve(&m, &rhs).unwrap();
        assert!((&m * sol - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }
}

struct Linear;

impl NonlinearSystem for Linear {
    fn dim(&self) -> usize {
        1
    }
    fn residual(&self, x: &DVector<f64>) -> gnep::Result<DVector<f64>> {
        Ok(v(&[2.0 * (x[0] - 3.0)]))
    }
    fn jacobian(&self, _: &DVector<f64>) -> gnep::Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, 2.0))
    }
}

#[test]
fn lm_converges_on_linear_residual() {
    let res = lm_solve(&Linear, &v(&[0.0]), &LmConfig::default()).unwrap();
    assert_eq!(res.status, LmStatus::Converged);
    assert!((res.x[0] - 3.0).abs() <= 1e-8);
    assert!(res.iterations <= 10);
}

#[test]
fn duopoly_first_inner_subproblem() {
    let p = problems::duopoly_shared();
    let x0 = DVector::zeros(2);
    let lambda0 = initial_multipliers_shared(&p, &x0).unwrap().lambda;
    let state = PenaltyState::new(lambda0, PerPlayer::shared(1.0, 2), 1e6).unwrap();
    let sys = PenalizedSystem::new(&p, &state, KinkRule::default()).unwrap();
    let res = lm_solve(&sys, &x0, &LmConfig::default()).unwrap();
    assert_eq!(res.status, LmStatus::Converged);
    assert!(res.final_residual <= 1e-8);
    assert!(res.log.iter().all(|it| it.accepted && it.trial_residual < it.residual));
    let trace = solve_variational(&p, &x0, &OuterConfig::default()).unwrap().trace;
    assert_eq!(trace[1].x, res.x);
}

#[test]
fn general_mode_lands_on_equilibrium_segment() {
    let p = problems::duopoly_shared();
    let rep = solve(&p, &DVector::zeros(2), &OuterConfig::default()).unwrap();
    assert_eq!(rep.status, Status::SolvedKKT);
    assert!((rep.x[0] + rep.x[1] - 1.0).abs() <= 1e-8);
    assert!(rep.x[0] >= 0.5 - 1e-8 && rep.x[0] <= 1.0 + 1e-8);
    assert!(rep.residuals.all_within(1e-8));
}

#[test]
fn quad3_regression_both_modes() {
    let p = problems::quad3();
    let cfg = OuterConfig::default();
    let mut variational_points = Vec::new();
    for s in [0.0, 1.0, 10.0] {
        let x0 = DVector::from_element(6, s);
        let g = solve(&p, &x0, &cfg).unwrap();
        let var = solve_variational(&p, &x0, &cfg).unwrap();
        assert_eq!(g.status, Status::SolvedKKT, "general from {s}");
        assert_eq!(var.status, Status::SolvedKKT, "variational from {s}");
        variational_points.push(var.x);
    }
    for x in &variational_points[1..] {
        assert!((x - &variational_points[0]).amax() <= 1e-6);
    }
}

#[test]
fn nonshared2_reaches_closed_form_equilibrium() {
    let p = problems::nonshared2();
    let x2 = (1.0 + 3f64.sqrt()) / 2.0;
    for s in [0.0, 1.0, 10.0] {
        let rep = solve(&p, &DVector::from_element(2, s), &OuterConfig::default()).unwrap();
        assert_eq!(rep.status, Status::SolvedKKT, "from {s}");
        assert!((rep.x[0] - (1.0 - x2)).abs() <= 1e-6 && (rep.x[1] - x2).abs() <= 1e-6);
        let lam: Vec<f64> = rep.multipliers.lambda.iter().map(|l| l[0]).collect();
        assert!((lam[0] - 2.0 * (2.0 - (1.0 - x2))).abs() <= 1e-5, "{lam:?}");
        assert!((lam[1] - (2.0 - x2) / x2).abs() <= 1e-5, "{lam:?}");
    }
}

#[test]
fn solved_status_is_recheckable() {
    for p in [problems::duopoly_shared(), problems::quad3(), problems::nonshared2()] {
        let rep = solve(&p, &DVector::zeros(p.dim()), &OuterConfig::default()).unwrap();
        assert_eq!(rep.status, Status::SolvedKKT);
        let r = stopping_residuals(&p, &rep.x, &rep.multipliers.lambda).unwrap();
        assert_eq!(r, rep.residuals);
        assert!(r.all_within(1e-8));
        assert_eq!(
            classify_point(&p, &rep.x, &rep.multipliers, 1e-8, 1e-6).unwrap(),
            PointClass::FeasibleKkt
        );
    }
}

#[test]
fn variational_trace_is_structurally_shared() {
    let p = problems::quad3();
    let rep = solve_variational(&p, &DVector::zeros(6), &OuterConfig::default()).unwrap();
    assert!(rep.multipliers.lambda.is_shared());
    assert!(rep.state.is_shared());
    for rec in &rep.trace {
        assert!(rec.lambda.is_shared() && rec.u.is_shared() && rec.rho.is_shared());
    }
}
