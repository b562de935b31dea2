//! Problem representation: N players with block-structured variables,
//! objective callbacks and a split of the constraints into a penalized part
//! `g` and an optional retained part `h`.
//!
//! Player indices are zero-based throughout the API.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Callback, Error, Result};

/// A joint strategy vector `x = (x^1, ..., x^N)`.
pub type Point = DVector<f64>;

/// Forward-difference step used when second derivatives are not supplied.
pub const HESSIAN_FD_STEP: f64 = 1e-7;

/// Central-difference step used by [`validate_problem`].
pub const VALIDATION_FD_STEP: f64 = 1e-6;

/// Objective `θ_ν` of a single player.
pub trait ObjectiveFn: Send + Sync {
    fn value(&self, x: &Point) -> f64;

    /// Partial gradient with respect to the player's own block, length `n_ν`.
    fn gradient(&self, x: &Point) -> DVector<f64>;

    /// Row block `∇²_{x^ν x} θ_ν(x)` of shape `n_ν × n`. `None` selects the
    /// finite-difference fallback.
    fn hessian_rows(&self, _x: &Point) -> Option<DMatrix<f64>> {
        None
    }
}

/// A vector-valued constraint map `c(x) <= 0` with `len()` components.
///
/// Gradients and Hessians are taken with respect to the full `x`, so a single
/// instance can be shared by every player of a jointly-convex game.
pub trait ConstraintFn: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn values(&self, x: &Point) -> DVector<f64>;

    /// Transposed Jacobian, shape `n × len()`; column `i` is `∇c_i(x)`.
    fn gradients(&self, x: &Point) -> DMatrix<f64>;

    /// Full `n × n` Hessian of every component, or `None` for the
    /// finite-difference fallback.
    fn hessians(&self, _x: &Point) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
type MatricesFn = Arc<dyn Fn(&Point) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Objective assembled from closures.
#[derive(Clone)]
pub struct FnObjective {
    value: ScalarFn,
    gradient: VectorFn,
    hessian_rows: Option<MatrixFn>,
}

impl FnObjective {
    pub fn new<V, G>(value: V, gradient: G) -> Self
    where
        V: Fn(&Point) -> f64 + Send + Sync + 'static,
        G: Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian_rows: None,
        }
    }

    pub fn with_hessian_rows<H>(mut self, hessian_rows: H) -> Self
    where
        H: Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hessian_rows = Some(Arc::new(hessian_rows));
        self
    }
}

impl ObjectiveFn for FnObjective {
    fn value(&self, x: &Point) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &Point) -> DVector<f64> {
        (self.gradient)(x)
    }

    fn hessian_rows(&self, x: &Point) -> Option<DMatrix<f64>> {
        self.hessian_rows.as_ref().map(|h| h(x))
    }
}

/// Constraint map assembled from closures.
#[derive(Clone)]
pub struct FnConstraints {
    count: usize,
    values: VectorFn,
    gradients: MatrixFn,
    hessians: Option<MatricesFn>,
}

impl FnConstraints {
    pub fn new<V, G>(count: usize, values: V, gradients: G) -> Self
    where
        V: Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            count,
            values: Arc::new(values),
            gradients: Arc::new(gradients),
            hessians: None,
        }
    }

    pub fn with_hessians<H>(mut self, hessians: H) -> Self
    where
        H: Fn(&Point) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hessians = Some(Arc::new(hessians));
        self
    }
}

impl ConstraintFn for FnConstraints {
    fn len(&self) -> usize {
        self.count
    }

    fn values(&self, x: &Point) -> DVector<f64> {
        (self.values)(x)
    }

    fn gradients(&self, x: &Point) -> DMatrix<f64> {
        (self.gradients)(x)
    }

    fn hessians(&self, x: &Point) -> Option<Vec<DMatrix<f64>>> {
        self.hessians.as_ref().map(|h| h(x))
    }
}

/// `g` stacked on top of `h`, used to fold retained constraints into the
/// penalized part.
struct Stacked {
    upper: Arc<dyn ConstraintFn>,
    lower: Arc<dyn ConstraintFn>,
}

impl ConstraintFn for Stacked {
    fn len(&self) -> usize {
        self.upper.len() + self.lower.len()
    }

    fn values(&self, x: &Point) -> DVector<f64> {
        let a = self.upper.values(x);
        let b = self.lower.values(x);
        DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
    }

    fn gradients(&self, x: &Point) -> DMatrix<f64> {
        let a = self.upper.gradients(x);
        let b = self.lower.gradients(x);
        let mut out = DMatrix::zeros(x.len(), a.ncols() + b.ncols());
        out.columns_mut(0, a.ncols()).copy_from(&a);
        out.columns_mut(a.ncols(), b.ncols()).copy_from(&b);
        out
    }

    fn hessians(&self, x: &Point) -> Option<Vec<DMatrix<f64>>> {
        let mut a = self.upper.hessians(x)?;
        a.extend(self.lower.hessians(x)?);
        Some(a)
    }
}

/// One player: block dimension, objective, and the constraint split.
#[derive(Clone)]
pub struct PlayerSpec {
    pub dim: usize,
    pub objective: Arc<dyn ObjectiveFn>,
    pub g: Option<Arc<dyn ConstraintFn>>,
    pub h: Option<Arc<dyn ConstraintFn>>,
}

impl PlayerSpec {
    pub fn new(dim: usize, objective: impl ObjectiveFn + 'static) -> Self {
        Self {
            dim,
            objective: Arc::new(objective),
            g: None,
            h: None,
        }
    }

    pub fn with_g(mut self, g: Arc<dyn ConstraintFn>) -> Self {
        self.g = Some(g);
        self
    }

    pub fn with_h(mut self, h: Arc<dyn ConstraintFn>) -> Self {
        self.h = Some(h);
        self
    }

    pub fn g_count(&self) -> usize {
        self.g.as_ref().map_or(0, |g| g.len())
    }

    pub fn h_count(&self) -> usize {
        self.h.as_ref().map_or(0, |h| h.len())
    }
}

impl fmt::Debug for PlayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlayerSpec")
            .field("dim", &self.dim)
            .field("g_count", &self.g_count())
            .field("h_count", &self.h_count())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    G,
    H,
}

impl Side {
    fn callbacks(self) -> (Callback, Callback, Callback) {
        match self {
            Side::G => (Callback::G, Callback::GGradient, Callback::GHessian),
            Side::H => (Callback::H, Callback::HGradient, Callback::HHessian),
        }
    }
}

/// An N-player generalized Nash equilibrium problem.
#[derive(Clone)]
pub struct GnepProblem {
    name: String,
    players: Vec<PlayerSpec>,
    offsets: Vec<usize>,
    shared_constraints: bool,
}

impl fmt::Debug for GnepProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GnepProblem")
            .field("name", &self.name)
            .field("players", &self.players)
            .field("shared_constraints", &self.shared_constraints)
            .finish()
    }
}

impl GnepProblem {
    pub fn new(
        name: impl Into<String>,
        players: Vec<PlayerSpec>,
        shared_constraints: bool,
    ) -> Result<Self> {
        if players.is_empty() {
            return Err(Error::Problem("a game needs at least one player".into()));
        }
        if let Some(v) = players.iter().position(|p| p.dim == 0) {
            return Err(Error::Problem(format!("player {v} has dimension 0")));
        }
        if shared_constraints {
            let (m, p) = (players[0].g_count(), players[0].h_count());
            if players.iter().any(|q| q.g_count() != m || q.h_count() != p) {
                return Err(Error::Problem(
                    "shared constraints require equal g and h counts for all players".into(),
                ));
            }
        }
        let mut offsets = Vec::with_capacity(players.len() + 1);
        offsets.push(0);
        for p in &players {
            offsets.push(offsets.last().unwrap() + p.dim);
        }
        Ok(Self {
            name: name.into(),
            players,
            offsets,
            shared_constraints,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn players(&self) -> &[PlayerSpec] {
        &self.players
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    /// Total dimension `n`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn shared_constraints(&self) -> bool {
        self.shared_constraints
    }

    pub fn player_dim(&self, v: usize) -> usize {
        self.players[v].dim
    }

    pub fn g_count(&self, v: usize) -> usize {
        self.players[v].g_count()
    }

    pub fn h_count(&self, v: usize) -> usize {
        self.players[v].h_count()
    }

    pub fn total_g(&self) -> usize {
        self.players.iter().map(PlayerSpec::g_count).sum()
    }

    pub fn total_h(&self) -> usize {
        self.players.iter().map(PlayerSpec::h_count).sum()
    }

    pub fn has_h(&self) -> bool {
        self.total_h() > 0
    }

    /// Index range of `x^ν` inside `x`.
    pub fn block(&self, v: usize) -> Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn check_player(&self, v: usize) -> Result<()> {
        if v < self.players.len() {
            Ok(())
        } else {
            Err(Error::PlayerIndex {
                index: v,
                players: self.players.len(),
            })
        }
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    /// Same game with every `h^ν` moved into `g^ν`. Shared constraint maps
    /// stay shared.
    pub fn fully_penalized(&self) -> GnepProblem {
        if !self.has_h() {
            return self.clone();
        }
        let fold = |p: &PlayerSpec| -> Option<Arc<dyn ConstraintFn>> {
            match (&p.g, &p.h) {
                (Some(g), Some(h)) => Some(Arc::new(Stacked {
                    upper: g.clone(),
                    lower: h.clone(),
                })),
                (None, Some(h)) => Some(h.clone()),
                (g, None) => g.clone(),
            }
        };
        let shared = self.shared_constraints.then(|| fold(&self.players[0]));
        let players = self
            .players
            .iter()
            .map(|p| PlayerSpec {
                dim: p.dim,
                objective: p.objective.clone(),
                g: match &shared {
                    Some(s) => s.clone(),
                    None => fold(p),
                },
                h: None,
            })
            .collect();
        GnepProblem {
            name: self.name.clone(),
            players,
            offsets: self.offsets.clone(),
            shared_constraints: self.shared_constraints,
        }
    }

    pub fn theta(&self, v: usize, x: &Point) -> Result<f64> {
        let val = self.players[v].objective.value(x);
        if val.is_finite() {
            Ok(val)
        } else {
            Err(Error::NonFinite {
                player: v,
                callback: Callback::ObjectiveValue,
            })
        }
    }

    /// `∇_{x^ν} θ_ν(x)`.
    pub fn theta_grad(&self, v: usize, x: &Point) -> Result<DVector<f64>> {
        let grad = self.players[v].objective.gradient(x);
        check_vector(v, Callback::ObjectiveGradient, &grad, self.player_dim(v))?;
        Ok(grad)
    }

    /// `∇²_{x^ν x} θ_ν(x)`, shape `n_ν × n`.
    pub fn theta_hess_rows(&self, v: usize, x: &Point) -> Result<DMatrix<f64>> {
        let (nv, n) = (self.player_dim(v), self.dim());
        match self.players[v].objective.hessian_rows(x) {
            Some(h) => {
                check_matrix(v, Callback::ObjectiveHessian, &h, nv, n)?;
                Ok(h)
            }
            None => {
                let base = self.theta_grad(v, x)?;
                let mut out = DMatrix::zeros(nv, n);
                let mut xp = x.clone();
                for j in 0..n {
                    let step = HESSIAN_FD_STEP * x[j].abs().max(1.0);
                    xp[j] = x[j] + step;
                    let shifted = self.theta_grad(v, &xp)?;
                    out.set_column(j, &((shifted - &base) / step));
                    xp[j] = x[j];
                }
                Ok(out)
            }
        }
    }

    fn side(&self, v: usize, side: Side) -> Option<&Arc<dyn ConstraintFn>> {
        match side {
            Side::G => self.players[v].g.as_ref(),
            Side::H => self.players[v].h.as_ref(),
        }
    }

    fn con_values(&self, v: usize, x: &Point, side: Side) -> Result<DVector<f64>> {
        match self.side(v, side) {
            None => Ok(DVector::zeros(0)),
            Some(c) => {
                let vals = c.values(x);
                check_vector(v, side.callbacks().0, &vals, c.len())?;
                Ok(vals)
            }
        }
    }

    fn con_gradients(&self, v: usize, x: &Point, side: Side) -> Result<DMatrix<f64>> {
        match self.side(v, side) {
            None => Ok(DMatrix::zeros(self.dim(), 0)),
            Some(c) => {
                let grads = c.gradients(x);
                check_matrix(v, side.callbacks().1, &grads, self.dim(), c.len())?;
                Ok(grads)
            }
        }
    }

    fn con_hess_rows(&self, v: usize, x: &Point, side: Side) -> Result<Vec<DMatrix<f64>>> {
        let Some(c) = self.side(v, side) else {
            return Ok(Vec::new());
        };
        let (n, block) = (self.dim(), self.block(v));
        let cb = side.callbacks().2;
        match c.hessians(x) {
            Some(hs) => {
                if hs.len() != c.len() {
                    return Err(Error::Shape {
                        player: v,
                        callback: cb,
                        expected: format!("{} matrices", c.len()),
                        got: format!("{} matrices", hs.len()),
                    });
                }
                hs.iter()
                    .map(|h| {
                        check_matrix(v, cb, h, n, n)?;
                        Ok(h.rows(block.start, block.len()).into_owned())
                    })
                    .collect()
            }
            None => {
                let base = self.con_gradients(v, x, side)?;
                let mut out = vec![DMatrix::zeros(block.len(), n); c.len()];
                let mut xp = x.clone();
                for j in 0..n {
                    let step = HESSIAN_FD_STEP * x[j].abs().max(1.0);
                    xp[j] = x[j] + step;
                    let shifted = self.con_gradients(v, &xp, side)?;
                    for (i, h) in out.iter_mut().enumerate() {
                        for (r, k) in block.clone().enumerate() {
                            h[(r, j)] = (shifted[(k, i)] - base[(k, i)]) / step;
                        }
                    }
                    xp[j] = x[j];
                }
                Ok(out)
            }
        }
    }

    pub fn g(&self, v: usize, x: &Point) -> Result<DVector<f64>> {
        self.con_values(v, x, Side::G)
    }

    /// Transposed Jacobian of `g^ν` with respect to the full `x`, `n × m_ν`.
    pub fn g_grad(&self, v: usize, x: &Point) -> Result<DMatrix<f64>> {
        self.con_gradients(v, x, Side::G)
    }

    /// `∇_{x^ν} g^ν(x)`, shape `n_ν × m_ν`.
    pub fn g_own_grad(&self, v: usize, x: &Point) -> Result<DMatrix<f64>> {
        let b = self.block(v);
        Ok(self.g_grad(v, x)?.rows(b.start, b.len()).into_owned())
    }

    /// Row blocks `∇²_{x^ν x} g_i^ν(x)` for every component.
    pub fn g_hess_rows(&self, v: usize, x: &Point) -> Result<Vec<DMatrix<f64>>> {
        self.con_hess_rows(v, x, Side::G)
    }

    pub fn h(&self, v: usize, x: &Point) -> Result<DVector<f64>> {
        self.con_values(v, x, Side::H)
    }

    pub fn h_grad(&self, v: usize, x: &Point) -> Result<DMatrix<f64>> {
        self.con_gradients(v, x, Side::H)
    }

    pub fn h_own_grad(&self, v: usize, x: &Point) -> Result<DMatrix<f64>> {
        let b = self.block(v);
        Ok(self.h_grad(v, x)?.rows(b.start, b.len()).into_owned())
    }

    pub fn h_hess_rows(&self, v: usize, x: &Point) -> Result<Vec<DMatrix<f64>>> {
        self.con_hess_rows(v, x, Side::H)
    }

    /// Contiguous block `x^ν` of `x`.
    pub fn block_of(&self, x: &Point, v: usize) -> Result<DVector<f64>> {
        self.check_player(v)?;
        self.check_point(x)?;
        let b = self.block(v);
        Ok(x.rows(b.start, b.len()).into_owned())
    }
}

/// Free-function form of [`GnepProblem::block_of`].
pub fn block_of(problem: &GnepProblem, x: &Point, v: usize) -> Result<DVector<f64>> {
    problem.block_of(x, v)
}

fn check_vector(player: usize, callback: Callback, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Shape {
            player,
            callback,
            expected: len.to_string(),
            got: v.len().to_string(),
        });
    }
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { player, callback })
    }
}

fn check_matrix(
    player: usize,
    callback: Callback,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Shape {
            player,
            callback,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { player, callback })
    }
}

/// Per-player storage that is either independent for each player or a
/// single value aliased by all of them.
#[derive(Debug, Clone, PartialEq)]
pub enum PerPlayer<T> {
    Each(Vec<T>),
    Shared { value: T, players: usize },
}

impl<T> PerPlayer<T> {
    pub fn shared(value: T, players: usize) -> Self {
        PerPlayer::Shared { value, players }
    }

    pub fn get(&self, v: usize) -> &T {
        match self {
            PerPlayer::Each(items) => &items[v],
            PerPlayer::Shared { value, players } => {
                assert!(v < *players, "player {v} out of range");
                value
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PerPlayer::Each(items) => items.len(),
            PerPlayer::Shared { players, .. } => *players,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, PerPlayer::Shared { .. })
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.len()).map(move |v| self.get(v))
    }

    /// Applies `f` once per stored value; shared storage stays shared.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerPlayer<U> {
        match self {
            PerPlayer::Each(items) => PerPlayer::Each(items.iter().map(f).collect()),
            PerPlayer::Shared { value, players } => PerPlayer::Shared {
                value: f(value),
                players: *players,
            },
        }
    }

    pub fn to_vec(&self) -> Vec<T>
    where
        T: Clone,
    {
        self.iter().cloned().collect()
    }
}

/// Multipliers `λ^ν` for `g^ν` and `μ^ν` for `h^ν`. No sign constraint is
/// imposed on `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    pub lambda: PerPlayer<DVector<f64>>,
    pub mu: PerPlayer<DVector<f64>>,
}

impl MultiplierSet {
    pub fn zeros(problem: &GnepProblem) -> Self {
        let n = problem.num_players();
        if problem.shared_constraints() {
            Self {
                lambda: PerPlayer::shared(DVector::zeros(problem.g_count(0)), n),
                mu: PerPlayer::shared(DVector::zeros(problem.h_count(0)), n),
            }
        } else {
            Self {
                lambda: PerPlayer::Each(
                    (0..n).map(|v| DVector::zeros(problem.g_count(v))).collect(),
                ),
                mu: PerPlayer::Each((0..n).map(|v| DVector::zeros(problem.h_count(v))).collect()),
            }
        }
    }

    /// Per-player multipliers for `g` only (`μ` empty).
    pub fn from_lambda(lambda: PerPlayer<DVector<f64>>) -> Self {
        let mu = PerPlayer::Each((0..lambda.len()).map(|_| DVector::zeros(0)).collect());
        Self { lambda, mu }
    }

    pub fn check_shapes(&self, problem: &GnepProblem) -> Result<()> {
        let n = problem.num_players();
        if self.lambda.len() != n || self.mu.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.lambda.len(),
            });
        }
        for v in 0..n {
            for (got, expected) in [
                (self.lambda.get(v).len(), problem.g_count(v)),
                (self.mu.get(v).len(), problem.h_count(v)),
            ] {
                if got != expected {
                    return Err(Error::Dimension { expected, got });
                }
            }
        }
        Ok(())
    }
}

/// Maximum finite-difference disagreement of one callback.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationEntry {
    pub player: usize,
    pub callback: Callback,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub fd_tol: f64,
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error <= self.fd_tol)
    }

    pub fn worst(&self) -> Option<&ValidationEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

/// Central-difference audit of every supplied derivative.
///
/// Shape and finiteness violations are hard errors; gradient disagreements
/// are reported per callback as the maximum relative error over all probes.
pub fn validate_problem(
    problem: &GnepProblem,
    probe_points: &[Point],
    fd_tol: f64,
) -> Result<ValidationReport> {
    if probe_points.is_empty() {
        return Err(Error::Config("validation needs at least one probe point".into()));
    }
    let n = problem.dim();
    let h = VALIDATION_FD_STEP;
    let mut entries = Vec::new();
    let mut record = |player: usize, callback: Callback, err: f64| {
        match entries
            .iter_mut()
            .find(|e: &&mut ValidationEntry| e.player == player && e.callback == callback)
        {
            Some(e) => e.max_rel_error = e.max_rel_error.max(err),
            None => entries.push(ValidationEntry {
                player,
                callback,
                max_rel_error: err,
            }),
        }
    };

    for x in probe_points {
        problem.check_point(x)?;
        for v in 0..problem.num_players() {
            let block = problem.block(v);
            problem.theta(v, x)?;
            let grad = problem.theta_grad(v, x)?;
            let analytic_hess = problem.players()[v].objective.hessian_rows(x).is_some();
            let hess = problem.theta_hess_rows(v, x)?;
            let mut grad_err = 0.0f64;
            let mut hess_err = 0.0f64;
            let mut xp = x.clone();
            for j in 0..n {
                xp[j] = x[j] + h;
                let fp = problem.theta(v, &xp)?;
                let gp = problem.theta_grad(v, &xp)?;
                xp[j] = x[j] - h;
                let fm = problem.theta(v, &xp)?;
                let gm = problem.theta_grad(v, &xp)?;
                xp[j] = x[j];
                if block.contains(&j) {
                    grad_err = grad_err.max(rel_err(grad[j - block.start], (fp - fm) / (2.0 * h)));
                }
                for r in 0..block.len() {
                    hess_err = hess_err.max(rel_err(hess[(r, j)], (gp[r] - gm[r]) / (2.0 * h)));
                }
            }
            record(v, Callback::ObjectiveGradient, grad_err);
            if analytic_hess {
                record(v, Callback::ObjectiveHessian, hess_err);
            }

            for side in [Side::G, Side::H] {
                let Some(con) = problem.side(v, side) else {
                    continue;
                };
                let (_, grad_cb, hess_cb) = side.callbacks();
                problem.con_values(v, x, side)?;
                let grads = problem.con_gradients(v, x, side)?;
                let analytic_hess = con.hessians(x).is_some();
                let hess = problem.con_hess_rows(v, x, side)?;
                let mut grad_err = 0.0f64;
                let mut hess_err = 0.0f64;
                for j in 0..n {
                    xp[j] = x[j] + h;
                    let cp = problem.con_values(v, &xp, side)?;
                    let gp = problem.con_gradients(v, &xp, side)?;
                    xp[j] = x[j] - h;
                    let cm = problem.con_values(v, &xp, side)?;
                    let gm = problem.con_gradients(v, &xp, side)?;
                    xp[j] = x[j];
                    for i in 0..con.len() {
                        grad_err = grad_err.max(rel_err(grads[(j, i)], (cp[i] - cm[i]) / (2.0 * h)));
                        for (r, k) in block.clone().enumerate() {
                            hess_err = hess_err
                                .max(rel_err(hess[i][(r, j)], (gp[(k, i)] - gm[(k, i)]) / (2.0 * h)));
                        }
                    }
                }
                record(v, grad_cb, grad_err);
                if analytic_hess {
                    record(v, hess_cb, hess_err);
                }
            }
        }
    }
    Ok(ValidationReport { fd_tol, entries })
}
