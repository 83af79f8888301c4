//! Probabilistic MDS.
//!
//! The similarity matrix `K` lives in the elliptope: symmetric PSD matrices with
//! an all-ones diagonal. It is fitted by projected gradient descent on the
//! summed log-loss of constituent triplets, `K ← P(K − η∇l(K))`, where `P` is
//! the Frobenius projection onto the elliptope. The projection is computed by
//! a semismooth Newton method on its dual by default, or by Dykstra's
//! alternating projections.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::response::ModelParams;
use crate::seed;
use crate::types::{ResponseLog, Triplet};

pub const SYMMETRY_TOL: f64 = 1e-9;
pub const DIAGONAL_TOL: f64 = 1e-6;
pub const PSD_TOL: f64 = 1e-6;

/// Rank of the random initial configuration (capped at `N`).
const INIT_RANK: usize = 10;

/// A point of the elliptope.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(DMatrix<f64>);

impl SimilarityMatrix {
    /// Validates symmetry, unit diagonal and numerical positive semidefiniteness.
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() || k.nrows() == 0 {
            return Err(Error::domain(format!(
                "similarity matrix must be square and nonempty, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("similarity matrix has non-finite entries"));
        }
        let asym = max_abs_diff(&k, &k.transpose());
        if asym > SYMMETRY_TOL {
            return Err(Error::domain(format!(
                "similarity matrix asymmetric by {asym:e}"
            )));
        }
        if let Some(d) = k
            .diagonal()
            .iter()
            .find(|d| (*d - 1.0).abs() > DIAGONAL_TOL)
        {
            return Err(Error::domain(format!("diagonal entry {d} is not 1")));
        }
        let min_eig = k.clone().symmetric_eigenvalues().min();
        if min_eig < -PSD_TOL {
            return Err(Error::domain(format!(
                "similarity matrix not PSD (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self(k))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// `MᵀM` for a `d × N` matrix of unit-norm columns.
    pub fn from_coordinates(coords: &DMatrix<f64>) -> Result<Self> {
        Self::new(coords.transpose() * coords)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().min()
    }
}

/// Pairwise distances induced by a similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn from_matrix(d: DMatrix<f64>) -> Result<Self> {
        if !d.is_square() {
            return Err(Error::domain("distance matrix must be square"));
        }
        Ok(Self(d))
    }
}

/// `D_ij = sqrt(max(0, K_ii − 2K_ij + K_jj))`.
pub fn distances_from_similarity(k: &SimilarityMatrix) -> DistanceMatrix {
    let k = &k.0;
    let n = k.nrows();
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let v = (k[(i, i)] - 2.0 * k[(i, j)] + k[(j, j)]).max(0.0).sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DistanceMatrix(d)
}

/// Point coordinates recovered from a similarity matrix, one column per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCoordinates {
    pub coords: DMatrix<f64>,
    pub dim: usize,
    /// Frobenius norm of `MᵀM − K`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Newton,
    Dykstra,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdsConfig {
    /// Base step multiplier; each iteration starts from `eta / |triplets|`.
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once the relative loss improvement of an iteration falls below this.
    pub loss_tol: f64,
    pub projection: ProjectionMethod,
    /// Newton: bound on the diagonal residual. Dykstra: bound on the change
    /// between successive iterates. Both in max-norm.
    pub projection_tol: f64,
    /// Newton steps or Dykstra rounds.
    pub projection_max_rounds: usize,
    /// Step halvings allowed per iteration while the loss increases; 0 disables
    /// backtracking and every step is accepted.
    pub max_halvings: usize,
    /// Factor applied to the last accepted step to start the next iteration;
    /// only used with backtracking, never below the base step.
    pub step_growth: f64,
    pub seed: u64,
    /// Set from the owning selection config, which holds the single `mu`.
    #[serde(skip)]
    pub params: ModelParams,
}

impl Default for MdsConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            max_iters: 1000,
            loss_tol: 1e-6,
            projection: ProjectionMethod::Newton,
            projection_tol: 1e-7,
            projection_max_rounds: 500,
            max_halvings: 20,
            step_growth: 1.25,
            seed: 0,
            params: ModelParams::default(),
        }
    }
}

impl MdsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "mds.{name} must be positive, got {v}"
                )))
            }
        };
        positive("eta", self.eta)?;
        positive("loss_tol", self.loss_tol)?;
        positive("projection_tol", self.projection_tol)?;
        if !(self.step_growth.is_finite() && self.step_growth >= 1.0) {
            return Err(Error::Config(format!(
                "mds.step_growth must be at least 1, got {}",
                self.step_growth
            )));
        }
        if self.max_iters == 0 || self.projection_max_rounds == 0 {
            return Err(Error::Config(
                "mds.max_iters and mds.projection_max_rounds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of [`project_to_elliptope`]. When `converged` is false the matrix is
/// the last iterate and may miss the elliptope invariants slightly.
#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: SimilarityMatrix,
    pub converged: bool,
    pub rounds: usize,
}

#[derive(Debug, Clone)]
pub struct MdsFit {
    pub similarity: SimilarityMatrix,
    /// Loss at the start point followed by the loss after every iteration.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
}

impl MdsFit {
    pub fn final_loss(&self) -> f64 {
        *self
            .loss_trace
            .last()
            .expect("trace holds the initial loss")
    }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[inline]
fn sq_dist(k: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    k[(a, a)] - 2.0 * k[(a, b)] + k[(b, b)]
}

/// Neumaier compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn check_triplets(triplets: &[Triplet], n: usize) -> Result<()> {
    match triplets
        .iter()
        .find(|t| t.head.0 >= n || t.closer.0 >= n || t.farther.0 >= n)
    {
        Some(t) => Err(Error::domain(format!(
            "triplet ({},{},{}) out of range for {n} items",
            t.head, t.closer, t.farther
        ))),
        None => Ok(()),
    }
}

fn triplet_loss(k: &DMatrix<f64>, triplets: &[Triplet], mu: f64) -> f64 {
    compensated_sum(triplets.iter().map(|t| {
        let dc = sq_dist(k, t.head.0, t.closer.0);
        let df = sq_dist(k, t.head.0, t.farther.0);
        // −log p = log(D²c + D²f + 2μ) − log(D²f + μ)
        (dc + df + 2.0 * mu).ln() - (df + mu).ln()
    }))
}

fn triplet_gradient(k: &DMatrix<f64>, triplets: &[Triplet], mu: f64) -> DMatrix<f64> {
    let n = k.nrows();
    let mut g = DMatrix::zeros(n, n);
    let mut add_pair = |a: usize, b: usize, w: f64| {
        g[(a, a)] += w;
        g[(b, b)] += w;
        g[(a, b)] -= w;
        g[(b, a)] -= w;
    };
    for t in triplets {
        let (a, c, f) = (t.head.0, t.closer.0, t.farther.0);
        let dc = sq_dist(k, a, c);
        let df = sq_dist(k, a, f);
        let inv_s = 1.0 / (dc + df + 2.0 * mu);
        add_pair(a, c, inv_s);
        add_pair(a, f, inv_s - 1.0 / (df + mu));
    }
    g
}

/// Summed `−log p` over every constituent triplet of the log, at the distances
/// induced by `k`.
pub fn empirical_log_loss(
    k: &SimilarityMatrix,
    log: &ResponseLog,
    params: ModelParams,
) -> Result<f64> {
    let triplets = log.triplets();
    check_triplets(&triplets, k.n())?;
    Ok(triplet_loss(&k.0, &triplets, params.mu()))
}

/// Gradient of [`empirical_log_loss`] with respect to the entries of `K`, where
/// each squared distance is read as `K_aa − K_ab − K_ba + K_bb`.
pub fn loss_gradient(
    k: &SimilarityMatrix,
    log: &ResponseLog,
    params: ModelParams,
) -> Result<DMatrix<f64>> {
    let triplets = log.triplets();
    check_triplets(&triplets, k.n())?;
    Ok(triplet_gradient(&k.0, &triplets, params.mu()))
}

/// Loss over an explicit triplet list.
pub fn triplet_log_loss(
    k: &SimilarityMatrix,
    triplets: &[Triplet],
    params: ModelParams,
) -> Result<f64> {
    check_triplets(triplets, k.n())?;
    Ok(triplet_loss(&k.0, triplets, params.mu()))
}

/// Frobenius projection onto the PSD cone by clipping negative eigenvalues.
fn project_psd(x: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = x.clone().symmetric_eigen();
    let mut out = x.clone();
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < 0.0 {
            let v = eig.eigenvectors.column(i);
            out.ger(-lambda, &v, &v, 1.0);
        }
    }
    symmetrize(&mut out);
    out
}

/// Restores exact symmetry lost to rounding.
fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Nearest point of the elliptope in Frobenius norm, using `cfg.projection`.
pub fn project_to_elliptope(k: &DMatrix<f64>, cfg: &MdsConfig) -> Result<Projection> {
    let mut dual = DVector::zeros(k.nrows());
    project_warm(k, cfg, &mut dual)
}

/// As [`project_to_elliptope`], starting the Newton method from the diagonal
/// multipliers in `dual` and leaving the final multipliers there. Successive
/// projections of nearby matrices converge in fewer steps this way.
fn project_warm(k: &DMatrix<f64>, cfg: &MdsConfig, dual: &mut DVector<f64>) -> Result<Projection> {
    if !k.is_square() || k.nrows() == 0 {
        return Err(Error::domain(
            "projection input must be square and nonempty",
        ));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("projection input has non-finite entries"));
    }
    let mut g = k.clone();
    symmetrize(&mut g);
    match cfg.projection {
        ProjectionMethod::Dykstra => Ok(dykstra(g, cfg)),
        ProjectionMethod::Newton => {
            if dual.len() != g.nrows() {
                *dual = DVector::zeros(g.nrows());
            }
            Ok(dual_newton(&g, cfg, dual))
        }
    }
}

/// Dykstra's method alternating between the PSD cone and the unit-diagonal
/// affine set; only the cone needs a correction term. Stops when successive
/// iterates differ by less than `cfg.projection_tol` in max-norm.
fn dykstra(mut y: DMatrix<f64>, cfg: &MdsConfig) -> Projection {
    let n = y.nrows();
    let mut correction = DMatrix::<f64>::zeros(n, n);
    let mut last_psd = y.clone();
    let mut converged = false;
    let mut rounds = cfg.projection_max_rounds;
    for round in 1..=cfg.projection_max_rounds {
        let r = &y - &correction;
        let x = project_psd(&r);
        correction = &x - &r;
        let mut next = x.clone();
        next.fill_diagonal(1.0);
        let change = max_abs_diff(&next, &y);
        y = next;
        last_psd = x;
        if change < cfg.projection_tol {
            converged = true;
            rounds = round;
            break;
        }
    }
    // the affine iterate can miss the cone by rounding; the rescaled cone
    // iterate is in the elliptope exactly and as close to the limit
    Projection {
        matrix: SimilarityMatrix(unit_diagonal(last_psd)),
        converged,
        rounds,
    }
}

/// Eigendecomposition of `G + Diag(u)`.
struct DualPoint {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl DualPoint {
    fn new(g: &DMatrix<f64>, u: &DVector<f64>) -> Self {
        let mut x = g.clone();
        for (i, ui) in u.iter().enumerate() {
            x[(i, i)] += ui;
        }
        let eig = x.symmetric_eigen();
        Self {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
        }
    }

    /// `(G + Diag(u))₊`.
    fn positive_part(&self) -> DMatrix<f64> {
        let n = self.values.len();
        let pos: Vec<usize> = (0..n).filter(|&j| self.values[j] > 0.0).collect();
        let q = DMatrix::from_fn(n, pos.len(), |i, c| {
            self.vectors[(i, pos[c])] * self.values[pos[c]].sqrt()
        });
        let mut x = &q * q.transpose();
        symmetrize(&mut x);
        x
    }

    /// Dual objective `½‖(G + Diag(u))₊‖² − Σu`.
    fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * self.values.iter().map(|l| l.max(0.0).powi(2)).sum::<f64>() - u.sum()
    }
}

/// Semismooth Newton method on the dual of the projection program.
///
/// The projection is `(G + Diag(u))₊` for the multipliers `u` minimizing the
/// convex dual `½‖(G + Diag(u))₊‖² − Σu`, whose gradient is the diagonal
/// residual `diag((G + Diag(u))₊) − 1`. Newton directions come from conjugate
/// gradients on a generalized Hessian, with an Armijo line search; a unit
/// gradient step is used whenever the Newton direction fails. Stops when the
/// diagonal residual is below `cfg.projection_tol` in max-norm, then rescales
/// the result to an exactly unit diagonal.
fn dual_newton(g: &DMatrix<f64>, cfg: &MdsConfig, u: &mut DVector<f64>) -> Projection {
    let n = g.nrows();
    let mut point = DualPoint::new(g, u);
    let mut x = point.positive_part();
    let diag_residual = |x: &DMatrix<f64>| DVector::from_fn(n, |i, _| x[(i, i)] - 1.0);
    let mut residual = diag_residual(&x);
    let mut rounds = 0;
    let mut converged = false;
    loop {
        if residual.amax() < cfg.projection_tol {
            converged = true;
            break;
        }
        if rounds == cfg.projection_max_rounds {
            break;
        }
        rounds += 1;
        let mut direction = newton_direction(&point, &residual).unwrap_or_else(|| -&residual);
        let mut slope = residual.dot(&direction);
        if slope >= 0.0 {
            direction = -&residual;
            slope = -residual.norm_squared();
        }
        let objective = point.objective(u);
        let residual_norm = residual.norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-10 {
            let trial_u = &*u + &direction * alpha;
            let trial = DualPoint::new(g, &trial_u);
            let trial_x = trial.positive_part();
            let trial_residual = diag_residual(&trial_x);
            // near the solution the objective decrease drowns in rounding, so a
            // sufficient drop of the residual also accepts the step
            if trial.objective(&trial_u) <= objective + 1e-4 * alpha * slope
                || trial_residual.norm() <= (1.0 - 1e-4 * alpha) * residual_norm
            {
                accepted = Some((trial_u, trial, trial_x, trial_residual));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next_u, next_point, next_x, next_residual)) = accepted else {
            break;
        };
        *u = next_u;
        point = next_point;
        x = next_x;
        residual = next_residual;
    }
    Projection {
        matrix: SimilarityMatrix(unit_diagonal(x)),
        converged,
        rounds,
    }
}

/// Rescales a PSD matrix to unit diagonal, `D^{-½} X D^{-½}`, which keeps it
/// PSD. A zero diagonal entry becomes an isolated unit vector.
fn unit_diagonal(mut x: DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    for i in 0..n {
        if x[(i, i)] <= f64::MIN_POSITIVE {
            x.row_mut(i).fill(0.0);
            x.column_mut(i).fill(0.0);
            x[(i, i)] = 1.0;
        }
    }
    let scale = DVector::from_fn(n, |i, _| x[(i, i)].sqrt().recip());
    for j in 0..n {
        for i in 0..n {
            x[(i, j)] *= scale[i] * scale[j];
        }
    }
    x.fill_diagonal(1.0);
    x
}

/// Solves `V d = −residual` by conjugate gradients, where `V` is the
/// generalized Hessian of the dual at `point`. `None` on breakdown.
fn newton_direction(point: &DualPoint, residual: &DVector<f64>) -> Option<DVector<f64>> {
    let n = residual.len();
    let lambda = &point.values;
    let p = &point.vectors;
    let omega = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (lambda[i], lambda[j]);
        match (a > 0.0, b > 0.0) {
            (true, true) => 1.0,
            (false, false) => 0.0,
            _ => (a.max(0.0) - b.max(0.0)) / (a - b),
        }
    });
    let pt = p.transpose();
    let norm = residual.norm();
    let reg = 1e-2 * norm.min(1.0);
    // V h = diag(P (Ω ∘ (Pᵀ Diag(h) P)) Pᵀ) + reg·h
    let apply = |h: &DVector<f64>| -> DVector<f64> {
        let mut hp = p.clone();
        for (i, mut row) in hp.row_iter_mut().enumerate() {
            row *= h[i];
        }
        let mut w = &pt * hp;
        w.component_mul_assign(&omega);
        let pw = p * w;
        DVector::from_fn(n, |i, _| pw.row(i).dot(&p.row(i)) + reg * h[i])
    };
    let target = (norm.min(0.1) * norm).powi(2);
    let mut d = DVector::zeros(n);
    let mut r = -residual;
    let mut dir = r.clone();
    let mut rr = r.norm_squared();
    for _ in 0..n.max(50) {
        if rr <= target {
            break;
        }
        let ad = apply(&dir);
        let curvature = dir.dot(&ad);
        if curvature.is_nan() || curvature <= 0.0 {
            return None;
        }
        let step = rr / curvature;
        d.axpy(step, &dir, 1.0);
        r.axpy(-step, &ad, 1.0);
        let next_rr = r.norm_squared();
        dir = &r + &dir * (next_rr / rr);
        rr = next_rr;
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Random start: unit-norm Gaussian columns in `min(N, 10)` dimensions.
pub fn random_initialization(n_items: usize, seed: u64) -> SimilarityMatrix {
    let dim = n_items.min(INIT_RANK);
    let mut rng = seed::rng(seed, &[seed::tag::INIT]);
    let mut m = DMatrix::<f64>::from_fn(dim, n_items, |_, _| StandardNormal.sample(&mut rng));
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        } else {
            col[0] = 1.0;
        }
    }
    let mut k = m.transpose() * m;
    k.fill_diagonal(1.0);
    SimilarityMatrix(k)
}

/// Fits `K` to the constituent triplets of `log`.
pub fn fit_mds(
    log: &ResponseLog,
    n_items: usize,
    cfg: &MdsConfig,
    warm_start: Option<&SimilarityMatrix>,
) -> Result<MdsFit> {
    fit_triplets(&log.triplets(), n_items, cfg, warm_start)
}

/// [`fit_mds`] over an explicit triplet list.
pub fn fit_triplets(
    triplets: &[Triplet],
    n_items: usize,
    cfg: &MdsConfig,
    warm_start: Option<&SimilarityMatrix>,
) -> Result<MdsFit> {
    if n_items < 2 {
        return Err(Error::domain(format!(
            "need at least 2 items, got {n_items}"
        )));
    }
    cfg.validate()?;
    check_triplets(triplets, n_items)?;
    let mu = cfg.params.mu();
    let mut k = match warm_start {
        Some(w) if w.n() != n_items => {
            return Err(Error::domain(format!(
                "warm start is {}x{} but there are {n_items} items",
                w.n(),
                w.n()
            )))
        }
        Some(w) => w.0.clone(),
        None => random_initialization(n_items, cfg.seed).0,
    };
    if triplets.is_empty() {
        let p = project_to_elliptope(&k, cfg)?;
        return Ok(MdsFit {
            similarity: p.matrix,
            loss_trace: vec![0.0],
            iterations: 0,
        });
    }

    let base_step = cfg.eta / triplets.len() as f64;
    let mut step = base_step;
    let mut loss = triplet_loss(&k, triplets, mu);
    let mut trace = vec![loss];
    let mut iterations = 0;
    // projection multipliers of the last accepted step, and that step's size
    let mut dual = DVector::zeros(n_items);
    let mut dual_step = step;
    while iterations < cfg.max_iters {
        iterations += 1;
        let grad = triplet_gradient(&k, triplets, mu);
        let mut accepted = None;
        for halving in 0..=cfg.max_halvings {
            // the multipliers scale roughly with the step
            let mut trial_dual = &dual * (step / dual_step);
            let candidate = project_warm(&(&k - &grad * step), cfg, &mut trial_dual)?
                .matrix
                .0;
            let cand_loss = triplet_loss(&candidate, triplets, mu);
            if cfg.max_halvings == 0 || cand_loss <= loss {
                accepted = Some((candidate, cand_loss, trial_dual));
                break;
            }
            if halving < cfg.max_halvings {
                step *= 0.5;
            }
        }
        let Some((next, next_loss, next_dual)) = accepted else {
            // no descent left at this precision
            trace.push(loss);
            break;
        };
        let improvement = (loss - next_loss) / loss.abs().max(f64::MIN_POSITIVE);
        k = next;
        loss = next_loss;
        dual = next_dual;
        dual_step = step;
        trace.push(loss);
        if improvement < cfg.loss_tol {
            break;
        }
        if cfg.max_halvings > 0 {
            step = (step * cfg.step_growth).max(base_step);
        }
    }
    Ok(MdsFit {
        similarity: SimilarityMatrix(k),
        loss_trace: trace,
        iterations,
    })
}

/// Top-`dim` coordinates `M = Λ^½ Vᵀ` with negative eigenvalues clipped to 0.
/// Each row's sign is fixed so that its largest-magnitude entry is positive.
pub fn recover_coordinates(k: &SimilarityMatrix, dim: usize) -> Result<EmbeddingCoordinates> {
    let n = k.n();
    if dim == 0 || dim > n {
        return Err(Error::domain(format!(
            "dimension must be in 1..={n}, got {dim}"
        )));
    }
    let eig = k.0.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut coords = DMatrix::zeros(dim, n);
    for (row, &idx) in order.iter().take(dim).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx);
        let pivot = v.iter().enumerate().fold((0, 0.0f64), |best, (i, x)| {
            if x.abs() > best.1.abs() {
                (i, *x)
            } else {
                best
            }
        });
        let sign = if pivot.1 < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            coords[(row, j)] = sign * scale * v[j];
        }
    }
    let residual = (coords.transpose() * &coords - &k.0).norm();
    Ok(EmbeddingCoordinates {
        coords,
        dim,
        residual,
    })
}

const SNAPSHOT_MAGIC: &str = "infotuple-embedding v1";

/// A persisted similarity matrix with its fitting metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub similarity: SimilarityMatrix,
    pub iterations: usize,
    pub loss: f64,
}

/// Text snapshot: a magic line, `n <N>`, `iterations <t>`, `loss <l>`, then
/// `N` rows of `N` space-separated values. Values use the shortest
/// round-tripping decimal form, so snapshots are exact and byte-stable.
pub fn write_snapshot(w: &mut impl Write, snap: &Snapshot) -> Result<()> {
    let k = snap.similarity.as_matrix();
    writeln!(w, "{SNAPSHOT_MAGIC}")?;
    writeln!(w, "n {}", k.nrows())?;
    writeln!(w, "iterations {}", snap.iterations)?;
    writeln!(w, "loss {}", snap.loss)?;
    for i in 0..k.nrows() {
        let row: Vec<String> = (0..k.ncols()).map(|j| k[(i, j)].to_string()).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_snapshot(r: impl BufRead) -> Result<Snapshot> {
    let mut lines = r.lines().enumerate();
    let bad = |line: usize, msg: String| Error::Parse {
        path: "<snapshot>".into(),
        line,
        msg,
    };
    let mut next = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(bad(
                0,
                format!("unexpected end of snapshot, expected {expect}"),
            )),
        }
    };
    let (ln, magic) = next("header")?;
    if magic.trim() != SNAPSHOT_MAGIC {
        return Err(bad(ln, format!("unknown snapshot header {magic:?}")));
    }
    let mut field = |name: &str| -> Result<String> {
        let (ln, l) = next(name)?;
        l.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(|s| s.trim().to_string())
            .ok_or_else(|| bad(ln, format!("expected `{name} <value>`")))
    };
    let n: usize = field("n")?.parse().map_err(|e| bad(2, format!("{e}")))?;
    let iterations: usize = field("iterations")?
        .parse()
        .map_err(|e| bad(3, format!("{e}")))?;
    let loss: f64 = field("loss")?.parse().map_err(|e| bad(4, format!("{e}")))?;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let (ln, row) = next("matrix row")?;
        let vals: Vec<&str> = row.split_whitespace().collect();
        if vals.len() != n {
            return Err(bad(ln, format!("expected {n} values, got {}", vals.len())));
        }
        for (j, v) in vals.iter().enumerate() {
            k[(i, j)] = v.parse().map_err(|e| bad(ln, format!("{v:?}: {e}")))?;
        }
    }
    Ok(Snapshot {
        similarity: SimilarityMatrix::new(k)?,
        iterations,
        loss,
    })
}
