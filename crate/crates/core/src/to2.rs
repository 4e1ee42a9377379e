//! Tile-coefficient update: minimize the sum of user MSEs subject to
//! per-user MSE caps and per-tile GC constraints, solved in the dual.
//!
//! For fixed multipliers the Lagrangian is a strictly convex quadratic in
//! `α`, so its minimizer has a closed form and the dual function and its
//! gradient are cheap. The multipliers are updated by projected gradient
//! ascent with backtracking.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::SolverError;
use crate::linalg::{dot, re_inner, CMatrix, CVector, C64};
use crate::precoder::Precoder;
use crate::ris_model::GcQuadratics;
use crate::scenario::SolverSettings;

/// Optimal scalar receivers `g_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverGains {
    pub g: Vec<C64>,
}

/// `g_i = h_i v_i / (Σ_j |h_i v_j|² + σ_i²)`.
pub fn optimal_receivers(effective: &[CVector], v: &CMatrix, noise: &[f64]) -> ReceiverGains {
    let g = effective
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let hv: Vec<C64> = (0..v.ncols()).map(|j| dot(h, &v.column(j).into_owned())).collect();
            let denom: f64 = hv.iter().map(|z| z.norm_sqr()).sum::<f64>() + noise[i];
            hv[i] / denom
        })
        .collect();
    ReceiverGains { g }
}

/// `1 + |g|²(Σ_j |h v_j|² + σ²) - 2 Re[g* h v_i]`.
pub fn mse(g: C64, h: &CVector, v: &CMatrix, noise: f64, i: usize) -> f64 {
    let hv: Vec<C64> = (0..v.ncols()).map(|j| dot(h, &v.column(j).into_owned())).collect();
    let power: f64 = hv.iter().map(|z| z.norm_sqr()).sum::<f64>() + noise;
    1.0 + g.norm_sqr() * power - 2.0 * (g.conj() * hv[i]).re
}

fn numerical(reason: impl Into<String>) -> SolverError {
    SolverError::NumericalFailure {
        module: "tile_to2",
        reason: reason.into(),
    }
}

/// Quadratic data of the problem for one `(V, g)` pair.
///
/// `E_i(α) = α A_i αᴴ - 2 Re[f_i αᴴ] + c_i` with `A_i = |g_i|² X_i X_iᴴ`
/// and `X_i = H̃_i V`.
#[derive(Debug, Clone)]
pub struct To2Workspace {
    x: Vec<CMatrix>,
    g: Vec<C64>,
    pub f: Vec<CVector>,
    pub a: Vec<CMatrix>,
    pub c: Vec<f64>,
    /// `Σ_i A_i`.
    pub pi: CMatrix,
    /// `V Vᴴ`.
    pub t: CMatrix,
    pub eps: Vec<f64>,
    pub gc: GcQuadratics,
    /// Right-hand side of every GC constraint (elements per tile).
    pub tile_size: f64,
    pub ridge: f64,
}

impl To2Workspace {
    /// `ridge_factor` is scaled by `trace(Σ A_i) / (N_u K)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cascaded: &[CMatrix],
        direct: &[CVector],
        v: &CMatrix,
        g: &ReceiverGains,
        noise: &[f64],
        eps: Vec<f64>,
        gc: GcQuadratics,
        tile_size: f64,
        ridge_factor: f64,
    ) -> Self {
        let nu = direct.len();
        let n = cascaded.first().map_or(0, |h| h.nrows());
        let mut x = Vec::with_capacity(nu);
        let mut a = Vec::with_capacity(nu);
        let mut f = Vec::with_capacity(nu);
        let mut c = Vec::with_capacity(nu);
        let mut pi = CMatrix::zeros(n, n);
        for i in 0..nu {
            let xi = &cascaded[i] * v;
            let gi = g.g[i];
            let g2 = gi.norm_sqr();
            let hv: Vec<C64> = (0..v.ncols()).map(|j| dot(&direct[i], &v.column(j).into_owned())).collect();
            let ai = xi.map(|z| z * g2.sqrt()) * xi.adjoint().map(|z| z * g2.sqrt());
            let mut fi = xi.column(i).map(|z| gi * z.conj());
            for (j, hvj) in hv.iter().enumerate() {
                fi -= xi.column(j).map(|z| z.conj() * (*hvj * g2));
            }
            let power: f64 = hv.iter().map(|z| z.norm_sqr()).sum::<f64>() + noise[i];
            c.push(1.0 + g2 * power - 2.0 * (gi.conj() * hv[i]).re);
            pi += &ai;
            x.push(xi);
            a.push(ai);
            f.push(fi);
        }
        let scale = if n > 0 { pi.trace().re / n as f64 } else { 0.0 };
        let ridge = ridge_factor * if scale > 0.0 { scale } else { 1.0 };
        To2Workspace {
            x,
            g: g.g.clone(),
            f,
            a,
            c,
            pi,
            t: v * v.adjoint(),
            eps,
            gc,
            tile_size,
            ridge,
        }
    }

    pub fn n_users(&self) -> usize {
        self.f.len()
    }

    pub fn n_tiles(&self) -> usize {
        self.gc.n_tiles()
    }

    pub fn dim(&self) -> usize {
        self.pi.nrows()
    }

    /// `E_i(α)` through the expanded quadratic form.
    pub fn mse_expanded(&self, i: usize, alpha: &CVector) -> f64 {
        let g2 = self.g[i].norm_sqr();
        let quad: f64 = (0..self.x[i].ncols())
            .map(|j| dot(alpha, &self.x[i].column(j).into_owned()).norm_sqr())
            .sum();
        g2 * quad - 2.0 * re_inner(&self.f[i], alpha) + self.c[i]
    }

    /// Entries of `α A_i`.
    fn alpha_times_a(&self, i: usize, alpha: &CVector) -> CVector {
        let g2 = self.g[i].norm_sqr();
        let mut out = CVector::zeros(alpha.len());
        for j in 0..self.x[i].ncols() {
            let col = self.x[i].column(j);
            let s = dot(alpha, &col.into_owned()) * g2;
            out += col.map(|z| z.conj() * s);
        }
        out
    }

    pub fn objective(&self, alpha: &CVector) -> f64 {
        (0..self.n_users()).map(|i| self.mse_expanded(i, alpha)).sum()
    }

    pub fn gc_values(&self, alpha: &CVector) -> Vec<f64> {
        (0..self.n_tiles()).map(|k| self.gc.value(k, alpha)).collect()
    }

    /// Largest violation of either constraint family, normalized per family
    /// (MSE absolute, GC relative to the tile size).
    pub fn max_violation(&self, alpha: &CVector) -> f64 {
        let mse = (0..self.n_users()).map(|i| self.mse_expanded(i, alpha) - self.eps[i]);
        let gc = self
            .gc_values(alpha)
            .into_iter()
            .map(|q| (q - self.tile_size) / self.tile_size);
        mse.chain(gc).fold(f64::NEG_INFINITY, f64::max).max(0.0)
    }

    fn system_matrix(&self, lambda: &[f64], mu: &[f64]) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::from_diagonal_element(n, n, C64::new(self.ridge, 0.0));
        for (ai, l) in self.a.iter().zip(lambda) {
            m.zip_apply(ai, |acc, x| *acc += x * (1.0 + l));
        }
        for (k, &mk) in mu.iter().enumerate() {
            let b = self.gc.block(k);
            let s = b.nrows();
            m.view_mut((k * s, k * s), (s, s)).zip_apply(b, |acc, x| *acc += x * mk);
        }
        m
    }

    fn weighted_f(&self, lambda: &[f64]) -> CVector {
        let mut out = CVector::zeros(self.dim());
        for (fi, l) in self.f.iter().zip(lambda) {
            out.axpy(C64::new(1.0 + l, 0.0), fi, C64::new(1.0, 0.0));
        }
        out
    }
}

/// Everything the dual iteration needs at one multiplier point.
#[derive(Debug, Clone)]
pub struct DualEval {
    pub alpha: CVector,
    pub value: f64,
    pub grad_lambda: Vec<f64>,
    pub grad_mu: Vec<f64>,
    /// `-∂²d/∂x_j²` for `x = (λ, μ)`, nonnegative.
    pub curvature: Vec<f64>,
}

fn check_multipliers(ws: &To2Workspace, lambda: &[f64], mu: &[f64]) -> Result<(), SolverError> {
    if lambda.len() != ws.n_users() || mu.len() != ws.n_tiles() {
        return Err(numerical("multiplier dimensions do not match the workspace"));
    }
    if lambda.iter().chain(mu).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(numerical("multipliers must be finite and nonnegative"));
    }
    Ok(())
}

/// Cholesky factor of the Lagrangian system matrix `M`.
struct SystemFactor(Cholesky<C64, Dyn>);

impl SystemFactor {
    /// `r M⁻¹` for each row vector `r`.
    fn right_solve(&self, rows: &[CVector]) -> Vec<CVector> {
        if rows.is_empty() {
            return Vec::new();
        }
        // (r M⁻¹)ᵀ = M⁻ᵀ rᵀ = conj(M⁻¹ conj(r)) for Hermitian M
        let b = CMatrix::from_fn(rows[0].len(), rows.len(), |i, j| rows[j][i].conj());
        let x = self.0.solve(&b);
        (0..rows.len()).map(|j| x.column(j).map(|z| z.conj())).collect()
    }
}

fn factor_and_alpha(ws: &To2Workspace, lambda: &[f64], mu: &[f64]) -> Result<(SystemFactor, CVector, CVector), SolverError> {
    check_multipliers(ws, lambda, mu)?;
    let chol = ws
        .system_matrix(lambda, mu)
        .cholesky()
        .ok_or_else(|| numerical("Lagrangian system not positive definite"))?;
    let factor = SystemFactor(chol);
    let fw = ws.weighted_f(lambda);
    let alpha = factor
        .right_solve(std::slice::from_ref(&fw))
        .pop()
        .unwrap_or_else(|| CVector::zeros(0));
    if alpha.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(numerical("non-finite stationary point"));
    }
    Ok((factor, alpha, fw))
}

/// `α*(λ, μ) = [Σ (1+λ_i) f_i] [Σ (1+λ_i) A_i + Σ μ_k Q̃_k + ρ I]⁻¹`.
pub fn alpha_star(lambda: &[f64], mu: &[f64], ws: &To2Workspace) -> Result<CVector, SolverError> {
    factor_and_alpha(ws, lambda, mu).map(|(_, a, _)| a)
}

fn dual_value(ws: &To2Workspace, lambda: &[f64], mu: &[f64], alpha: &CVector, fw: &CVector) -> f64 {
    let constant: f64 = (0..ws.n_users())
        .map(|i| (1.0 + lambda[i]) * ws.c[i] - lambda[i] * ws.eps[i])
        .sum::<f64>()
        - ws.tile_size * mu.iter().sum::<f64>();
    // at α*: α M αᴴ = F M⁻¹ Fᴴ = Re[F α*ᴴ]
    constant - re_inner(fw, alpha)
}

/// `d(λ, μ)`: the minimum over `α` of the Lagrangian (ridge term included).
pub fn dual_function(lambda: &[f64], mu: &[f64], ws: &To2Workspace) -> Result<f64, SolverError> {
    let (_, alpha, fw) = factor_and_alpha(ws, lambda, mu)?;
    Ok(dual_value(ws, lambda, mu, &alpha, &fw))
}

/// Value, minimizer and both gradient blocks at `(λ, μ)`.
///
/// The gradients keep the chain-rule terms through `∂α*/∂λ_l =
/// (f_l - α A_l) M⁻¹` and `∂α*/∂μ_r = -α Q̃_r M⁻¹`, contracted with the
/// Lagrangian's `α`-gradient at `α*`.
pub fn evaluate_dual(lambda: &[f64], mu: &[f64], ws: &To2Workspace) -> Result<DualEval, SolverError> {
    let (factor, alpha, fw) = factor_and_alpha(ws, lambda, mu)?;
    let value = dual_value(ws, lambda, mu, &alpha, &fw);

    // residual of the stationarity condition, α M - F
    let mut alpha_a: Vec<CVector> = Vec::with_capacity(ws.n_users());
    let mut resid = alpha.map(|z| z * ws.ridge) - &fw;
    for (i, &l) in lambda.iter().enumerate() {
        let aa = ws.alpha_times_a(i, &alpha);
        resid.axpy(C64::new(1.0 + l, 0.0), &aa, C64::new(1.0, 0.0));
        alpha_a.push(aa);
    }
    let alpha_q: Vec<CVector> = (0..ws.n_tiles()).map(|k| ws.gc.row_product(k, &alpha)).collect();
    for (k, aq) in alpha_q.iter().enumerate() {
        resid.axpy(C64::new(mu[k], 0.0), aq, C64::new(1.0, 0.0));
    }

    let dirs: Vec<CVector> = (0..ws.n_users())
        .map(|l| &ws.f[l] - &alpha_a[l])
        .chain(alpha_q.iter().map(|aq| -aq))
        .collect();
    let dalphas = factor.right_solve(&dirs);
    let curvature: Vec<f64> = dirs.iter().zip(&dalphas).map(|(d, da)| 2.0 * re_inner(d, da)).collect();
    let grad_lambda = (0..ws.n_users())
        .map(|l| {
            let e = re_inner(&alpha_a[l], &alpha) - 2.0 * re_inner(&ws.f[l], &alpha) + ws.c[l];
            e - ws.eps[l] + 2.0 * re_inner(&resid, &dalphas[l])
        })
        .collect();
    let grad_mu = (0..ws.n_tiles())
        .map(|r| re_inner(&alpha_q[r], &alpha) - ws.tile_size + 2.0 * re_inner(&resid, &dalphas[ws.n_users() + r]))
        .collect();
    Ok(DualEval {
        alpha,
        value,
        grad_lambda,
        grad_mu,
        curvature,
    })
}

pub fn grad_lambda(lambda: &[f64], mu: &[f64], ws: &To2Workspace) -> Result<Vec<f64>, SolverError> {
    evaluate_dual(lambda, mu, ws).map(|e| e.grad_lambda)
}

pub fn grad_mu(lambda: &[f64], mu: &[f64], ws: &To2Workspace) -> Result<Vec<f64>, SolverError> {
    evaluate_dual(lambda, mu, ws).map(|e| e.grad_mu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub dual_value: f64,
    /// Certified relative gap of the solve that produced these multipliers;
    /// infinite when it found no feasible point.
    pub gap: f64,
}

impl DualState {
    /// `λ = 0`, `μ = 1e-6`.
    pub fn initial(n_users: usize, n_tiles: usize) -> Self {
        DualState {
            lambda: vec![0.0; n_users],
            mu: vec![1e-6; n_tiles],
            dual_value: f64::NEG_INFINITY,
            gap: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GamSettings {
    pub step: f64,
    /// Relative multiplier change that counts as converged.
    pub epsilon: f64,
    pub max_iters: usize,
    pub gap_tolerance: f64,
    pub feasibility_tolerance: f64,
    /// Factor applied to the step after every accepted iteration; 1 keeps it fixed.
    pub step_growth: f64,
    pub ridge_factor: f64,
    /// Divide each gradient component by the dual curvature along it.
    pub diagonal_scaling: bool,
    /// Nesterov extrapolation with adaptive restart.
    pub momentum: bool,
}

impl Default for GamSettings {
    fn default() -> Self {
        GamSettings {
            step: 1e-2,
            epsilon: 1e-9,
            max_iters: 200,
            gap_tolerance: 1e-8,
            feasibility_tolerance: 1e-8,
            step_growth: 2.0,
            ridge_factor: 1e-10,
            diagonal_scaling: true,
            momentum: true,
        }
    }
}

impl From<&SolverSettings> for GamSettings {
    fn from(s: &SolverSettings) -> Self {
        GamSettings {
            step: s.gam_step,
            epsilon: s.gam_epsilon,
            max_iters: s.max_gam_iters,
            ridge_factor: s.ridge,
            ..GamSettings::default()
        }
    }
}

/// One accepted ascent step.
#[derive(Debug, Clone, PartialEq)]
pub struct GamRecord {
    pub iteration: usize,
    pub dual_value: f64,
    pub primal: f64,
    /// Relative gap between the objective at the dual minimizer and the
    /// dual value.
    pub gap: f64,
    /// Same, between the ridged objective of the best feasible point and the
    /// best dual value found so far; nonincreasing.
    pub certified_gap: f64,
    pub max_violation: f64,
    pub lambda_norm: f64,
    pub mu_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct To2Solution {
    pub alpha: CVector,
    pub duals: DualState,
    pub iterations: usize,
    pub converged: bool,
    /// Objective `Σ_i E_i` at the returned `α`.
    pub primal: f64,
    /// The dual minimizer violated a constraint and was pulled toward the
    /// feasible warm start.
    pub pulled_to_feasible: bool,
    pub trace: Vec<GamRecord>,
}

/// Per-multiplier curvature used to scale the ascent direction; all ones
/// when scaling is off.
fn step_metric(curvature: &[f64], scaled: bool) -> Vec<f64> {
    if !scaled {
        return vec![1.0; curvature.len()];
    }
    let top = curvature.iter().copied().fold(0.0, f64::max);
    let floor = if top > 0.0 { 1e-8 * top } else { 1.0 };
    curvature.iter().map(|&c| c.max(floor)).collect()
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn is_feasible(ws: &To2Workspace, alpha: &CVector, tol: f64) -> bool {
    ws.max_violation(alpha) <= tol
}

/// Largest step from `from` toward `to` that stays feasible.
fn pull_toward(ws: &To2Workspace, from: &CVector, to: &CVector, tol: f64) -> CVector {
    let at = |theta: f64| from + (to - from).map(|z| z * theta);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if is_feasible(ws, &at(mid), tol) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

struct Candidate {
    alpha: CVector,
    primal: f64,
    /// Ridged objective, the quantity the dual value bounds from below.
    bound: f64,
    pulled: bool,
}

fn relative_gap(primal: f64, dual: f64) -> f64 {
    (primal - dual).abs() / primal.abs().max(1.0)
}

/// Gap between a feasible ridged objective and a dual lower bound. Rounding
/// can put the bound a hair above the objective; that counts as closed.
fn certified(bound: f64, dual: f64) -> f64 {
    (bound - dual).max(0.0) / bound.abs().max(1.0)
}

/// Projected gradient ascent on the dual, starting from `init` (or the
/// default initial multipliers).
///
/// Every feasible primal point met along the way is a candidate; when the
/// dual minimizer is slightly infeasible and `warm_alpha` is feasible, the
/// candidate is the furthest feasible point on the segment between them.
/// The search stops once the best candidate is within `gap_tolerance` of
/// the dual value, or once the multipliers stall at a feasible minimizer.
pub fn solve_to2(
    ws: &To2Workspace,
    warm_alpha: Option<&CVector>,
    init: Option<&DualState>,
    settings: &GamSettings,
) -> Result<To2Solution, SolverError> {
    let (nu, k) = (ws.n_users(), ws.n_tiles());
    let tol = settings.feasibility_tolerance;
    let warm = warm_alpha.filter(|w| is_feasible(ws, w, tol));
    let start = init.cloned().unwrap_or_else(|| DualState::initial(nu, k));
    let mut lambda = start.lambda;
    let mut mu = start.mu;
    let mut eval = evaluate_dual(&lambda, &mu, ws)?;
    let mut step = settings.step;

    let mut best: Option<Candidate> = None;
    let offer = |alpha: &CVector, primal: f64, violation: f64, best: &mut Option<Candidate>| {
        let candidate = if violation <= tol {
            Some((alpha.clone(), primal, false))
        } else if let Some(w) = warm {
            let a = pull_toward(ws, w, alpha, tol);
            let p = ws.objective(&a);
            Some((a, p, true))
        } else {
            None
        };
        if let Some((alpha, primal, pulled)) = candidate {
            let bound = primal + ws.ridge * alpha.norm_squared();
            let c = Candidate {
                alpha,
                primal,
                bound,
                pulled,
            };
            if best.as_ref().is_none_or(|b| c.bound < b.bound) {
                *best = Some(c);
            }
        }
    };
    let primal0 = ws.objective(&eval.alpha);
    offer(&eval.alpha, primal0, ws.max_violation(&eval.alpha), &mut best);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut x_prev: Vec<f64> = lambda.iter().chain(&mu).copied().collect();
    let mut momentum_age = 1usize;
    // every dual value is a lower bound, so the best one certifies the gap
    let mut best_dual = eval.value;
    while iterations < settings.max_iters {
        iterations += 1;
        let x: Vec<f64> = lambda.iter().chain(&mu).copied().collect();
        // extrapolated base point; equals x without momentum or right after a restart
        let beta = if settings.momentum {
            (momentum_age - 1) as f64 / (momentum_age + 2) as f64
        } else {
            0.0
        };
        let (z, base) = if beta > 0.0 {
            let z: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| (a + beta * (a - b)).max(0.0)).collect();
            let (zl, zm) = z.split_at(nu);
            let e = evaluate_dual(zl, zm, ws)?;
            (z, e)
        } else {
            (x.clone(), eval.clone())
        };
        let grad: Vec<f64> = base.grad_lambda.iter().chain(&base.grad_mu).copied().collect();
        let metric = step_metric(&base.curvature, settings.diagonal_scaling);
        let mut accepted = None;
        for _ in 0..80 {
            let y: Vec<f64> = z
                .iter()
                .zip(&grad)
                .zip(&metric)
                .map(|((zi, gi), di)| (zi + step * gi / di).max(0.0))
                .collect();
            let (nl, nm) = y.split_at(nu);
            let trial = evaluate_dual(nl, nm, ws)?;
            let dz: Vec<f64> = y.iter().zip(&z).map(|(a, b)| a - b).collect();
            let sq: f64 = dz.iter().zip(&metric).map(|(d, m)| m * d * d).sum();
            // local curvature along the step must not exceed metric/step; the
            // test uses gradients because dual values flatten out to rounding
            // level long before the primal point is feasible
            let trial_grad = trial.grad_lambda.iter().chain(&trial.grad_mu);
            let bend: f64 = grad.iter().zip(trial_grad).zip(&dz).map(|((a, b), d)| (a - b) * d).sum();
            if bend <= sq / step {
                accepted = Some((y, trial, dz));
                break;
            }
            step *= 0.5;
        }
        let Some((y, trial, dz)) = accepted else {
            converged = best.is_some();
            break;
        };
        let dx: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let change = l2(&dx) / l2(&x).max(1e-12);
        // restart momentum when the new gradient step points against the
        // direction travelled, or the dual value dropped
        let against: f64 = dz.iter().zip(&dx).zip(&metric).map(|((a, b), m)| a * b * m).sum();
        let dropped = trial.value < eval.value - 1e-12 * eval.value.abs().max(1.0);
        if against < 0.0 || dropped {
            momentum_age = 1;
        } else {
            momentum_age += 1;
        }
        x_prev = x;
        let (nl, nm) = y.split_at(nu);
        lambda = nl.to_vec();
        mu = nm.to_vec();
        eval = trial;

        let primal = ws.objective(&eval.alpha);
        let violation = ws.max_violation(&eval.alpha);
        offer(&eval.alpha, primal, violation, &mut best);
        best_dual = best_dual.max(eval.value);
        let certified_gap = best.as_ref().map_or(f64::INFINITY, |b| certified(b.bound, best_dual));
        trace.push(GamRecord {
            iteration: iterations,
            dual_value: eval.value,
            primal,
            gap: relative_gap(primal, eval.value),
            certified_gap,
            max_violation: violation,
            lambda_norm: l2(&lambda),
            mu_norm: l2(&mu),
            step,
        });
        if certified_gap <= settings.gap_tolerance || (change <= settings.epsilon && violation <= tol) {
            converged = true;
            break;
        }
        step *= settings.step_growth;
    }

    // without a feasible point nothing certifies the gap
    let (alpha, primal, pulled, gap) = match best {
        Some(c) => (c.alpha, c.primal, c.pulled, certified(c.bound, best_dual)),
        None => {
            let p = ws.objective(&eval.alpha);
            (eval.alpha.clone(), p, false, f64::INFINITY)
        }
    };
    Ok(To2Solution {
        duals: DualState {
            lambda,
            mu,
            dual_value: eval.value,
            gap,
        },
        alpha,
        iterations,
        converged,
        primal,
        pulled_to_feasible: pulled,
        trace,
    })
}

/// Indices of constraints treated as active.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveSet {
    pub mse: Vec<usize>,
    pub gc: Vec<usize>,
}

/// Constraints whose value is within `tol` of the bound (relative to the
/// tile size for GC).
pub fn active_set(ws: &To2Workspace, alpha: &CVector, tol: f64) -> ActiveSet {
    ActiveSet {
        mse: (0..ws.n_users())
            .filter(|&i| (ws.mse_expanded(i, alpha) - ws.eps[i]).abs() <= tol)
            .collect(),
        gc: (0..ws.n_tiles())
            .filter(|&k| (ws.gc.value(k, alpha) - ws.tile_size).abs() <= tol * ws.tile_size)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularity {
    pub rank: usize,
    pub independent: bool,
}

/// Numerical rank of the stacked active-constraint gradients (real and
/// imaginary parts side by side), threshold `1e-8 σ_max`.
pub fn regularity_check(alpha: &CVector, active: &ActiveSet, ws: &To2Workspace) -> Regularity {
    let mut rows: Vec<CVector> = active.mse.iter().map(|&i| ws.alpha_times_a(i, alpha) - &ws.f[i]).collect();
    rows.extend(active.gc.iter().map(|&k| ws.gc.row_product(k, alpha)));
    gradient_rank(&rows)
}

/// Rank test on arbitrary complex gradient rows.
pub fn gradient_rank(rows: &[CVector]) -> Regularity {
    if rows.is_empty() {
        return Regularity {
            rank: 0,
            independent: true,
        };
    }
    let n = rows[0].len();
    let m = DMatrix::<f64>::from_fn(
        rows.len(),
        2 * n,
        |r, c| if c < n { rows[r][c].re } else { rows[r][c - n].im },
    );
    let sv = m.singular_values();
    let smax = sv.max();
    let rank = if smax > 0.0 {
        sv.iter().filter(|&&s| s > 1e-8 * smax).count()
    } else {
        0
    };
    Regularity {
        rank,
        independent: rank == rows.len(),
    }
}

/// Tab-separated GAM trace: one row per accepted step.
pub fn write_gam_trace(trace: &[GamRecord], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "iteration\tdual_value\tprimal\tgap\tcertified_gap\tmax_violation\tlambda_norm\tmu_norm\tstep"
    )?;
    for r in trace {
        writeln!(
            w,
            "{}\t{:.12e}\t{:.12e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
            r.iteration, r.dual_value, r.primal, r.gap, r.certified_gap, r.max_violation, r.lambda_norm, r.mu_norm, r.step
        )?;
    }
    Ok(())
}

/// `ε_i = 1 / (1 + Σ_i)`.
pub fn mse_targets(sinr_targets: &[f64]) -> Vec<f64> {
    sinr_targets.iter().map(|s| 1.0 / (1.0 + s)).collect()
}

/// MSE of every user under the MMSE receivers, i.e. `1 / (1 + SINR_i)`.
pub fn achieved_mse(precoder: &Precoder, effective: &[CVector], noise: &[f64]) -> Vec<f64> {
    let g = optimal_receivers(effective, &precoder.v, noise);
    effective
        .iter()
        .enumerate()
        .map(|(i, h)| mse(g.g[i], h, &precoder.v, noise[i], i))
        .collect()
}
