//! Interior-point solver for the per-step convex subproblem.
//!
//! Minimizes `smooth(X) + <linear_cost, X> + (M/2)||X - prox_center||^2`
//! over the polyhedral-plus-quadratic constraint set using a log-barrier
//! Newton method with backtracking line search. The proximal term makes the
//! objective strongly convex, so the minimizer is unique.

use nalgebra::{DMatrix, DVector};

use crate::dc::{
    var_index, ConstraintRow, ConvexSubproblem, ObjectiveKind, VARS_PER_SLOT, VQ, VX, VY, VZ,
};
use crate::error::{Error, Result};

/// Termination status of the inner solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    /// Barrier gap below tolerance.
    Optimal,
    /// Iteration budget exhausted; the point is feasible but not converged.
    MaxIters,
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub point: DVector<f64>,
    /// Gradient norm of the last centering problem, scaled by 1/t_bar.
    pub kkt_residual: f64,
    pub inner_iterations: usize,
    pub status: InnerStatus,
}

/// Tuning knobs of the barrier method.
#[derive(Debug, Clone)]
pub struct InnerOptions {
    /// Initial barrier weight on the objective.
    pub t_init: f64,
    /// Multiplicative barrier schedule.
    pub t_growth: f64,
    /// Target duality-gap estimate `n_constraints / t_bar`.
    pub gap_tol: f64,
    /// Newton decrement tolerance for each centering problem.
    pub newton_tol: f64,
    pub max_newton_per_stage: usize,
    pub max_total_newton: usize,
    /// Minimum strict slack required of a warm-start point.
    pub strict_margin: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            t_init: 1.0,
            t_growth: 30.0,
            gap_tol: 1e-5,
            newton_tol: 1e-8,
            max_newton_per_stage: 60,
            max_total_newton: 400,
            strict_margin: 1e-8,
        }
    }
}

/// Smooth part of the subproblem objective (surrogate or distance based,
/// plus linear cost and proximal term), with gradient and Hessian.
struct SmoothObjective<'a> {
    sub: &'a ConvexSubproblem,
}

impl<'a> SmoothObjective<'a> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let sub = self.sub;
        let mut v = sub.linear_cost.dot(x);
        let dx = x - &sub.prox_center;
        v += 0.5 * sub.prox_weight * dx.norm_squared();
        match sub.objective {
            ObjectiveKind::Surrogate => {
                for t in 1..=sub.n_slots {
                    v += sub.slot_ph(x, t).value;
                }
            }
            ObjectiveKind::DistanceSquared => {
                let r = self.smoothed_total_distance(x);
                v += r * r;
            }
        }
        v
    }

    fn smoothed_total_distance(&self, x: &DVector<f64>) -> f64 {
        let eps = self.sub.surrogate.eps;
        (1..=self.sub.n_slots)
            .map(|t| {
                let (dx, dy) = self.sub.slot_diff(x, t);
                (dx * dx + dy * dy + eps * eps).sqrt()
            })
            .sum()
    }

    /// Adds gradient and Hessian of the smooth objective into the
    /// accumulators. Dense rank-one curvature (the squared-total-distance
    /// objective) is emitted as a `(weight, vector)` correction so the
    /// banded part of the Hessian stays banded.
    fn add_derivatives(
        &self,
        x: &DVector<f64>,
        grad: &mut DVector<f64>,
        hess: &mut DMatrix<f64>,
        corrections: &mut Vec<(f64, DVector<f64>)>,
    ) {
        let sub = self.sub;
        grad.axpy(1.0, &sub.linear_cost, 1.0);
        let diff = x - &sub.prox_center;
        grad.axpy(sub.prox_weight, &diff, 1.0);
        for i in 0..x.len() {
            hess[(i, i)] += sub.prox_weight;
        }
        match sub.objective {
            ObjectiveKind::Surrogate => {
                for t in 1..=sub.n_slots {
                    let ph = sub.slot_ph(x, t);
                    add_pair_quadratic(
                        grad,
                        hess,
                        t,
                        [ph.gdx, ph.gdy],
                        [
                            ph.h_iso + ph.h_outer * ph.dx * ph.dx,
                            ph.h_outer * ph.dx * ph.dy,
                            ph.h_iso + ph.h_outer * ph.dy * ph.dy,
                        ],
                        1.0,
                    );
                    grad[var_index(t, VQ)] += sub.surrogate.p1;
                }
            }
            ObjectiveKind::DistanceSquared => {
                // value = R(x)^2 with R = sum_t r_t, r_t smoothed norms.
                // grad = 2R * grad R; hess = 2 grad R grad R^T + 2R hess R.
                let eps = sub.surrogate.eps;
                let r_total = self.smoothed_total_distance(x);
                let mut grad_r = DVector::zeros(x.len());
                for t in 1..=sub.n_slots {
                    let (dx, dy) = sub.slot_diff(x, t);
                    let r = (dx * dx + dy * dy + eps * eps).sqrt();
                    let g = [dx / r, dy / r];
                    // hess of r_t in (dx, dy)
                    let h = [
                        (1.0 - dx * dx / (r * r)) / r,
                        -dx * dy / (r * r * r),
                        (1.0 - dy * dy / (r * r)) / r,
                    ];
                    add_pair_vector(&mut grad_r, t, g);
                    add_pair_quadratic(grad, hess, t, [0.0, 0.0], h, 2.0 * r_total);
                }
                grad.axpy(2.0 * r_total, &grad_r, 1.0);
                corrections.push((2.0, grad_r));
            }
        }
    }
}

/// Scatters a per-slot displacement gradient `[g_dx, g_dy]` onto the x/y
/// variables of slots `t` and `t-1`.
fn add_pair_vector(grad: &mut DVector<f64>, t: usize, g: [f64; 2]) {
    grad[var_index(t, VX)] += g[0];
    grad[var_index(t, VY)] += g[1];
    if t >= 2 {
        grad[var_index(t - 1, VX)] -= g[0];
        grad[var_index(t - 1, VY)] -= g[1];
    }
}

/// Half-bandwidth of the assembled Hessian: variables couple across at
/// most two consecutive slots (the vertical acceleration rows reach back
/// two altitude entries, eight variable indices).
const BANDWIDTH: usize = 2 * VARS_PER_SLOT;
const BAND_ROW: usize = BANDWIDTH + 1;

/// Cholesky factor of a symmetric positive definite banded matrix, stored
/// by diagonals: slot `i * BAND_ROW + d` holds `L[i][i - d]`.
struct BandedCholesky {
    n: usize,
    l: Vec<f64>,
}

fn banded_cholesky(mut a: Vec<f64>, n: usize) -> Option<BandedCholesky> {
    for i in 0..n {
        let jmin = i.saturating_sub(BANDWIDTH);
        for j in jmin..=i {
            let mut sum = a[i * BAND_ROW + (i - j)];
            for k in jmin..j {
                sum -= a[i * BAND_ROW + (i - k)] * a[j * BAND_ROW + (j - k)];
            }
            if j < i {
                a[i * BAND_ROW + (i - j)] = sum / a[j * BAND_ROW];
            } else {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                a[i * BAND_ROW] = sum.sqrt();
            }
        }
    }
    Some(BandedCholesky { n, l: a })
}

impl BandedCholesky {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut y = b.clone();
        for i in 0..n {
            let jmin = i.saturating_sub(BANDWIDTH);
            let mut s = y[i];
            for j in jmin..i {
                s -= self.l[i * BAND_ROW + (i - j)] * y[j];
            }
            y[i] = s / self.l[i * BAND_ROW];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            let jmax = (i + BANDWIDTH).min(n - 1);
            for j in i + 1..=jmax {
                s -= self.l[j * BAND_ROW + (j - i)] * y[j];
            }
            y[i] = s / self.l[i * BAND_ROW];
        }
        y
    }
}

/// Solves `(H + ridge I + sum w_i u_i u_i^T) dir = grad` where `H` holds
/// only banded entries. Rank-one corrections go through the
/// Sherman-Morrison-Woodbury identity around the banded factor; a dense
/// factorization covers the rare heavily-coupled case.
fn newton_direction(
    hess: &DMatrix<f64>,
    corrections: &[(f64, DVector<f64>)],
    grad: &DVector<f64>,
    ridge: f64,
) -> Option<DVector<f64>> {
    let n = grad.len();
    if corrections.len() > 32 {
        let mut h = hess.clone();
        for (w, u) in corrections {
            h.ger(*w, u, u, 1.0);
        }
        if ridge > 0.0 {
            for i in 0..n {
                h[(i, i)] += ridge;
            }
        }
        return h.cholesky().map(|c| c.solve(grad));
    }

    let mut band = vec![0.0; n * BAND_ROW];
    for i in 0..n {
        let jmin = i.saturating_sub(BANDWIDTH);
        for j in jmin..=i {
            band[i * BAND_ROW + (i - j)] = hess[(i, j)];
        }
        band[i * BAND_ROW] += ridge;
    }
    let chol = banded_cholesky(band, n)?;
    let x0 = chol.solve(grad);
    if corrections.is_empty() {
        return Some(x0);
    }
    let k = corrections.len();
    let z: Vec<DVector<f64>> = corrections.iter().map(|(_, u)| chol.solve(u)).collect();
    let mut cap = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for a in 0..k {
        for b in 0..k {
            cap[(a, b)] = corrections[a].1.dot(&z[b]);
        }
        cap[(a, a)] += 1.0 / corrections[a].0;
        rhs[a] = corrections[a].1.dot(&x0);
    }
    let y = cap.cholesky()?.solve(&rhs);
    let mut dir = x0;
    for (j, zj) in z.iter().enumerate() {
        dir.axpy(-y[j], zj, 1.0);
    }
    Some(dir)
}

/// Adds `w * v v^T` to the Hessian for a sparsely supported vector given as
/// (index, value) entries; much cheaper than a dense rank-one update.
fn add_rank_one(hess: &mut DMatrix<f64>, entries: &[(usize, f64)], w: f64) {
    for &(i, vi) in entries {
        for &(j, vj) in entries {
            hess[(i, j)] += w * vi * vj;
        }
    }
}

/// The (index, value) support of a per-slot displacement gradient.
fn pair_entries(t: usize, g: [f64; 2], extra: Option<(usize, f64)>) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(5);
    out.push((var_index(t, VX), g[0]));
    out.push((var_index(t, VY), g[1]));
    if t >= 2 {
        out.push((var_index(t - 1, VX), -g[0]));
        out.push((var_index(t - 1, VY), -g[1]));
    }
    if let Some(e) = extra {
        out.push(e);
    }
    out
}

/// Scatters a per-slot displacement gradient and symmetric 2x2 Hessian
/// `[h_xx, h_xy, h_yy]` (times `scale`) onto the slot-pair variables.
fn add_pair_quadratic(
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
    t: usize,
    g: [f64; 2],
    h: [f64; 3],
    scale: f64,
) {
    add_pair_vector(grad, t, [g[0] * scale, g[1] * scale]);
    let ix = var_index(t, VX);
    let iy = var_index(t, VY);
    let idx: &[(usize, f64)] = if t >= 2 {
        &[(ix, 1.0), (iy, 2.0), (var_index(t - 1, VX), -1.0), (var_index(t - 1, VY), -2.0)]
    } else {
        &[(ix, 1.0), (iy, 2.0)]
    };
    // Treat the 2x2 block through signed (index, axis) pairs: axis |1| = x,
    // |2| = y, sign = displacement coefficient.
    for &(i, ai) in idx {
        for &(j, aj) in idx {
            let hij = match (ai.abs() as i32, aj.abs() as i32) {
                (1, 1) => h[0],
                (2, 2) => h[2],
                _ => h[1],
            };
            hess[(i, j)] += scale * ai.signum() * aj.signum() * hij;
        }
    }
}

/// Barrier contribution of every constraint row: adds `-log(slack)` value,
/// gradient, and Hessian. Returns `None` if any slack is nonpositive.
fn barrier_terms(
    sub: &ConvexSubproblem,
    x: &DVector<f64>,
    grad: Option<(
        &mut DVector<f64>,
        &mut DMatrix<f64>,
        &mut Vec<(f64, DVector<f64>)>,
    )>,
) -> Option<f64> {
    let slacks = sub.constraint_slacks(x);
    if slacks.iter().any(|&s| s <= 0.0) {
        return None;
    }
    let mut value = 0.0;
    for &s in &slacks {
        value -= s.ln();
    }
    let (grad, hess, corrections) = match grad {
        Some(triple) => triple,
        None => return Some(value),
    };

    // Cumulative surrogate/thrust/solar gradients for the causality rows.
    // Row t has g_t = sum_{n<=t} (Ph_n + Pv_n - solar_n) - budget, so its
    // gradient is the running sum of per-slot gradients.
    let mut cum_grad = DVector::zeros(x.len());
    let mut slot_data = Vec::with_capacity(sub.n_slots + 1);
    slot_data.push(None);
    for t in 1..=sub.n_slots {
        let ph = sub.slot_ph(x, t);
        add_pair_vector(&mut cum_grad, t, [ph.gdx, ph.gdy]);
        cum_grad[var_index(t, VQ)] += sub.surrogate.p1;
        cum_grad[var_index(t, VZ)] += sub.w_over_delta - sub.solar_c1;
        if t >= 2 {
            cum_grad[var_index(t - 1, VZ)] -= sub.w_over_delta;
        }
        slot_data.push(Some(ph));
    }
    // Suffix weights for the curvature part: slot n's Hessian appears in
    // every causality row t >= n with weight 1/s_t.
    let mut inv_slack_suffix = vec![0.0; sub.n_slots + 2];
    let causality_slacks: Vec<(usize, f64)> = sub
        .constraints
        .iter()
        .zip(&slacks)
        .filter_map(|(row, &s)| match row {
            ConstraintRow::Causality { t } => Some((*t, s)),
            _ => None,
        })
        .collect();

    // Non-causality rows first.
    for (row, &s) in sub.constraints.iter().zip(&slacks) {
        let inv = 1.0 / s;
        match row {
            ConstraintRow::Affine { terms, .. } => {
                // grad g = terms; -log barrier: grad += terms/s,
                // hess += terms terms^T / s^2.
                for &(i, c) in terms {
                    grad[i] += c * inv;
                }
                for &(i, ci) in terms {
                    for &(j, cj) in terms {
                        hess[(i, j)] += ci * cj * inv * inv;
                    }
                }
            }
            ConstraintRow::HorizStep { t, .. } => {
                let (dx, dy) = sub.slot_diff(x, *t);
                add_pair_quadratic(
                    grad,
                    hess,
                    *t,
                    [2.0 * dx, 2.0 * dy],
                    [2.0, 0.0, 2.0],
                    inv,
                );
                let gq = pair_entries(*t, [2.0 * dx, 2.0 * dy], None);
                add_rank_one(hess, &gq, inv * inv);
            }
            ConstraintRow::FfrBall { t, a, b, alt, .. } => {
                let ix = var_index(*t, VX);
                let iy = var_index(*t, VY);
                let iz = var_index(*t, VZ);
                let g = [
                    2.0 * (x[ix] - a),
                    2.0 * (x[iy] - b),
                    2.0 * (x[iz] - alt),
                ];
                for (k, &i) in [ix, iy, iz].iter().enumerate() {
                    grad[i] += g[k] * inv;
                    hess[(i, i)] += 2.0 * inv;
                }
                for (k, &i) in [ix, iy, iz].iter().enumerate() {
                    for (l, &j) in [ix, iy, iz].iter().enumerate() {
                        hess[(i, j)] += g[k] * g[l] * inv * inv;
                    }
                }
            }
            ConstraintRow::ScaQ { exp } => {
                // g = 1/q^2 - rhs; grad over (dx, dy, q).
                let t = exp.slot;
                let iq = var_index(t, VQ);
                let q = x[iq];
                let gq = -2.0 / (q * q * q) - exp.coef_q;
                add_pair_vector(grad, t, [-exp.coef_dx * inv, -exp.coef_dy * inv]);
                grad[iq] += gq * inv;
                // Curvature of g: only d^2/dq^2 = 6/q^4.
                hess[(iq, iq)] += 6.0 / (q * q * q * q) * inv;
                let gvec = pair_entries(t, [-exp.coef_dx, -exp.coef_dy], Some((iq, gq)));
                add_rank_one(hess, &gvec, inv * inv);
            }
            ConstraintRow::Causality { t } => {
                inv_slack_suffix[*t] += inv;
            }
        }
    }

    // Causality rows: gradient part uses prefix sums of per-slot gradients;
    // curvature part uses suffix sums of inverse slacks.
    if !causality_slacks.is_empty() {
        // Suffix accumulate: weight_n = sum_{t>=n} 1/s_t.
        for t in (1..=sub.n_slots).rev() {
            inv_slack_suffix[t] += inv_slack_suffix[t + 1];
        }
        // Gradient and rank-one terms, walking rows in slot order while
        // maintaining the running per-slot gradient sum.
        let mut running = DVector::zeros(x.len());
        let mut next = 1usize;
        let mut ordered = causality_slacks.clone();
        ordered.sort_by_key(|&(t, _)| t);
        for (t, s) in ordered {
            while next <= t {
                let ph = slot_data[next].as_ref().unwrap();
                add_pair_vector(&mut running, next, [ph.gdx, ph.gdy]);
                running[var_index(next, VQ)] += sub.surrogate.p1;
                running[var_index(next, VZ)] += sub.w_over_delta - sub.solar_c1;
                if next >= 2 {
                    running[var_index(next - 1, VZ)] -= sub.w_over_delta;
                }
                next += 1;
            }
            let inv = 1.0 / s;
            grad.axpy(inv, &running, 1.0);
            // When the storage budget dwarfs consumption the slack is huge
            // and this rank-one term is far below the rest of the Hessian;
            // skipping it only perturbs the Newton model, never the barrier
            // value the line search checks. Active rows go out as rank-one
            // corrections to keep the assembled matrix banded.
            let magnitude = inv * running.norm();
            if magnitude * magnitude > 1e-4 {
                corrections.push((inv * inv, running.clone()));
            }
        }
        // Curvature of the per-slot surrogate inside each row.
        for n_slot in 1..=sub.n_slots {
            let w = inv_slack_suffix[n_slot];
            if w == 0.0 {
                continue;
            }
            let ph = slot_data[n_slot].as_ref().unwrap();
            add_pair_quadratic(
                grad,
                hess,
                n_slot,
                [0.0, 0.0],
                [
                    ph.h_iso + ph.h_outer * ph.dx * ph.dx,
                    ph.h_outer * ph.dx * ph.dy,
                    ph.h_iso + ph.h_outer * ph.dy * ph.dy,
                ],
                w,
            );
        }
    }
    Some(value)
}

/// Minimizes the subproblem from a strictly feasible warm start.
pub fn solve_subproblem(
    sub: &ConvexSubproblem,
    warm: &DVector<f64>,
    options: &InnerOptions,
) -> Result<InnerSolution> {
    let n_vars = warm.len();
    if n_vars != sub.n_slots * VARS_PER_SLOT {
        return Err(Error::Domain(format!(
            "warm start has {} variables, subproblem expects {}",
            n_vars,
            sub.n_slots * VARS_PER_SLOT
        )));
    }
    let obj = SmoothObjective { sub };
    let mut x = warm.clone();
    {
        let min_slack = sub
            .constraint_slacks(&x)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_slack < options.strict_margin {
            return Err(Error::InfeasibleConstruction(format!(
                "warm start is not strictly feasible (worst slack {min_slack:.3e})"
            )));
        }
    }

    let n_cons = sub.constraints.len() as f64;
    let mut t_bar = options.t_init;
    let mut total_newton = 0usize;
    let mut kkt = f64::INFINITY;

    loop {
        // Centering: minimize t_bar * objective + barrier.
        for _ in 0..options.max_newton_per_stage {
            if total_newton >= options.max_total_newton {
                return Ok(InnerSolution {
                    point: x,
                    kkt_residual: kkt,
                    inner_iterations: total_newton,
                    status: InnerStatus::MaxIters,
                });
            }
            let mut grad = DVector::zeros(n_vars);
            let mut hess = DMatrix::zeros(n_vars, n_vars);
            let mut corrections: Vec<(f64, DVector<f64>)> = Vec::new();
            obj.add_derivatives(&x, &mut grad, &mut hess, &mut corrections);
            grad *= t_bar;
            hess *= t_bar;
            for c in &mut corrections {
                c.0 *= t_bar;
            }
            let barrier =
                barrier_terms(sub, &x, Some((&mut grad, &mut hess, &mut corrections)));
            let barrier_value = barrier.ok_or_else(|| Error::InnerSolver {
                message: "iterate left the strictly feasible region".into(),
                kkt_residual: kkt,
            })?;
            kkt = grad.norm() / t_bar;

            // Newton direction with a ridge fallback for borderline
            // conditioning; the ridge scales with the matrix magnitude so
            // it stays effective when barrier terms grow large.
            let diag_scale = (0..n_vars)
                .map(|i| hess[(i, i)].abs())
                .fold(1.0_f64, f64::max);
            let mut ridge = 0.0;
            let dir = loop {
                match newton_direction(&hess, &corrections, &grad, ridge) {
                    Some(dir) => break dir,
                    None => {
                        ridge = if ridge == 0.0 {
                            diag_scale * 1e-14
                        } else {
                            ridge * 100.0
                        };
                        if ridge > diag_scale * 1e-2 {
                            return Err(Error::InnerSolver {
                                message: "Newton system is not positive definite".into(),
                                kkt_residual: kkt,
                            });
                        }
                    }
                }
            };
            let decrement_sq = grad.dot(&dir);
            total_newton += 1;
            if decrement_sq * 0.5 <= options.newton_tol {
                break;
            }

            // Backtracking line search on the centering objective.
            let phi0 = t_bar * obj.value(&x) + barrier_value;
            let slope = -decrement_sq;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &x - &dir * alpha;
                if let Some(bv) = barrier_terms(sub, &cand, None) {
                    let phi = t_bar * obj.value(&cand) + bv;
                    if phi <= phi0 + 1e-4 * alpha * slope {
                        x = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Numerical floor reached; the point is as centered as the
                // arithmetic allows for this stage.
                break;
            }
        }

        if n_cons / t_bar <= options.gap_tol {
            return Ok(InnerSolution {
                point: x,
                kkt_residual: kkt,
                inner_iterations: total_newton,
                status: InnerStatus::Optimal,
            });
        }
        t_bar *= options.t_growth;
    }
}

/// Restores strict feasibility of a hint by blending it toward the
/// subproblem's strictly feasible anchor, with inflated slack variables.
///
/// Returns a point whose every slack exceeds `strict_margin`.
pub fn phase1_feasible(
    sub: &ConvexSubproblem,
    hint: &DVector<f64>,
    strict_margin: f64,
) -> Result<DVector<f64>> {
    let strictness = |x: &DVector<f64>| -> f64 {
        sub.constraint_slacks(x)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    };
    // Inflate the hint's slack variables first: feasible plans often sit
    // exactly on the slack equality, and a small push off it is enough.
    let mut candidate = hint.clone();
    for t in 1..=sub.n_slots {
        let iq = var_index(t, VQ);
        candidate[iq] = candidate[iq].max(1e-4) * (1.0 + 1e-6) + 1e-9;
    }
    if strictness(&candidate) >= strict_margin {
        return Ok(candidate);
    }
    let mut alpha = 0.5;
    for _ in 0..80 {
        let blended = &candidate * (1.0 - alpha) + &sub.anchor * alpha;
        // Blending is convex-safe for every row except the nonconvex side
        // of nothing: all rows are convex, so the blend of two feasible
        // points is feasible; strictness comes from the anchor's margin.
        let mut blended = blended;
        for t in 1..=sub.n_slots {
            let iq = var_index(t, VQ);
            blended[iq] = blended[iq].max(sub.anchor[iq].min(1e-3));
        }
        if strictness(&blended) >= strict_margin {
            return Ok(blended);
        }
        alpha = (alpha * 1.5).min(1.0);
        if alpha >= 1.0 {
            let anchor = sub.anchor.clone();
            if strictness(&anchor) >= strict_margin {
                return Ok(anchor);
            }
            break;
        }
    }
    Err(Error::InfeasibleConstruction(
        "feasibility restoration failed: even the anchor lacks strict margin".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::{build_subproblem, plan_to_vector, BuildOptions};
    use crate::power::fit_solar_linear;
    use crate::scenario::{generate_target_track, initial_plan, ScenarioConfig};
    use approx::assert_relative_eq;

    fn small_setup() -> (
        ScenarioConfig,
        crate::scenario::TargetTrack,
        crate::scenario::TrajectoryPlan,
        BuildOptions,
    ) {
        let mut cfg = ScenarioConfig::reference();
        cfg.n_slots = 8;
        cfg.horizon_t = cfg.n_slots as f64 * cfg.delta;
        let track = generate_target_track(&cfg);
        let plan = initial_plan(&track, &cfg).unwrap();
        let solar = fit_solar_linear(&cfg.solar, [cfg.z_lower, cfg.z_lower + 99.0], 256).unwrap();
        let options = BuildOptions::offline(&cfg, solar);
        (cfg, track, plan, options)
    }

    #[test]
    fn barrier_gradient_matches_finite_differences() {
        let (cfg, track, plan, options) = small_setup();
        let x0 = plan_to_vector(&plan);
        let sub = build_subproblem(&plan, &x0, &track, &cfg, 19.6, &options).unwrap();
        let x = phase1_feasible(&sub, &x0, 1e-8).unwrap();
        let n = x.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut corrections: Vec<(f64, DVector<f64>)> = Vec::new();
        let v0 = barrier_terms(&sub, &x, Some((&mut grad, &mut hess, &mut corrections))).unwrap();
        for (w, u) in &corrections {
            hess.ger(*w, u, u, 1.0);
        }
        let h = 1e-6;
        for i in (0..n).step_by(5) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let vp = barrier_terms(&sub, &xp, None).unwrap();
            let vm = barrier_terms(&sub, &xm, None).unwrap();
            let fd = (vp - vm) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 1e-3 * (1.0 + fd.abs()),
                "barrier gradient component {i}: {} vs {fd}",
                grad[i]
            );
        }
        assert!(v0.is_finite());
        // Hessian symmetry.
        for i in (0..n).step_by(7) {
            for j in (0..n).step_by(7) {
                assert_relative_eq!(hess[(i, j)], hess[(j, i)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn smooth_gradient_matches_finite_differences() {
        let (cfg, track, plan, mut options) = small_setup();
        for kind in [ObjectiveKind::Surrogate, ObjectiveKind::DistanceSquared] {
            options.objective = kind;
            let x0 = plan_to_vector(&plan);
            let sub = build_subproblem(&plan, &x0, &track, &cfg, 19.6, &options).unwrap();
            let obj = SmoothObjective { sub: &sub };
            let x = phase1_feasible(&sub, &x0, 1e-8).unwrap();
            let n = x.len();
            let mut grad = DVector::zeros(n);
            let mut hess = DMatrix::zeros(n, n);
            let mut corrections: Vec<(f64, DVector<f64>)> = Vec::new();
            obj.add_derivatives(&x, &mut grad, &mut hess, &mut corrections);
            let h = 1e-6;
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
                assert!(
                    (grad[i] - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
                    "{kind:?} gradient component {i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn solver_reaches_stationarity() {
        let (cfg, track, plan, options) = small_setup();
        let x0 = plan_to_vector(&plan);
        let sub = build_subproblem(&plan, &x0, &track, &cfg, 19.6, &options).unwrap();
        let warm = phase1_feasible(&sub, &x0, 1e-8).unwrap();
        let sol = solve_subproblem(&sub, &warm, &InnerOptions::default()).unwrap();
        assert_eq!(sol.status, InnerStatus::Optimal);
        // The solution stays feasible.
        let min_slack = sub
            .constraint_slacks(&sol.point)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(min_slack > 0.0);
        // And improves on the warm start.
        let obj = SmoothObjective { sub: &sub };
        assert!(obj.value(&sol.point) <= obj.value(&warm) + 1e-9);
    }

    #[test]
    fn solution_is_unique_across_warm_starts() {
        use rand::Rng;
        use rand::SeedableRng;
        let (cfg, track, plan, options) = small_setup();
        let x0 = plan_to_vector(&plan);
        let sub = build_subproblem(&plan, &x0, &track, &cfg, 19.6, &options).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut solutions = Vec::new();
        for _ in 0..3 {
            let mut hint = x0.clone();
            for v in hint.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
            let warm = phase1_feasible(&sub, &hint, 1e-8).unwrap();
            let sol = solve_subproblem(&sub, &warm, &InnerOptions::default()).unwrap();
            solutions.push(sol.point);
        }
        for s in &solutions[1..] {
            assert!((s - &solutions[0]).norm() < 1e-3, "distinct minimizers found");
        }
    }

    #[test]
    fn phase1_rejects_nothing_when_hint_is_interior() {
        let (cfg, track, plan, options) = small_setup();
        let x0 = plan_to_vector(&plan);
        let sub = build_subproblem(&plan, &x0, &track, &cfg, 19.6, &options).unwrap();
        let interior = phase1_feasible(&sub, &sub.anchor.clone(), 1e-8).unwrap();
        let min_slack = sub
            .constraint_slacks(&interior)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(min_slack >= 1e-8);
    }
}
