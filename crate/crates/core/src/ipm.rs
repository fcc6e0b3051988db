//! Primal-dual interior-point engine for box-dual quantile problems.
//!
//! Both the linear-spline LP and the cubic-spline QP share one shape. With a
//! constraint matrix `C` (`m x q`), right-hand side `b`, cost `a` and a PSD
//! matrix `Omega` (zero for the LP), the primal is
//!
//! ```text
//! min  a'theta + 1'u + theta' Omega theta / 2   s.t.  C theta + u - v = b,  u, v >= 0
//! ```
//!
//! and its dual is
//!
//! ```text
//! max  b'zeta - theta' Omega theta / 2          s.t.  C'zeta - Omega theta = a,  0 <= zeta <= 1.
//! ```
//!
//! The complementarity pairs are `u (1 - zeta)` and `v zeta`. Newton steps are
//! reduced to the `q x q` system `(C' W C + Omega) dtheta = rhs` with a diagonal
//! `W`, factorized by a banded Cholesky in an operator-supplied column order.
//! Steps follow Mehrotra's predictor-corrector scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandedSym, SparseRows};

/// A constraint matrix `C` as seen by the solver.
pub trait BoxDualOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = C x`
    fn mul_into(&self, x: &[f64], out: &mut [f64]);
    /// `out = C' z`
    fn tr_mul_into(&self, z: &[f64], out: &mut [f64]);
    /// Band position of every column; `C' W C` is banded in this order.
    fn band_positions(&self) -> Vec<usize>;
    /// Half-bandwidth of `C' W C` in band order.
    fn gram_bandwidth(&self) -> usize;
    /// `m += C' diag(w) C`, written in band order.
    fn add_weighted_gram(&self, w: &[f64], m: &mut BandedSym);
    /// Squared Euclidean norm of every row.
    fn row_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        (0..self.nrows())
            .map(|i| {
                self.row_into(i, &mut out);
                out.iter().map(|v| v * v).sum()
            })
            .collect()
    }
    /// Row `i` of `C`, written densely into `out`.
    fn row_into(&self, i: usize, out: &mut [f64]) {
        let mut unit = vec![0.0; self.nrows()];
        unit[i] = 1.0;
        self.tr_mul_into(&unit, out);
    }
}

impl BoxDualOperator for SparseRows {
    fn nrows(&self) -> usize {
        SparseRows::nrows(self)
    }

    fn ncols(&self) -> usize {
        SparseRows::ncols(self)
    }

    fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        SparseRows::mul_into(self, x, out)
    }

    fn tr_mul_into(&self, z: &[f64], out: &mut [f64]) {
        SparseRows::tr_mul_into(self, z, out)
    }

    fn band_positions(&self) -> Vec<usize> {
        (0..SparseRows::ncols(self)).collect()
    }

    fn gram_bandwidth(&self) -> usize {
        self.row_bandwidth()
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let (idx, val) = self.row(i);
        for (&j, v) in idx.iter().zip(val) {
            out[j] += v;
        }
    }

    fn add_weighted_gram(&self, w: &[f64], m: &mut BandedSym) {
        for (i, wi) in w.iter().enumerate() {
            let (idx, val) = self.row(i);
            for a in 0..idx.len() {
                for b in 0..=a {
                    m.add(idx[a], idx[b], wi * val[a] * val[b]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

/// Diagnostics attached to every solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub iterations: usize,
    /// Complementarity gap `u'(1 - zeta) + v'zeta` at exit.
    pub gap: f64,
    /// `max |C theta + u - v - b|`.
    pub primal_residual: f64,
    /// `max |C'zeta - Omega theta - a|`.
    pub dual_residual: f64,
    /// Proximal shift added to the reduced system, if any was needed.
    pub regularization: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    /// Tolerance for the complementarity gap, relative to the dual objective,
    /// and for the primal-dual objective difference, relative to the primal
    /// objective (both taken net of `objective_offset`).
    pub gap_tol: f64,
    /// Residual tolerance relative to `1 + max(|b|, |C theta|)` (primal) and
    /// `1 + max(|a|, |C'zeta|, |Omega theta|, |Omega| |theta|)` (dual).
    pub feas_tol: f64,
    /// Constant separating the engine's objectives from the caller's.
    pub objective_offset: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the boundary taken per step.
    pub step_factor: f64,
    /// Use one step length for all variables; required when `Omega != 0`.
    pub common_step: bool,
    /// Allow a proximal shift when the reduced system cannot be factorized.
    pub regularize: bool,
    /// Relative pivot threshold for the up-front rank check of `C'C`.
    pub rank_tol: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            objective_offset: 0.0,
            max_iter: 100,
            step_factor: 0.99995,
            common_step: false,
            regularize: false,
            rank_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpmOutput {
    pub theta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub report: SolverReport,
}

/// `Omega` in band order, with the positions used to build it.
pub struct BandedPenalty<'a> {
    pub matrix: &'a BandedSym,
    /// `Omega theta` in the original column order.
    pub apply: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
}

struct Workspace {
    cx: Vec<f64>,
    ctz: Vec<f64>,
    omega_theta: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
    w: Vec<f64>,
    g: Vec<f64>,
    rhs: Vec<f64>,
    band_tmp: Vec<f64>,
}

/// Solves the box-dual pair described in the module docs.
pub fn solve<O: BoxDualOperator + ?Sized>(
    op: &O,
    penalty: Option<BandedPenalty<'_>>,
    b: &[f64],
    a: &[f64],
    init_zeta: &[f64],
    settings: &IpmSettings,
) -> Result<IpmOutput> {
    let m = op.nrows();
    let q = op.ncols();
    if b.len() != m || a.len() != q || init_zeta.len() != m {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: C is {m}x{q}, b has {}, a has {}, zeta has {}",
            b.len(),
            a.len(),
            init_zeta.len()
        )));
    }
    if let Some(z) = init_zeta.iter().find(|z| !(**z > 0.0 && **z < 1.0)) {
        return Err(Error::InvalidInput(format!("initial zeta must lie strictly inside (0, 1), found {z}")));
    }
    let pos = op.band_positions();
    let bw = op.gram_bandwidth().max(penalty.as_ref().map_or(0, |p| p.matrix.bandwidth()));
    let mut normal = BandedSym::zeros(q, bw);
    let omega_band = penalty.as_ref().map(|p| {
        let mut o = BandedSym::zeros(q, bw);
        for i in 0..q {
            for j in i.saturating_sub(p.matrix.bandwidth())..=i {
                let v = p.matrix.get(i, j);
                if v != 0.0 {
                    o.add(i, j, v);
                }
            }
        }
        o
    });

    // rank of C, judged on unit-norm rows so that row scaling does not matter
    let inv_norms: Vec<f64> = op.row_norms_sq().iter().map(|r| if *r > 0.0 { 1.0 / r } else { 0.0 }).collect();
    let mut probe = BandedSym::zeros(q, bw);
    op.add_weighted_gram(&inv_norms, &mut probe);
    if let Some(o) = &omega_band {
        let o_scale = o.trace() / q.max(1) as f64;
        if o_scale > 0.0 {
            for i in 0..q {
                for j in i.saturating_sub(bw)..=i {
                    let v = o.get(i, j);
                    if v != 0.0 {
                        probe.add(i, j, v / o_scale);
                    }
                }
            }
        }
    }
    let ones = vec![1.0; m];
    normal.clear();
    if let Some(o) = &omega_band {
        normal.copy_from(o);
    }
    op.add_weighted_gram(&ones, &mut normal);
    let scale = (normal.trace() / q.max(1) as f64).max(f64::MIN_POSITIVE);
    let mut regularization: Option<f64> = None;
    if let Err(fail) = probe.factorize(settings.rank_tol) {
        if !settings.regularize {
            let column = pos.iter().position(|&p| p == fail.position).unwrap_or(fail.position);
            return Err(Error::RankDeficient { column, pivot: fail.pivot });
        }
        regularization = Some(1e-9 * scale);
    }

    let mut ws = Workspace {
        cx: vec![0.0; m],
        ctz: vec![0.0; q],
        omega_theta: vec![0.0; q],
        r1: vec![0.0; m],
        r2: vec![0.0; q],
        w: vec![0.0; m],
        g: vec![0.0; m],
        rhs: vec![0.0; q],
        band_tmp: vec![0.0; q],
    };

    // starting point: least-squares theta, residual split into u - v with a common shift
    let mut theta = vec![0.0; q];
    {
        let mut init = normal.clone();
        init.add_diag(1e-10 * scale + regularization.unwrap_or(0.0));
        init.factorize(0.0).map_err(|f| {
            Error::Numerical(format!("initial least-squares system not positive definite (pivot {:e})", f.pivot))
        })?;
        op.tr_mul_into(b, &mut ws.ctz);
        solve_permuted(&init, &pos, &ws.ctz, &mut theta, &mut ws.band_tmp);
    }
    op.mul_into(&theta, &mut ws.cx);
    let mean_abs = ws.cx.iter().zip(b).map(|(c, bb)| (bb - c).abs()).sum::<f64>() / m.max(1) as f64;
    let b_inf = inf_norm(b);
    let shift = (0.1 * mean_abs).max(1e-6 * (1.0 + b_inf));
    let mut zeta = init_zeta.to_vec();
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; m];
    for i in 0..m {
        let r = b[i] - ws.cx[i];
        u[i] = r.max(0.0) + shift;
        v[i] = (-r).max(0.0) + shift;
    }

    let a_inf = inf_norm(a);
    // max absolute row sum of Omega: Omega theta carries rounding error of order |Omega| |theta| eps
    let omega_inf = omega_band.as_ref().map_or(0.0, |o| {
        (0..q)
            .map(|i| {
                let lo = i.saturating_sub(bw);
                let hi = (i + bw).min(q - 1);
                (lo..=hi).map(|j| o.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    });
    let mut du = vec![0.0; m];
    let mut dv = vec![0.0; m];
    let mut dz = vec![0.0; m];
    let mut dtheta = vec![0.0; q];
    let mut r3 = vec![0.0; m];
    let mut r4 = vec![0.0; m];

    let mut iterations = 0;
    loop {
        // residuals
        op.mul_into(&theta, &mut ws.cx);
        op.tr_mul_into(&zeta, &mut ws.ctz);
        match &penalty {
            Some(p) => (p.apply)(&theta, &mut ws.omega_theta),
            None => ws.omega_theta.iter_mut().for_each(|x| *x = 0.0),
        }
        for i in 0..m {
            ws.r1[i] = b[i] - ws.cx[i] - u[i] + v[i];
        }
        for j in 0..q {
            ws.r2[j] = a[j] - ws.ctz[j] + ws.omega_theta[j];
        }
        let gap: f64 = (0..m).map(|i| u[i] * (1.0 - zeta[i]) + v[i] * zeta[i]).sum();
        let dual_obj: f64 = b.iter().zip(&zeta).map(|(x, y)| x * y).sum::<f64>()
            - 0.5 * theta.iter().zip(&ws.omega_theta).map(|(x, y)| x * y).sum::<f64>();
        let pres = inf_norm(&ws.r1);
        let dres = inf_norm(&ws.r2);
        let report = move |status, iterations| SolverReport {
            status,
            iterations,
            gap,
            primal_residual: pres,
            dual_residual: dres,
            regularization,
        };
        log::trace!(
            "iter {iterations}: gap {gap:.3e} dual {dual_obj:.6e} pres {pres:.3e} dres {dres:.3e} reg {regularization:?}"
        );
        let dres_scale =
            a_inf.max(inf_norm(&ws.ctz)).max(inf_norm(&ws.omega_theta)).max(omega_inf * inf_norm(&theta));
        // primal minus dual objective, which also carries theta'r2
        let quad: f64 = theta.iter().zip(&ws.omega_theta).map(|(x, y)| x * y).sum();
        let primal_obj = a.iter().zip(&theta).map(|(x, y)| x * y).sum::<f64>() + u.iter().sum::<f64>() + 0.5 * quad;
        let obj_gap = primal_obj + 0.5 * quad - b.iter().zip(&zeta).map(|(x, y)| x * y).sum::<f64>();
        let quad_floor = f64::EPSILON * omega_inf * inf_norm(&theta) * theta.iter().map(|t| t.abs()).sum::<f64>();
        if gap <= settings.gap_tol * (1.0 + (dual_obj - settings.objective_offset).abs())
            && obj_gap.abs() <= settings.gap_tol * (1.0 + (primal_obj - settings.objective_offset).abs()) + quad_floor
            && pres <= settings.feas_tol * (1.0 + b_inf.max(inf_norm(&ws.cx)))
            && dres <= settings.feas_tol * (1.0 + dres_scale)
        {
            return Ok(IpmOutput { theta, zeta, u, v, report: report(SolverStatus::Optimal, iterations) });
        }
        if !(gap.is_finite() && pres.is_finite() && dres.is_finite()) {
            return Err(Error::StepCollapse(Box::new(report(SolverStatus::NumericalFailure, iterations))));
        }
        if iterations >= settings.max_iter {
            return Err(Error::IterationLimit(Box::new(report(SolverStatus::MaxIter, iterations))));
        }
        iterations += 1;

        // reduced system C' W C + Omega
        for i in 0..m {
            let q_i = u[i] / (1.0 - zeta[i]) + v[i] / zeta[i];
            ws.w[i] = 1.0 / q_i;
        }
        loop {
            match &omega_band {
                Some(o) => normal.copy_from(o),
                None => normal.clear(),
            }
            op.add_weighted_gram(&ws.w, &mut normal);
            if let Some(rho) = regularization {
                normal.add_diag(rho);
            }
            match normal.factorize(0.0) {
                Ok(()) => break,
                Err(fail) => {
                    let next = match regularization {
                        None if settings.regularize => 1e-9 * scale,
                        Some(rho) if settings.regularize && rho < 1e-3 * scale => rho * 100.0,
                        _ => {
                            return Err(Error::Numerical(format!(
                                "reduced system lost positive definiteness at iteration {iterations} (pivot {:e})",
                                fail.pivot
                            )))
                        }
                    };
                    log::debug!("regularizing reduced system with shift {next:e}");
                    regularization = Some(next);
                }
            }
        }

        // predictor
        for i in 0..m {
            r3[i] = -v[i] * zeta[i];
            r4[i] = -u[i] * (1.0 - zeta[i]);
        }
        newton_direction(op, &normal, &pos, &zeta, &u, &v, &r3, &r4, &mut ws, &mut dtheta, &mut dz, &mut du, &mut dv);
        let (ap, ad) = step_lengths(&zeta, &u, &v, &dz, &du, &dv, 1.0, settings.common_step);
        if ap.max(ad) < 1e-12 {
            return Err(Error::StepCollapse(Box::new(report(SolverStatus::NumericalFailure, iterations))));
        }
        let mu = gap / (2 * m) as f64;
        let mu_aff: f64 = (0..m)
            .map(|i| {
                (u[i] + ap * du[i]) * (1.0 - zeta[i] - ad * dz[i]) + (v[i] + ap * dv[i]) * (zeta[i] + ad * dz[i])
            })
            .sum::<f64>()
            / (2 * m) as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        for i in 0..m {
            r3[i] = sigma * mu - v[i] * zeta[i] - dv[i] * dz[i];
            r4[i] = sigma * mu - u[i] * (1.0 - zeta[i]) + du[i] * dz[i];
        }
        newton_direction(op, &normal, &pos, &zeta, &u, &v, &r3, &r4, &mut ws, &mut dtheta, &mut dz, &mut du, &mut dv);
        let (ap, ad) = step_lengths(&zeta, &u, &v, &dz, &du, &dv, settings.step_factor, settings.common_step);

        for j in 0..q {
            theta[j] += ap * dtheta[j];
        }
        for i in 0..m {
            u[i] += ap * du[i];
            v[i] += ap * dv[i];
            zeta[i] += ad * dz[i];
        }
    }
}

/// Solves `M x = rhs` where `M` is factorized in band order.
fn solve_permuted(m: &BandedSym, pos: &[usize], rhs: &[f64], out: &mut [f64], tmp: &mut [f64]) {
    for (j, &p) in pos.iter().enumerate() {
        tmp[p] = rhs[j];
    }
    m.solve_in_place(tmp);
    for (j, &p) in pos.iter().enumerate() {
        out[j] = tmp[p];
    }
}

#[allow(clippy::too_many_arguments)]
fn newton_direction<O: BoxDualOperator + ?Sized>(
    op: &O,
    normal: &BandedSym,
    pos: &[usize],
    zeta: &[f64],
    u: &[f64],
    v: &[f64],
    r3: &[f64],
    r4: &[f64],
    ws: &mut Workspace,
    dtheta: &mut [f64],
    dz: &mut [f64],
    du: &mut [f64],
    dv: &mut [f64],
) {
    let m = zeta.len();
    // g = r1 - r4/(1-zeta) + r3/zeta;  dzeta = W (g - C dtheta)
    for i in 0..m {
        ws.g[i] = ws.r1[i] - r4[i] / (1.0 - zeta[i]) + r3[i] / zeta[i];
        ws.cx[i] = ws.w[i] * ws.g[i];
    }
    op.tr_mul_into(&ws.cx, &mut ws.rhs);
    for (r, r2) in ws.rhs.iter_mut().zip(&ws.r2) {
        *r -= r2;
    }
    solve_permuted(normal, pos, &ws.rhs, dtheta, &mut ws.band_tmp);

    op.mul_into(dtheta, &mut ws.cx);
    for i in 0..m {
        dz[i] = ws.w[i] * (ws.g[i] - ws.cx[i]);
        dv[i] = (r3[i] - v[i] * dz[i]) / zeta[i];
        du[i] = (r4[i] + u[i] * dz[i]) / (1.0 - zeta[i]);
    }
}

#[allow(clippy::too_many_arguments)]
fn step_lengths(
    zeta: &[f64],
    u: &[f64],
    v: &[f64],
    dz: &[f64],
    du: &[f64],
    dv: &[f64],
    factor: f64,
    common: bool,
) -> (f64, f64) {
    let mut ap: f64 = f64::INFINITY;
    let mut ad: f64 = f64::INFINITY;
    for i in 0..zeta.len() {
        if du[i] < 0.0 {
            ap = ap.min(-u[i] / du[i]);
        }
        if dv[i] < 0.0 {
            ap = ap.min(-v[i] / dv[i]);
        }
        if dz[i] < 0.0 {
            ad = ad.min(-zeta[i] / dz[i]);
        } else if dz[i] > 0.0 {
            ad = ad.min((1.0 - zeta[i]) / dz[i]);
        }
    }
    let ap = (factor * ap).min(1.0);
    let ad = (factor * ad).min(1.0);
    if common {
        let s = ap.min(ad);
        (s, s)
    } else {
        (ap, ad)
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
