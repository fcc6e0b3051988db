//! Box-dual LP solver: `max b'zeta  s.t.  C'zeta = a,  0 <= zeta <= 1`.
//!
//! The primal partner is `min a'theta + 1'u  s.t.  C theta + u - v = b`, so
//! `theta` comes back as the multiplier of the equality constraints. Ordinary
//! quantile regression is the case `C = X`, `a = (1 - tau) X'1`.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{expand_coefficients, Dataset, LpProblem};
use crate::error::{Error, Result};
use crate::ipm::{self, BoxDualOperator, IpmSettings, SolverReport};
use crate::linalg::SparseRows;
use crate::splines::QuantileGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpSettings {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub step_factor: f64,
    pub rank_tol: f64,
    /// Replace the interior solution by a nearby vertex when that does not raise the objective.
    pub polish: bool,
}

impl Default for LpSettings {
    fn default() -> Self {
        Self { gap_tol: 1e-8, feas_tol: 1e-8, max_iter: 100, step_factor: 0.99995, rank_tol: 1e-10, polish: true }
    }
}

impl LpSettings {
    fn to_ipm(self) -> IpmSettings {
        IpmSettings {
            gap_tol: self.gap_tol,
            feas_tol: self.feas_tol,
            objective_offset: 0.0,
            max_iter: self.max_iter,
            step_factor: self.step_factor,
            common_step: false,
            regularize: false,
            rank_tol: self.rank_tol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub theta: DVector<f64>,
    pub zeta: DVector<f64>,
    pub report: SolverReport,
}

/// Solves the box-dual LP for any constraint operator.
pub fn solve_bounded_dual<O: BoxDualOperator + ?Sized>(
    c: &O,
    a: &[f64],
    b: &[f64],
    init_zeta: &[f64],
    settings: &LpSettings,
) -> Result<LpSolution> {
    let out = ipm::solve(c, None, b, a, init_zeta, &settings.to_ipm())?;
    let mut theta = out.theta;
    if settings.polish {
        if let Some(vertex) = polish_vertex(c, a, b, &theta) {
            theta = vertex;
        }
    }
    Ok(LpSolution { theta: DVector::from_vec(theta), zeta: DVector::from_vec(out.zeta), report: out.report })
}

/// Basic solution through the `q` independent rows of `C` closest to being
/// tight at `theta`, returned only if its primal objective is no larger.
pub fn polish_vertex<O: BoxDualOperator + ?Sized>(c: &O, a: &[f64], b: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
    let (m, q) = (c.nrows(), c.ncols());
    let mut ct = vec![0.0; m];
    c.mul_into(theta, &mut ct);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| (b[i] - ct[i]).abs().total_cmp(&(b[j] - ct[j]).abs()).then(i.cmp(&j)));

    let mut row = vec![0.0; q];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut chosen: Vec<(Vec<f64>, f64)> = Vec::with_capacity(q);
    for &i in &order {
        if chosen.len() == q {
            break;
        }
        c.row_into(i, &mut row);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut resid: Vec<f64> = row.iter().map(|v| v / norm).collect();
        for e in &basis {
            let d: f64 = resid.iter().zip(e).map(|(x, y)| x * y).sum();
            resid.iter_mut().zip(e).for_each(|(x, y)| *x -= d * y);
        }
        let rn = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn < 1e-9 {
            continue;
        }
        resid.iter_mut().for_each(|v| *v /= rn);
        basis.push(resid);
        chosen.push((row.clone(), b[i]));
    }
    if chosen.len() < q {
        return None;
    }
    let m_sys = DMatrix::from_fn(q, q, |r, k| chosen[r].0[k]);
    let rhs = DVector::from_fn(q, |r, _| chosen[r].1);
    let vertex = m_sys.lu().solve(&rhs)?;
    if vertex.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let before = primal_objective(c, a, b, theta);
    let after = primal_objective(c, a, b, vertex.as_slice());
    (after <= before).then(|| vertex.as_slice().to_vec())
}

/// `[(1 - tau_1) 1_n, ..., (1 - tau_L) 1_n, 0.5 1_{p(L-1)}]`.
pub fn default_init(grid: &QuantileGrid, n: usize, p: usize) -> Vec<f64> {
    default_init_levels(grid.levels(), n, p)
}

/// [`default_init`] for an arbitrary list of levels (no grid validation).
pub fn default_init_levels(levels: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * levels.len() + p * levels.len().saturating_sub(1));
    for &tau in levels {
        out.extend(std::iter::repeat_n(1.0 - tau, n));
    }
    out.extend(std::iter::repeat_n(0.5, p * levels.len().saturating_sub(1)));
    out
}

/// Solves an assembled linear-spline problem from the default start.
///
/// When heavy smoothing leaves the hat-basis system numerically singular, the
/// solve is repeated in a truncated-power basis where each slope-jump row is a
/// single coordinate.
pub fn solve_lp(problem: &LpProblem, settings: &LpSettings) -> Result<LpSolution> {
    let design = &problem.c;
    let init = default_init_levels(problem.meta.basis.grid().levels(), design.n(), design.p());
    match solve_bounded_dual(design, problem.a.as_slice(), problem.b.as_slice(), &init, settings) {
        Err(e) if crate::qp_ipm::recoverable(&e) && problem.meta.c > 0.0 => {
            log::debug!("hat-basis LP solve failed ({e}); retrying in truncated-power coordinates");
            let t = truncated_power_transform(problem.meta.basis.grid().levels());
            let p = design.p();
            let reparam = design.reparameterized(&t);
            let k = t.nrows();
            let mut a = vec![0.0; reparam.ncols()];
            for j in 0..p {
                let block = t.transpose() * problem.a.rows(j * k, k);
                a[j * k..(j + 1) * k].copy_from_slice(block.as_slice());
            }
            let sol = solve_bounded_dual(&reparam, &a, problem.b.as_slice(), &init, settings)?;
            Ok(LpSolution { theta: expand_coefficients(&t, sol.theta.as_slice(), p), ..sol })
        }
        other => other,
    }
}

/// Hat-basis coefficients of `1`, `tau - tau_1` and `(tau - tau_l)_+` for the interior knots.
pub fn truncated_power_transform(levels: &[f64]) -> DMatrix<f64> {
    let l = levels.len();
    DMatrix::from_fn(l, l, |r, c| match c {
        0 => 1.0,
        1 => levels[r] - levels[0],
        _ => (levels[r] - levels[c - 1]).max(0.0),
    })
}

/// Primal objective `a'theta + Σ max(b - C theta, 0)` of the LP.
pub fn primal_objective<O: BoxDualOperator + ?Sized>(c: &O, a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let mut ct = vec![0.0; c.nrows()];
    c.mul_into(theta, &mut ct);
    let lin: f64 = a.iter().zip(theta).map(|(x, y)| x * y).sum();
    lin + b.iter().zip(&ct).map(|(bi, ci)| (bi - ci).max(0.0)).sum::<f64>()
}

/// Check loss `rho_tau(r) = r (tau - I(r < 0))`.
#[inline]
pub fn check_loss(r: f64, tau: f64) -> f64 {
    if r < 0.0 {
        r * (tau - 1.0)
    } else {
        r * tau
    }
}

/// `Σ_t rho_tau(y_t - x_t' beta)`.
pub fn qr_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], tau: f64) -> f64 {
    (0..x.nrows())
        .map(|t| {
            let fit: f64 = (0..x.ncols()).map(|j| x[(t, j)] * beta[j]).sum();
            check_loss(y[t] - fit, tau)
        })
        .sum()
}

/// Ordinary quantile regression at a single level.
pub fn quantile_regression(data: &Dataset, tau: f64, settings: &LpSettings) -> Result<LpSolution> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::TauOutOfRange { tau, lower: 0.0, upper: 1.0 });
    }
    let x = data.x();
    let op = SparseRows::from_dense(x);
    let mut a = vec![0.0; x.ncols()];
    op.tr_mul_into(&vec![1.0 - tau; x.nrows()], &mut a);
    let init = vec![1.0 - tau; x.nrows()];
    solve_bounded_dual(&op, &a, data.y().as_slice(), &init, settings)
}
