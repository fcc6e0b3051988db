//! Estimation API: per-level quantile regression and spline quantile regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{build_lp_with_cap, build_qp_with_cap, spar_to_c, Dataset, DEFAULT_MAX_ROWS};
use crate::error::{Error, Result};
use crate::ipm::{SolverReport, SolverStatus};
use crate::lp_ipm::{check_loss, quantile_regression, solve_lp, LpSettings};
use crate::qp_ipm::{solve_qp, QpSettings};
use crate::splines::{check_weights, delta_phidot, uniform_weights, PenaltyMatrix, QuantileGrid, SplineBasis, SplineKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qr,
    SqrLinear,
    SqrCubic,
}

impl Method {
    pub fn spline_kind(self) -> Option<SplineKind> {
        match self {
            Method::Qr => None,
            Method::SqrLinear => Some(SplineKind::Linear),
            Method::SqrCubic => Some(SplineKind::Cubic),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Qr => "qr",
            Method::SqrLinear => "linear",
            Method::SqrCubic => "cubic",
        }
    }
}

/// Smoothing level, either on the `spar` scale or as the raw scalar `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    Spar(f64),
    C(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub method: Method,
    pub smoothing: Option<Smoothing>,
    /// Per-knot weights `w_l`; unit weights when absent.
    pub weights: Option<Vec<f64>>,
    pub lp: LpSettings,
    pub qp: QpSettings,
    pub max_rows: usize,
}

impl FitConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            smoothing: None,
            weights: None,
            lp: LpSettings::default(),
            qp: QpSettings::default(),
            max_rows: DEFAULT_MAX_ROWS,
        }
    }

    pub fn smoothing(mut self, s: Smoothing) -> Self {
        self.smoothing = Some(s);
        self
    }

    pub fn weights(mut self, w: Vec<f64>) -> Self {
        self.weights = Some(w);
        self
    }

    pub fn lp_settings(mut self, s: LpSettings) -> Self {
        self.lp = s;
        self
    }

    pub fn qp_settings(mut self, s: QpSettings) -> Self {
        self.qp = s;
        self
    }

    pub fn max_rows(mut self, cap: usize) -> Self {
        self.max_rows = cap;
        self
    }

    fn resolved_weights(&self, len: usize) -> Result<Vec<f64>> {
        let w = self.weights.clone().unwrap_or_else(|| uniform_weights(len));
        check_weights(&w, len)?;
        Ok(w)
    }
}

/// A fitted model. SQR fits carry spline coefficients and can be evaluated
/// anywhere on `[tau_1, tau_L]`; QR fits only at grid levels.
#[derive(Debug, Clone)]
pub struct SqrFit {
    pub method: Method,
    pub grid: QuantileGrid,
    pub basis: Option<SplineBasis>,
    /// Spline coefficients, stacked by covariate (`theta[j * K + k]`).
    pub theta: Option<DVector<f64>>,
    /// `L x p`, QR fits only.
    pub per_level_coefs: Option<DMatrix<f64>>,
    pub spar: Option<f64>,
    pub c: f64,
    pub weights: Vec<f64>,
    /// Worst-case diagnostics over the solves behind this fit.
    pub report: SolverReport,
    pub level_reports: Vec<SolverReport>,
    pub colnames: Vec<String>,
}

impl SqrFit {
    pub fn p(&self) -> usize {
        self.colnames.len()
    }

    fn spline(&self) -> Result<(&SplineBasis, &DVector<f64>)> {
        match (&self.basis, &self.theta) {
            (Some(b), Some(t)) => Ok((b, t)),
            _ => Err(Error::InvalidInput("QR fits have coefficients only at grid levels".into())),
        }
    }

    /// `beta(tau)`.
    pub fn eval_coef(&self, tau: f64) -> Result<DVector<f64>> {
        if let Some(coefs) = &self.per_level_coefs {
            let l = self.grid.position(tau).ok_or_else(|| {
                Error::InvalidInput(format!("QR fit has no coefficients at tau = {tau} (not a grid level)"))
            })?;
            return Ok(coefs.row(l).transpose());
        }
        let (basis, theta) = self.spline()?;
        basis.apply(theta.as_slice(), self.p(), tau, 0)
    }

    /// `beta'(tau)`; right-continuous at interior knots.
    pub fn eval_deriv(&self, tau: f64) -> Result<DVector<f64>> {
        let (basis, theta) = self.spline()?;
        basis.apply(theta.as_slice(), self.p(), tau, 1)
    }

    /// `x' beta(tau)`.
    pub fn predict_quantile(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.dot_checked(x, self.eval_coef(tau)?)
    }

    /// `x' beta'(tau)`, the reciprocal conditional density at the `tau` quantile.
    pub fn predict_density_recip(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.dot_checked(x, self.eval_deriv(tau)?)
    }

    fn dot_checked(&self, x: &[f64], beta: DVector<f64>) -> Result<f64> {
        if x.len() != beta.len() {
            return Err(Error::InvalidInput(format!("x has length {}, expected {}", x.len(), beta.len())));
        }
        Ok(x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
    }

    /// Coefficients at each level, as a `len x p` matrix.
    pub fn coefs_at(&self, taus: &[f64]) -> Result<DMatrix<f64>> {
        self.stack(taus, |t| self.eval_coef(t))
    }

    pub fn derivs_at(&self, taus: &[f64]) -> Result<DMatrix<f64>> {
        self.stack(taus, |t| self.eval_deriv(t))
    }

    /// Coefficients at the fitting grid.
    pub fn coefs_on_grid(&self) -> DMatrix<f64> {
        self.coefs_at(self.grid.levels()).expect("grid levels are always in range")
    }

    fn stack(&self, taus: &[f64], f: impl Fn(f64) -> Result<DVector<f64>>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(taus.len(), self.p());
        for (i, &t) in taus.iter().enumerate() {
            out.row_mut(i).copy_from(&f(t)?.transpose());
        }
        Ok(out)
    }

    /// The objective this fit minimized, evaluated at its own coefficients.
    pub fn penalized_objective(&self, data: &Dataset) -> Result<f64> {
        match (&self.basis, &self.theta) {
            (Some(b), Some(t)) => penalized_objective(data, b, self.c, &self.weights, t.as_slice()),
            _ => {
                let coefs = self.coefs_on_grid();
                Ok(self
                    .grid
                    .levels()
                    .iter()
                    .enumerate()
                    .map(|(l, &tau)| level_loss(data, coefs.row(l).iter().copied(), tau))
                    .sum())
            }
        }
    }
}

fn level_loss(data: &Dataset, beta: impl Iterator<Item = f64> + Clone, tau: f64) -> f64 {
    let (x, y) = (data.x(), data.y());
    let beta: Vec<f64> = beta.collect();
    (0..data.n())
        .map(|t| {
            let f: f64 = beta.iter().enumerate().map(|(j, b)| x[(t, j)] * b).sum();
            check_loss(y[t] - f, tau)
        })
        .sum()
}

/// Check loss summed over the grid plus the roughness penalty, for any spline
/// coefficient vector. Cubic: `theta' Omega theta / 2`; linear:
/// `Σ_l c_l ||ΔΦ̇(tau_l) theta||_1`.
pub fn penalized_objective(data: &Dataset, basis: &SplineBasis, c: f64, weights: &[f64], theta: &[f64]) -> Result<f64> {
    let p = data.p();
    let k = basis.dim();
    let mut total = 0.0;
    for &tau in basis.grid().levels() {
        let beta = basis.apply(theta, p, tau, 0)?;
        total += level_loss(data, beta.iter().copied(), tau);
    }
    let penalty = match basis.kind() {
        SplineKind::Cubic => 0.5 * PenaltyMatrix::cubic(basis, p, data.n(), c, weights)?.quad_form(theta),
        SplineKind::Linear => {
            check_weights(weights, basis.grid().len())?;
            delta_phidot(basis)?
                .iter()
                .zip(weights)
                .map(|(row, w)| {
                    let cl = data.n() as f64 * c * w;
                    cl * (0..p).map(|j| row.dot(&theta[j * k..(j + 1) * k]).abs()).sum::<f64>()
                })
                .sum()
        }
    };
    Ok(total + penalty)
}

fn worst_report(reports: &[SolverReport]) -> SolverReport {
    let status = if reports.iter().all(|r| r.status == SolverStatus::Optimal) {
        SolverStatus::Optimal
    } else {
        reports.iter().find(|r| r.status != SolverStatus::Optimal).map(|r| r.status).unwrap_or(SolverStatus::Optimal)
    };
    SolverReport {
        status,
        iterations: reports.iter().map(|r| r.iterations).max().unwrap_or(0),
        gap: reports.iter().map(|r| r.gap).fold(0.0, f64::max),
        primal_residual: reports.iter().map(|r| r.primal_residual).fold(0.0, f64::max),
        dual_residual: reports.iter().map(|r| r.dual_residual).fold(0.0, f64::max),
        regularization: reports.iter().filter_map(|r| r.regularization).reduce(f64::max),
    }
}

/// Independent quantile regressions at every grid level.
pub fn fit_qr(data: &Dataset, grid: &QuantileGrid) -> Result<SqrFit> {
    fit_qr_with(data, grid, &LpSettings::default())
}

pub fn fit_qr_with(data: &Dataset, grid: &QuantileGrid, settings: &LpSettings) -> Result<SqrFit> {
    let levels = grid.levels();
    let sols: Vec<_> = levels
        .par_iter()
        .enumerate()
        .map(|(l, &tau)| {
            quantile_regression(data, tau, settings)
                .map_err(|e| Error::Level { index: l, tau, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let p = data.p();
    let coefs = DMatrix::from_fn(levels.len(), p, |l, j| sols[l].theta[j]);
    let reports: Vec<SolverReport> = sols.into_iter().map(|s| s.report).collect();
    Ok(SqrFit {
        method: Method::Qr,
        grid: grid.clone(),
        basis: None,
        theta: None,
        per_level_coefs: Some(coefs),
        spar: None,
        c: 0.0,
        weights: uniform_weights(levels.len()),
        report: worst_report(&reports),
        level_reports: reports,
        colnames: data.names().to_vec(),
    })
}

/// Spline quantile regression with the smoothing level in `config`.
pub fn fit_sqr(data: &Dataset, grid: &QuantileGrid, config: &FitConfig) -> Result<SqrFit> {
    let kind = config
        .method
        .spline_kind()
        .ok_or_else(|| Error::InvalidInput("fit_sqr needs a spline method; use fit_qr for QR".into()))?;
    let basis = SplineBasis::new(kind, grid.clone());
    let weights = config.resolved_weights(grid.len())?;
    let (spar, c) = match config.smoothing.ok_or(Error::MissingSmoothing)? {
        Smoothing::Spar(s) => (Some(s), spar_to_c(s, data, &basis, &weights)?),
        Smoothing::C(c) => (None, c),
    };
    let (theta, report) = match kind {
        SplineKind::Cubic => {
            let qp = build_qp_with_cap(data, &basis, c, &weights, config.max_rows)?;
            let sol = solve_qp(&qp, &config.qp)?;
            (sol.theta, sol.report)
        }
        SplineKind::Linear => {
            let lp = build_lp_with_cap(data, &basis, c, &weights, config.max_rows)?;
            let sol = solve_lp(&lp, &config.lp)?;
            (sol.theta, sol.report)
        }
    };
    Ok(SqrFit {
        method: config.method,
        grid: grid.clone(),
        basis: Some(basis),
        theta: Some(theta),
        per_level_coefs: None,
        spar,
        c,
        weights,
        report: report.clone(),
        level_reports: vec![report],
        colnames: data.names().to_vec(),
    })
}

/// Dispatches on `config.method`; smoothing is ignored for QR.
pub fn fit(data: &Dataset, grid: &QuantileGrid, config: &FitConfig) -> Result<SqrFit> {
    match config.method {
        Method::Qr => fit_qr_with(data, grid, &config.lp),
        _ => fit_sqr(data, grid, config),
    }
}

/// An SQR fit on a coarse grid, evaluated on a finer grid containing it.
#[derive(Debug, Clone)]
pub struct SubsetFit {
    pub fit: SqrFit,
    pub eval_grid: QuantileGrid,
    /// `eval_grid.len() x p`.
    pub coefs: DMatrix<f64>,
}

pub fn fit_sqr_subset(
    data: &Dataset,
    fit_grid: &QuantileGrid,
    eval_grid: &QuantileGrid,
    config: &FitConfig,
) -> Result<SubsetFit> {
    if !fit_grid.is_subset_of(eval_grid) {
        return Err(Error::InvalidGrid("fitting grid is not a subset of the evaluation grid".into()));
    }
    let fit = fit_sqr(data, fit_grid, config)?;
    let coefs = fit.coefs_at(eval_grid.levels())?;
    Ok(SubsetFit { fit, eval_grid: eval_grid.clone(), coefs })
}

/// Spline coefficients interpolating a QR fit's per-level estimates in the given basis.
pub fn interpolate_qr(qr: &SqrFit, basis: &SplineBasis) -> Result<DVector<f64>> {
    let coefs = qr
        .per_level_coefs
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("interpolation needs a QR fit".into()))?;
    if coefs.nrows() != basis.grid().len() {
        return Err(Error::InvalidInput("QR fit and basis use different grids".into()));
    }
    let k = basis.dim();
    let mut theta = DVector::zeros(coefs.ncols() * k);
    for j in 0..coefs.ncols() {
        let col: Vec<f64> = coefs.column(j).iter().copied().collect();
        theta.rows_mut(j * k, k).copy_from(&basis.interpolate(&col)?);
    }
    Ok(theta)
}
