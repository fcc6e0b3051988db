//! Simulation models, the total MAE metric and a Monte Carlo runner.
//!
//! * `Linear14`: `y = 1 + 2 x1 + 1.5 x2 + e`, `x1 = q(t/(n+1))`, `x2 = |x1|`, `e ~ N(0,1)`;
//!   `beta(tau) = (1 + q(tau), 2, 1.5)`.
//! * `Qar15`: `y_t = 0.1 q(u_t) + a1(u_t) y_{t-1}`, `a1(tau) = 0.85 + 0.1 tau + 0.25 (tau - 0.5)_+`.
//! * `RanCoef17`: `y_t = 0.1 q(u_t) + a1(u_t) x_t`, `x_t ~ U(0,5)`,
//!   `a1(tau) = 0.85 + 0.1 tau^2 + (tau - 0.5)^2 I(tau > 0.5)`.
//!
//! `q` is the standard normal quantile function and `u_t ~ U(0,1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::assembly::Dataset;
use crate::bootstrap::replicate_rng;
use crate::error::{Error, Result};
use crate::fit::{fit_qr, fit_sqr, fit_sqr_subset, FitConfig, Method, Smoothing};
use crate::lp_ipm::{quantile_regression, LpSettings};
use crate::selection::{argmin_prefer_last, criterion, default_epsilon, default_spar_grid};
use crate::splines::QuantileGrid;

/// Burn-in steps discarded before the QAR sample starts.
pub const QAR_BURN_IN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear14,
    Qar15,
    RanCoef17,
}

impl ModelKind {
    pub fn p(self) -> usize {
        match self {
            ModelKind::Linear14 => 3,
            ModelKind::Qar15 | ModelKind::RanCoef17 => 2,
        }
    }

    pub fn names(self) -> Vec<String> {
        let v: &[&str] = match self {
            ModelKind::Linear14 => &["(intercept)", "x1", "x2"],
            ModelKind::Qar15 => &["(intercept)", "y_lag1"],
            ModelKind::RanCoef17 => &["(intercept)", "x"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Fitting grid used with this model in the reference experiments.
    pub fn default_grid(self) -> QuantileGrid {
        match self {
            ModelKind::Qar15 => QuantileGrid::from_range(0.05, 0.95, 0.02),
            _ => QuantileGrid::from_range(0.04, 0.96, 0.02),
        }
        .expect("static grid")
    }

    /// True coefficient vector `beta(tau)`.
    pub fn truth(self, tau: f64) -> DVector<f64> {
        let q = normal_quantile(tau);
        match self {
            ModelKind::Linear14 => DVector::from_column_slice(&[1.0 + q, 2.0, 1.5]),
            ModelKind::Qar15 => DVector::from_column_slice(&[0.1 * q, qar_slope(tau)]),
            ModelKind::RanCoef17 => DVector::from_column_slice(&[0.1 * q, rancoef_slope(tau)]),
        }
    }

    /// `len(taus) x p` matrix of true coefficients.
    pub fn truth_matrix(self, taus: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(taus.len(), self.p());
        for (i, &t) in taus.iter().enumerate() {
            out.row_mut(i).copy_from(&self.truth(t).transpose());
        }
        out
    }
}

pub fn normal_quantile(u: f64) -> f64 {
    Normal::standard().inverse_cdf(u)
}

fn qar_slope(tau: f64) -> f64 {
    0.85 + 0.1 * tau + if tau > 0.5 { 0.25 * (tau - 0.5) } else { 0.0 }
}

fn rancoef_slope(tau: f64) -> f64 {
    0.85 + 0.1 * tau * tau + if tau > 0.5 { (tau - 0.5).powi(2) } else { 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimModel {
    pub kind: ModelKind,
    pub n: usize,
    pub seed: u64,
}

impl SimModel {
    pub fn new(kind: ModelKind, n: usize, seed: u64) -> Self {
        Self { kind, n, seed }
    }

    pub fn truth(&self, tau: f64) -> DVector<f64> {
        self.kind.truth(tau)
    }
}

/// One sample from stream 0 of the model's seed.
pub fn generate(model: &SimModel) -> Result<Dataset> {
    generate_with(model.kind, model.n, &mut replicate_rng(model.seed, 0))
}

pub fn generate_with<R: Rng + ?Sized>(kind: ModelKind, n: usize, rng: &mut R) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::InvalidInput(format!("simulation needs n >= 10, got {n}")));
    }
    let p = kind.p();
    let mut x = DMatrix::from_element(n, p, 1.0);
    let mut y = DVector::zeros(n);
    match kind {
        ModelKind::Linear14 => {
            for t in 0..n {
                let x1 = normal_quantile((t + 1) as f64 / (n + 1) as f64);
                let e: f64 = rng.sample(StandardNormal);
                x[(t, 1)] = x1;
                x[(t, 2)] = x1.abs();
                y[t] = 1.0 + 2.0 * x1 + 1.5 * x1.abs() + e;
            }
        }
        ModelKind::Qar15 => {
            let mut prev = 0.0;
            for step in 0..QAR_BURN_IN + n {
                let u: f64 = rng.sample(Open01);
                let next = 0.1 * normal_quantile(u) + qar_slope(u) * prev;
                if step >= QAR_BURN_IN {
                    let t = step - QAR_BURN_IN;
                    x[(t, 1)] = prev;
                    y[t] = next;
                }
                prev = next;
            }
        }
        ModelKind::RanCoef17 => {
            for t in 0..n {
                let u: f64 = rng.sample(Open01);
                let xt = 5.0 * rng.random::<f64>();
                x[(t, 1)] = xt;
                y[t] = 0.1 * normal_quantile(u) + rancoef_slope(u) * xt;
            }
        }
    }
    Dataset::with_names(x, y, kind.names())
}

/// Mean over rows of the row-wise `l1` distance.
pub fn mae(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() || estimate.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: estimate {:?}, truth {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    Ok((estimate - truth).abs().sum() / estimate.nrows() as f64)
}

/// Monte Carlo experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub model: ModelKind,
    pub n: usize,
    pub runs: usize,
    pub seed: u64,
    /// Fitting grid; also the evaluation set of the total MAE.
    pub grid: Vec<f64>,
    /// Spline methods swept over `spar_grid`.
    pub methods: Vec<Method>,
    pub spar_grid: Vec<f64>,
    /// Coarser fitting grid evaluated on `grid`.
    pub subset_grid: Option<Vec<f64>>,
    /// Record the MAE at the AIC and BIC choices along `spar_grid`.
    pub criteria: bool,
    /// Include per-level QR as the reference.
    pub qr: bool,
    /// Levels for pointwise absolute errors.
    pub point_taus: Vec<f64>,
    /// Spline fits used for pointwise errors.
    pub point_fits: Vec<(Method, f64)>,
}

impl McConfig {
    /// Full sweep on the model's reference grid with both spline methods.
    pub fn new(model: ModelKind, n: usize, runs: usize, seed: u64) -> Self {
        Self {
            model,
            n,
            runs,
            seed,
            grid: model.default_grid().levels().to_vec(),
            methods: vec![Method::SqrLinear, Method::SqrCubic],
            spar_grid: default_spar_grid(),
            subset_grid: None,
            criteria: false,
            qr: true,
            point_taus: Vec::new(),
            point_fits: Vec::new(),
        }
    }
}

/// Mean and standard error of a Monte Carlo average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_samples(v: &[f64]) -> Self {
        let r = v.len() as f64;
        if v.is_empty() {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / r;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt() / r.sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: Method,
    /// Total MAE per `spar`.
    pub mae: Vec<Estimate>,
    /// Same for the subset-grid fits, when requested.
    pub subset_mae: Option<Vec<Estimate>>,
    pub mae_aic: Option<Estimate>,
    pub mae_bic: Option<Estimate>,
}

impl MethodCurve {
    /// Smallest mean MAE over the sweep and its index.
    pub fn best(&self) -> (usize, Estimate) {
        best_of(&self.mae)
    }

    pub fn best_subset(&self) -> Option<(usize, Estimate)> {
        self.subset_mae.as_deref().map(best_of)
    }
}

fn best_of(v: &[Estimate]) -> (usize, Estimate) {
    let means: Vec<f64> = v.iter().map(|e| e.mean).collect();
    let i = argmin_prefer_last(&means).unwrap_or(0);
    (i, v[i])
}

/// Pointwise absolute error of one estimator at one level, per coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMae {
    pub method: Method,
    pub spar: Option<f64>,
    pub tau: f64,
    pub mae: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    /// Replicates that completed; failed ones are left out of every average.
    pub runs_effective: usize,
    pub failed_runs: Vec<usize>,
    pub spar_grid: Vec<f64>,
    pub mae_qr: Option<Estimate>,
    pub curves: Vec<MethodCurve>,
    pub point: Vec<PointMae>,
}

impl McReport {
    pub fn curve(&self, method: Method) -> Option<&MethodCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    pub fn point_mae(&self, method: Method, tau: f64) -> Option<&PointMae> {
        self.point.iter().find(|p| p.method == method && (p.tau - tau).abs() < 1e-12)
    }
}

#[derive(Debug, Default)]
struct Replicate {
    qr: f64,
    sweep: Vec<Vec<f64>>,
    subset: Vec<Vec<f64>>,
    aic: Vec<f64>,
    bic: Vec<f64>,
    // [probe][fit] -> per-coefficient absolute error; fit 0 is QR when enabled
    point: Vec<Vec<Vec<f64>>>,
}

fn one_replicate(cfg: &McConfig, grid: &QuantileGrid, subset: Option<&QuantileGrid>, r: usize) -> Result<Replicate> {
    let data = generate_with(cfg.model, cfg.n, &mut replicate_rng(cfg.seed, r as u64))?;
    let truth = cfg.model.truth_matrix(grid.levels());
    let mut rep = Replicate::default();
    if cfg.qr {
        rep.qr = mae(&fit_qr(&data, grid)?.coefs_on_grid(), &truth)?;
    }
    let eps = default_epsilon(data.y().as_slice());
    for &method in &cfg.methods {
        let mut maes = Vec::with_capacity(cfg.spar_grid.len());
        let mut aic = Vec::new();
        let mut bic = Vec::new();
        for &s in &cfg.spar_grid {
            let fit = fit_sqr(&data, grid, &FitConfig::new(method).smoothing(Smoothing::Spar(s)))?;
            maes.push(mae(&fit.coefs_on_grid(), &truth)?);
            if cfg.criteria {
                let v = criterion(&fit, &data, eps)?;
                aic.push(v.aic);
                bic.push(v.bic);
            }
        }
        if cfg.criteria {
            let ia = argmin_prefer_last(&aic).ok_or_else(|| Error::Criterion("empty sweep".into()))?;
            let ib = argmin_prefer_last(&bic).ok_or_else(|| Error::Criterion("empty sweep".into()))?;
            rep.aic.push(maes[ia]);
            rep.bic.push(maes[ib]);
        }
        rep.sweep.push(maes);
        if let Some(sub) = subset {
            let mut sub_maes = Vec::with_capacity(cfg.spar_grid.len());
            for &s in &cfg.spar_grid {
                let f = fit_sqr_subset(&data, sub, grid, &FitConfig::new(method).smoothing(Smoothing::Spar(s)))?;
                sub_maes.push(mae(&f.coefs, &truth)?);
            }
            rep.subset.push(sub_maes);
        }
    }
    if !cfg.point_taus.is_empty() {
        let fits: Vec<_> = cfg
            .point_fits
            .iter()
            .map(|&(m, s)| fit_sqr(&data, grid, &FitConfig::new(m).smoothing(Smoothing::Spar(s))))
            .collect::<Result<_>>()?;
        for &tau in &cfg.point_taus {
            let want = cfg.model.truth(tau);
            let mut row = Vec::new();
            if cfg.qr {
                let qr = quantile_regression(&data, tau, &LpSettings::default())?;
                row.push((qr.theta - &want).abs().iter().copied().collect());
            }
            for f in &fits {
                row.push((f.eval_coef(tau)? - &want).abs().iter().copied().collect());
            }
            rep.point.push(row);
        }
    }
    Ok(rep)
}

fn column_estimates(reps: &[Replicate], pick: impl Fn(&Replicate) -> f64) -> Estimate {
    Estimate::from_samples(&reps.iter().map(pick).collect::<Vec<_>>())
}

/// Runs the experiment; replicate `r` draws only from stream `(seed, r)`.
pub fn run_mc(cfg: &McConfig) -> Result<McReport> {
    if cfg.runs == 0 {
        return Err(Error::InvalidInput("need at least one Monte Carlo run".into()));
    }
    let grid = QuantileGrid::new(cfg.grid.clone())?;
    let subset = cfg.subset_grid.clone().map(QuantileGrid::new).transpose()?;
    if let Some(s) = &subset {
        if !s.is_subset_of(&grid) {
            return Err(Error::InvalidGrid("subset grid is not contained in the fitting grid".into()));
        }
    }
    for &tau in &cfg.point_taus {
        if tau < grid.lower() || tau > grid.upper() {
            return Err(Error::TauOutOfRange { tau, lower: grid.lower(), upper: grid.upper() });
        }
    }
    let outcomes: Vec<Result<Replicate>> =
        (0..cfg.runs).into_par_iter().map(|r| one_replicate(cfg, &grid, subset.as_ref(), r)).collect();
    let mut reps = Vec::with_capacity(cfg.runs);
    let mut failed_runs = Vec::new();
    let mut last_err = None;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => reps.push(rep),
            Err(e) => {
                log::warn!("Monte Carlo run {r} failed: {e}");
                failed_runs.push(r);
                last_err = Some(e);
            }
        }
    }
    if reps.is_empty() {
        return Err(last_err.expect("at least one run"));
    }

    let sweep_est = |m: usize, sub: bool| -> Vec<Estimate> {
        (0..cfg.spar_grid.len())
            .map(|k| column_estimates(&reps, |r| if sub { r.subset[m][k] } else { r.sweep[m][k] }))
            .collect()
    };
    let curves = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| MethodCurve {
            method,
            mae: sweep_est(m, false),
            subset_mae: subset.as_ref().map(|_| sweep_est(m, true)),
            mae_aic: cfg.criteria.then(|| column_estimates(&reps, |r| r.aic[m])),
            mae_bic: cfg.criteria.then(|| column_estimates(&reps, |r| r.bic[m])),
        })
        .collect();

    let mut point = Vec::new();
    let mut labels: Vec<(Method, Option<f64>)> = Vec::new();
    if cfg.qr {
        labels.push((Method::Qr, None));
    }
    labels.extend(cfg.point_fits.iter().map(|&(m, s)| (m, Some(s))));
    for (i, &tau) in cfg.point_taus.iter().enumerate() {
        for (f, &(method, spar)) in labels.iter().enumerate() {
            let mae = (0..cfg.model.p()).map(|j| column_estimates(&reps, |r| r.point[i][f][j])).collect();
            point.push(PointMae { method, spar, tau, mae });
        }
    }

    Ok(McReport {
        config: cfg.clone(),
        runs_effective: reps.len(),
        failed_runs,
        spar_grid: cfg.spar_grid.clone(),
        mae_qr: cfg.qr.then(|| column_estimates(&reps, |r| r.qr)),
        curves,
        point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truth_values() {
        assert_abs_diff_eq!(ModelKind::Qar15.truth(0.75)[1], 0.9875, epsilon = 1e-12);
        let t = ModelKind::Linear14.truth(0.5);
        assert_abs_diff_eq!(t[0], 1.0, epsilon = 1e-12);
        assert_eq!((t[1], t[2]), (2.0, 1.5));
        assert_abs_diff_eq!(ModelKind::RanCoef17.truth(0.5)[1], 0.875, epsilon = 1e-12);
    }

    #[test]
    fn quantile_function_accuracy() {
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mae_arithmetic() {
        let t = DMatrix::zeros(4, 2);
        let e = DMatrix::from_fn(4, 2, |_, j| if j == 0 { 0.1 } else { -0.2 });
        assert_abs_diff_eq!(mae(&e, &t).unwrap(), 0.3, epsilon = 1e-12);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert!(mae(&DMatrix::zeros(3, 2), &t).is_err());
    }

    #[test]
    fn qar_length_and_design() {
        let d = generate(&SimModel::new(ModelKind::Qar15, 50, 3)).unwrap();
        assert_eq!(d.n(), 50);
        for t in 1..50 {
            assert_eq!(d.x()[(t, 1)], d.y()[t - 1]);
        }
    }

    #[test]
    fn linear_design_is_fixed() {
        let d = generate(&SimModel::new(ModelKind::Linear14, 20, 1)).unwrap();
        assert_abs_diff_eq!(d.x()[(0, 1)], normal_quantile(1.0 / 21.0), epsilon = 1e-15);
        assert_eq!(d.x()[(0, 2)], d.x()[(0, 1)].abs());
    }

    #[test]
    fn generator_is_reproducible() {
        let m = SimModel::new(ModelKind::RanCoef17, 30, 11);
        assert_eq!(generate(&m).unwrap(), generate(&m).unwrap());
        assert!(generate(&SimModel::new(ModelKind::RanCoef17, 9, 11)).is_err());
    }
}
