//! AIC/BIC criteria for spline quantile fits and grid search over `spar`.
//!
//! With `sigma(tau_l)` the mean check loss at level `l` and `m(tau_l)` the number
//! of residuals smaller than `epsilon` in absolute value,
//!
//! ```text
//! BIC = 2 n log(mean_l sigma(tau_l)) + log(n) mean_l m(tau_l)
//! AIC = 2 n log(mean_l sigma(tau_l)) + 2      mean_l m(tau_l)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::Dataset;
use crate::error::{Error, Result};
use crate::fit::{fit_sqr, FitConfig, Smoothing, SqrFit};
use crate::lp_ipm::check_loss;
use crate::splines::QuantileGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub aic: f64,
    pub bic: f64,
    /// Mean over levels of the mean check loss.
    pub sigma_bar: f64,
    /// Mean over levels of the near-zero residual count.
    pub m_bar: f64,
}

impl CriterionValue {
    pub fn get(&self, kind: CriterionKind) -> f64 {
        match kind {
            CriterionKind::Aic => self.aic,
            CriterionKind::Bic => self.bic,
        }
    }
}

/// `1e-6 * max(1, median |y|)`.
pub fn default_epsilon(y: &[f64]) -> f64 {
    let mut a: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    if a.is_empty() {
        return 1e-6;
    }
    a.sort_by(f64::total_cmp);
    let k = a.len();
    let med = if k % 2 == 1 { a[k / 2] } else { 0.5 * (a[k / 2 - 1] + a[k / 2]) };
    1e-6 * med.max(1.0)
}

/// `-1.0, -0.9, ..., 4.0`.
pub fn default_spar_grid() -> Vec<f64> {
    (0..=50).map(|i| ((-10 + i) as f64) / 10.0).collect()
}

/// Criteria from per-level mean losses and near-zero counts.
pub fn criterion_from_parts(n: usize, sigmas: &[f64], counts: &[f64]) -> Result<CriterionValue> {
    if sigmas.is_empty() || sigmas.len() != counts.len() {
        return Err(Error::Criterion("need one loss and one count per level".into()));
    }
    let l = sigmas.len() as f64;
    let sigma_bar = sigmas.iter().sum::<f64>() / l;
    let m_bar = counts.iter().sum::<f64>() / l;
    if !(sigma_bar > 0.0) || !sigma_bar.is_finite() {
        return Err(Error::Criterion(format!("mean check loss is {sigma_bar}; log undefined")));
    }
    let n = n as f64;
    let fidelity = 2.0 * n * sigma_bar.ln();
    Ok(CriterionValue { aic: fidelity + 2.0 * m_bar, bic: fidelity + n.ln() * m_bar, sigma_bar, m_bar })
}

/// AIC and BIC of a fit, evaluated over its own grid.
pub fn criterion(fit: &SqrFit, data: &Dataset, epsilon: f64) -> Result<CriterionValue> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let (x, y, n) = (data.x(), data.y(), data.n());
    let coefs = fit.coefs_on_grid();
    let mut sigmas = Vec::with_capacity(fit.grid.len());
    let mut counts = Vec::with_capacity(fit.grid.len());
    for (l, &tau) in fit.grid.levels().iter().enumerate() {
        let mut loss = 0.0;
        let mut m = 0usize;
        for t in 0..n {
            let f: f64 = (0..data.p()).map(|j| x[(t, j)] * coefs[(l, j)]).sum();
            let r = y[t] - f;
            loss += check_loss(r, tau);
            if r.abs() < epsilon {
                m += 1;
            }
        }
        sigmas.push(loss / n as f64);
        counts.push(m as f64);
    }
    criterion_from_parts(n, &sigmas, &counts)
}

/// Criterion values over a `spar` grid; failed grid points hold `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionCurve {
    pub spar_grid: Vec<f64>,
    pub aic: Vec<f64>,
    pub bic: Vec<f64>,
    pub sigma_bar: Vec<f64>,
    pub m_bar: Vec<f64>,
    pub chosen_aic: f64,
    pub chosen_bic: f64,
    /// The criterion the caller asked for.
    pub kind: CriterionKind,
    pub chosen_spar: f64,
    pub failed: Vec<f64>,
}

impl CriterionCurve {
    pub fn chosen(&self, kind: CriterionKind) -> f64 {
        match kind {
            CriterionKind::Aic => self.chosen_aic,
            CriterionKind::Bic => self.chosen_bic,
        }
    }

    pub fn values(&self, kind: CriterionKind) -> &[f64] {
        match kind {
            CriterionKind::Aic => &self.aic,
            CriterionKind::Bic => &self.bic,
        }
    }

    /// Index into `spar_grid` of the chosen value.
    pub fn chosen_index(&self, kind: CriterionKind) -> usize {
        argmin_prefer_last(self.values(kind)).expect("a curve always has a fitted point")
    }
}

/// Minimizer over the finite entries, ties resolved toward the later entry.
pub fn argmin_prefer_last(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if best.is_none_or(|b| *v <= values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Grid search of AIC/BIC over `spar`. `config.smoothing` is ignored.
pub fn select_spar(
    data: &Dataset,
    grid: &QuantileGrid,
    config: &FitConfig,
    spar_grid: &[f64],
    kind: CriterionKind,
    epsilon: f64,
) -> Result<CriterionCurve> {
    Ok(select_spar_with_fits(data, grid, config, spar_grid, kind, epsilon)?.0)
}

/// [`select_spar`] that also returns the fit at every grid point.
pub fn select_spar_with_fits(
    data: &Dataset,
    grid: &QuantileGrid,
    config: &FitConfig,
    spar_grid: &[f64],
    kind: CriterionKind,
    epsilon: f64,
) -> Result<(CriterionCurve, Vec<Option<SqrFit>>)> {
    if spar_grid.is_empty() {
        return Err(Error::InvalidInput("empty spar grid".into()));
    }
    if spar_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("spar grid must be strictly increasing".into()));
    }
    let results: Vec<Result<(SqrFit, CriterionValue)>> = spar_grid
        .par_iter()
        .map(|&s| {
            let cfg = FitConfig { smoothing: Some(Smoothing::Spar(s)), ..config.clone() };
            let fit = fit_sqr(data, grid, &cfg)?;
            let value = criterion(&fit, data, epsilon)?;
            Ok((fit, value))
        })
        .collect();
    let k = spar_grid.len();
    let mut curve = CriterionCurve {
        spar_grid: spar_grid.to_vec(),
        aic: vec![f64::NAN; k],
        bic: vec![f64::NAN; k],
        sigma_bar: vec![f64::NAN; k],
        m_bar: vec![f64::NAN; k],
        chosen_aic: f64::NAN,
        chosen_bic: f64::NAN,
        kind,
        chosen_spar: f64::NAN,
        failed: Vec::new(),
    };
    let mut fits = Vec::with_capacity(k);
    let mut last_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((fit, v)) => {
                curve.aic[i] = v.aic;
                curve.bic[i] = v.bic;
                curve.sigma_bar[i] = v.sigma_bar;
                curve.m_bar[i] = v.m_bar;
                fits.push(Some(fit));
            }
            Err(e) => {
                log::warn!("spar = {}: fit failed and is excluded ({e})", spar_grid[i]);
                curve.failed.push(spar_grid[i]);
                fits.push(None);
                last_err = Some(e);
            }
        }
    }
    let (Some(ia), Some(ib)) = (argmin_prefer_last(&curve.aic), argmin_prefer_last(&curve.bic)) else {
        return Err(last_err.unwrap_or_else(|| Error::Criterion("no grid point could be fitted".into())));
    };
    curve.chosen_aic = spar_grid[ia];
    curve.chosen_bic = spar_grid[ib];
    curve.chosen_spar = curve.chosen(kind);
    Ok((curve, fits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Method;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn toy_bic() {
        let v = criterion_from_parts(2, &[std::f64::consts::E], &[1.0]).unwrap();
        assert_abs_diff_eq!(v.bic, 4.0 + 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v.aic, 6.0, epsilon = 1e-12);
        assert!(criterion_from_parts(2, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn bic_weight_exceeds_aic_weight_from_eight() {
        let a = criterion_from_parts(8, &[1.0], &[1.0]).unwrap();
        assert!(a.bic > a.aic);
    }

    #[test]
    fn ties_go_to_larger_spar() {
        assert_eq!(argmin_prefer_last(&[3.0, 1.0, 2.0, 1.0, f64::NAN]), Some(3));
        assert_eq!(argmin_prefer_last(&[f64::NAN]), None);
    }

    #[test]
    fn default_grid_and_epsilon() {
        let g = default_spar_grid();
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[50], 4.0);
        assert_eq!(g[13], 0.3);
        assert_eq!(default_epsilon(&[0.1, -0.2]), 1e-6);
        assert_abs_diff_eq!(default_epsilon(&[10.0, -30.0, 20.0]), 2e-5, epsilon = 1e-18);
    }

    #[test]
    fn singleton_grid() {
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |t, j| if j == 0 { 1.0 } else { t as f64 / n as f64 });
        let y = DVector::from_fn(n, |t, _| ((t * 37 % 11) as f64) / 5.0 + t as f64 / 10.0);
        let data = Dataset::new(x, y).unwrap();
        let grid = QuantileGrid::from_range(0.2, 0.8, 0.1).unwrap();
        let curve = select_spar(&data, &grid, &FitConfig::new(Method::SqrCubic), &[1.5], CriterionKind::Bic, 1e-6)
            .unwrap();
        assert_eq!(curve.chosen_spar, 1.5);
        assert_eq!(curve.chosen_aic, 1.5);
    }
}
