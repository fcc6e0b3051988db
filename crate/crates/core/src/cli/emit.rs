//! Long-format CSV and JSON sidecar output.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bootstrap::Band;
use crate::error::Result;
use crate::fit::SqrFit;
use crate::selection::CriterionCurve;
use crate::simlab::{Estimate, McReport};

/// Version of the sidecar layout.
pub const SCHEMA_VERSION: u32 = 1;

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Coefficient table: one row per `(tau, coefficient)`.
///
/// `lower`/`upper` come from `band` when given; they bound `deriv` for
/// derivative bands and `estimate` otherwise.
pub fn write_fit<W: Write>(out: W, fit: &SqrFit, band: Option<&Band>) -> Result<()> {
    let taus = fit.grid.levels();
    let coefs = fit.coefs_on_grid();
    let derivs: Option<DMatrix<f64>> = match fit.basis {
        Some(_) => Some(fit.derivs_at(taus)?),
        None => None,
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "coef_name", "estimate", "deriv", "lower", "upper"])?;
    for (l, &tau) in taus.iter().enumerate() {
        for (j, name) in fit.colnames.iter().enumerate() {
            let (lo, hi) = match band {
                Some(b) => (num(b.lower[(l, j)]), num(b.upper[(l, j)])),
                None => (String::new(), String::new()),
            };
            let d = opt(derivs.as_ref().map(|d| d[(l, j)]));
            w.write_record([num(tau), name.clone(), num(coefs[(l, j)]), d, lo, hi])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Selection curve: `spar, aic, bic`, failed points left empty.
pub fn write_curve<W: Write>(out: W, curve: &CriterionCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["spar", "aic", "bic"])?;
    for (i, &s) in curve.spar_grid.iter().enumerate() {
        w.write_record([num(s), num(curve.aic[i]), num(curve.bic[i])])?;
    }
    w.flush()?;
    Ok(())
}

/// Monte Carlo summary: `spar, method, mae, se`.
///
/// Rows without a fixed `spar` (QR, criterion-selected fits) leave it empty.
pub fn write_mc<W: Write>(out: W, report: &McReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["spar", "method", "mae", "se"])?;
    let mut row = |spar: Option<f64>, method: String, e: &Estimate| {
        w.write_record([opt(spar), method, num(e.mean), num(e.se)])
    };
    if let Some(e) = &report.mae_qr {
        row(None, "qr".into(), e)?;
    }
    for curve in &report.curves {
        let label = curve.method.label();
        for (s, e) in report.spar_grid.iter().zip(&curve.mae) {
            row(Some(*s), label.into(), e)?;
        }
        if let Some(sub) = &curve.subset_mae {
            for (s, e) in report.spar_grid.iter().zip(sub) {
                row(Some(*s), format!("{label}_subset"), e)?;
            }
        }
        if let Some(e) = &curve.mae_aic {
            row(None, format!("{label}_aic"), e)?;
        }
        if let Some(e) = &curve.mae_bic {
            row(None, format!("{label}_bic"), e)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `out.csv` -> `out.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

#[derive(Debug, Serialize)]
pub struct Sidecar<'a, C: Serialize, D: Serialize> {
    pub schema_version: u32,
    pub version: &'a str,
    pub command: &'a str,
    pub config: &'a C,
    pub seed: Option<u64>,
    pub diagnostics: D,
}

pub fn write_sidecar<C: Serialize, D: Serialize>(path: &Path, sidecar: &Sidecar<'_, C, D>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, sidecar)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
