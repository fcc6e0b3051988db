//! Spline quantile regression.
//!
//! Linear quantile regression whose coefficients are smooth functions of the
//! quantile level `tau`. The coefficient functions live in a spline space with
//! knots on a quantile grid and are fitted jointly across the grid with a
//! roughness penalty:
//!
//! * **cubic SQR**: cubic B-splines with a squared second-derivative penalty,
//!   solved as a convex quadratic program ([`qp_ipm`]);
//! * **linear SQR**: piecewise-linear splines with a total-variation penalty on
//!   the slopes, solved as a box-constrained dual linear program ([`lp_ipm`]).
//!
//! Around the estimators sit smoothing-parameter selection by AIC/BIC
//! ([`selection`]), pair and moving-block bootstrap bands ([`bootstrap`]), and a
//! Monte Carlo harness with the reference simulation models ([`simlab`]).
//!
//! ```no_run
//! use sqr::{fit_sqr, Dataset, FitConfig, Method, QuantileGrid, Smoothing};
//! # fn main() -> sqr::Result<()> {
//! let x = nalgebra::DMatrix::from_fn(50, 2, |t, j| if j == 0 { 1.0 } else { t as f64 });
//! let y = nalgebra::DVector::from_fn(50, |t, _| (t as f64).sqrt());
//! let data = Dataset::new(x, y)?;
//! let grid = QuantileGrid::from_range(0.1, 0.9, 0.05)?;
//! let fit = fit_sqr(&data, &grid, &FitConfig::new(Method::SqrCubic).smoothing(Smoothing::Spar(1.0)))?;
//! println!("{}", fit.eval_coef(0.5)?);
//! # Ok(())
//! # }
//! ```

pub mod assembly;
pub mod bootstrap;
pub mod cli;

mod error;
pub mod fit;
pub mod ipm;
pub mod linalg;
pub mod lp_ipm;
pub mod qp_ipm;
pub mod selection;
pub mod simlab;
pub mod splines;

pub use assembly::{build_lp, build_qp, spar_to_c, Dataset, LpProblem, QpProblem};
pub use bootstrap::{band, resample, Band, BandTarget, Resampling};
pub use error::{Error, Result};
pub use fit::{fit, fit_qr, fit_sqr, fit_sqr_subset, FitConfig, Method, Smoothing, SqrFit};
pub use ipm::{SolverReport, SolverStatus};
pub use selection::{criterion, select_spar, CriterionCurve, CriterionKind};
pub use simlab::{generate, mae, run_mc, McConfig, McReport, ModelKind, SimModel};
pub use splines::{PenaltyMatrix, QuantileGrid, SplineBasis, SplineKind};
