//! Fitting on a coarse grid and evaluating the splines on a finer one.

use sqr::{fit, fit_sqr_subset, generate, mae, FitConfig, Method, ModelKind, QuantileGrid, SimModel, Smoothing};

fn main() -> sqr::Result<()> {
    let kind = ModelKind::RanCoef17;
    let data = generate(&SimModel::new(kind, 200, 4))?;
    let fine = kind.default_grid();
    let coarse = QuantileGrid::from_range(0.04, 0.96, 0.04)?;
    let truth = kind.truth_matrix(fine.levels());

    for spar in [0.0, 1.0, 2.0] {
        let config = FitConfig::new(Method::SqrCubic).smoothing(Smoothing::Spar(spar));
        let full = fit(&data, &fine, &config)?;
        let sub = fit_sqr_subset(&data, &coarse, &fine, &config)?;
        println!(
            "spar {spar}: full grid ({} levels) MAE {:.5}, subset ({} levels) MAE {:.5}",
            fine.len(),
            mae(&full.coefs_on_grid(), &truth)?,
            coarse.len(),
            mae(&sub.coefs, &truth)?
        );
    }
    Ok(())
}
