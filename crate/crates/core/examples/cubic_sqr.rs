//! Cubic-spline fit with a roughness penalty, at several smoothing levels.

use sqr::{fit, fit_qr, generate, mae, FitConfig, Method, ModelKind, SimModel, Smoothing};

fn main() -> sqr::Result<()> {
    let kind = ModelKind::Linear14;
    let data = generate(&SimModel::new(kind, 200, 3))?;
    let grid = kind.default_grid();
    let truth = kind.truth_matrix(grid.levels());

    println!("QR          MAE {:.5}", mae(&fit_qr(&data, &grid)?.coefs_on_grid(), &truth)?);
    for spar in [-1.0, 0.5, 1.5, 2.5, 4.0] {
        let config = FitConfig::new(Method::SqrCubic).smoothing(Smoothing::Spar(spar));
        let f = fit(&data, &grid, &config)?;
        let obj = f.penalized_objective(&data)?;
        println!(
            "spar {spar:>4}  MAE {:.5}  c {:.3e}  objective {obj:.3}  gap {:.1e}",
            mae(&f.coefs_on_grid(), &truth)?,
            f.c,
            f.report.gap
        );
    }
    Ok(())
}
