//! Linear-spline fit with a total-variation penalty on the slopes.

use sqr::{fit, fit_qr, generate, FitConfig, Method, ModelKind, SimModel, Smoothing};

fn main() -> sqr::Result<()> {
    let kind = ModelKind::Qar15;
    let data = generate(&SimModel::new(kind, 200, 11))?;
    let grid = kind.default_grid();

    let qr = fit_qr(&data, &grid)?;
    let config = FitConfig::new(Method::SqrLinear).smoothing(Smoothing::Spar(0.9));
    let sqr = fit(&data, &grid, &config)?;
    println!("c = {:.4e}, solver {:?} after {} iterations", sqr.c, sqr.report.status, sqr.report.iterations);

    let truth = kind.truth_matrix(grid.levels());
    println!("MAE  QR: {:.5}", sqr::mae(&qr.coefs_on_grid(), &truth)?);
    println!("MAE SQR: {:.5}", sqr::mae(&sqr.coefs_on_grid(), &truth)?);

    // Piecewise linear: evaluate between knots.
    for tau in [0.06, 0.3, 0.51, 0.77] {
        println!("beta({tau}) = {:.4?}", sqr.eval_coef(tau)?.as_slice());
    }
    Ok(())
}
