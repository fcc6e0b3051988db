//! Ordinary quantile regression, one level at a time and over a grid.

use sqr::lp_ipm::{quantile_regression, LpSettings};
use sqr::{fit_qr, generate, ModelKind, QuantileGrid, SimModel};

fn main() -> sqr::Result<()> {
    let data = generate(&SimModel::new(ModelKind::Linear14, 200, 7))?;

    let median = quantile_regression(&data, 0.5, &LpSettings::default())?;
    println!("median regression: {:.4?} ({} iterations)", median.theta.as_slice(), median.report.iterations);

    let grid = QuantileGrid::from_range(0.1, 0.9, 0.1)?;
    let fit = fit_qr(&data, &grid)?;
    let coefs = fit.coefs_on_grid();
    println!("{:>6} {:>10} {:>10} {:>10}", "tau", data.names()[0], data.names()[1], data.names()[2]);
    for (l, tau) in grid.levels().iter().enumerate() {
        let truth = ModelKind::Linear14.truth(*tau);
        println!(
            "{tau:>6.2} {:>10.4} {:>10.4} {:>10.4}   truth {:.4?}",
            coefs[(l, 0)],
            coefs[(l, 1)],
            coefs[(l, 2)],
            truth.as_slice()
        );
    }
    Ok(())
}
