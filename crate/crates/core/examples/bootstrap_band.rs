//! Pointwise 90% band from the (x, y)-pair bootstrap.

use sqr::{band, fit, generate, BandTarget, FitConfig, Method, ModelKind, QuantileGrid, Resampling, SimModel, Smoothing};

fn main() -> sqr::Result<()> {
    let kind = ModelKind::RanCoef17;
    let data = generate(&SimModel::new(kind, 200, 8))?;
    let grid = QuantileGrid::from_range(0.05, 0.95, 0.05)?;
    let config = FitConfig::new(Method::SqrCubic).smoothing(Smoothing::Spar(1.5));

    let f = fit(&data, &grid, &config)?;
    let b = band(&data, &grid, &config, 200, Resampling::Pairs, 0.9, BandTarget::Coef, 2024)?;
    let coefs = f.coefs_on_grid();
    println!("{} failed replicates of {}", b.failed, b.b);
    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "tau", "lower", "slope", "upper", "truth");
    for (l, &tau) in b.taus.iter().enumerate() {
        println!(
            "{tau:>6.2} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            b.lower[(l, 1)],
            coefs[(l, 1)],
            b.upper[(l, 1)],
            kind.truth(tau)[1]
        );
    }
    Ok(())
}
