//! Derivatives of the coefficient functions and the implied conditional density.
//!
//! For `y = x'beta(tau)`, `x'beta'(tau)` is the quantile density `1/f(Q(tau|x))`.

use sqr::{fit, generate, FitConfig, Method, ModelKind, SimModel, Smoothing};

fn main() -> sqr::Result<()> {
    let kind = ModelKind::RanCoef17;
    let data = generate(&SimModel::new(kind, 400, 5))?;
    let grid = kind.default_grid();
    let f = fit(&data, &grid, &FitConfig::new(Method::SqrCubic).smoothing(Smoothing::Spar(1.5)))?;

    let x = [1.0, 2.5];
    println!("{:>6} {:>10} {:>12} {:>10}", "tau", "Q(tau|x)", "1/f", "f");
    for tau in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let q = f.predict_quantile(&x, tau)?;
        let s = f.predict_density_recip(&x, tau)?;
        println!("{tau:>6.2} {q:>10.4} {s:>12.4} {:>10.4}", 1.0 / s);
    }
    println!("beta'(0.5) = {:.4?}", f.eval_deriv(0.5)?.as_slice());
    Ok(())
}
