//! Spline bases on a quantile grid and the roughness penalty matrix.

use nalgebra::SymmetricEigen;
use sqr::{PenaltyMatrix, QuantileGrid, SplineBasis};

fn main() -> sqr::Result<()> {
    let grid = QuantileGrid::from_range(0.1, 0.9, 0.2)?;
    let cubic = SplineBasis::cubic(grid.clone());
    let linear = SplineBasis::linear(grid.clone());
    println!("{} levels: cubic dimension {}, linear dimension {}", grid.len(), cubic.dim(), linear.dim());

    for tau in [0.1, 0.37, 0.9] {
        let phi = cubic.eval(tau, 0)?;
        println!("cubic phi({tau}) = {:.4?}  sum {:.3}", phi.as_slice(), phi.sum());
        println!("hat   phi({tau}) = {:.4?}", linear.eval(tau, 0)?.as_slice());
    }

    // Cubic spline through sin(2 pi tau) at the knots.
    let values: Vec<f64> = grid.levels().iter().map(|t| (std::f64::consts::TAU * t).sin()).collect();
    let theta = cubic.interpolate(&values)?;
    println!("interpolant at 0.2: {:.4} (sin gives {:.4})", cubic.apply(theta.as_slice(), 1, 0.2, 0)?[0], (std::f64::consts::TAU * 0.2).sin());

    let omega = PenaltyMatrix::cubic(&cubic, 1, 100, 0.01, &vec![1.0; grid.len()])?;
    let eig = SymmetricEigen::new(omega.to_dense());
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    let shown: Vec<String> = ev.iter().map(|v| format!("{v:.3e}")).collect();
    println!("penalty eigenvalues: {}", shown.join(", "));
    let straight = cubic.interpolate(&grid.levels().iter().map(|t| 2.0 * t - 1.0).collect::<Vec<_>>())?;
    println!("penalty of a straight line: {:.1e}", omega.quad_form(straight.as_slice()));
    Ok(())
}
