//! Quantile autoregression with a lagged covariate, banded by moving blocks.
//!
//! `y_t` is regressed on `(1, y_{t-1}, x_{t-1})`; a band on the `x_{t-1}`
//! coefficient that excludes zero at some levels signals quantile Granger causality.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sqr::{band, BandTarget, Dataset, FitConfig, Method, QuantileGrid, Resampling, Smoothing};

fn main() -> sqr::Result<()> {
    let len = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut x = vec![0.0; len];
    let mut y = vec![0.0; len];
    for t in 1..len {
        let e: f64 = StandardNormal.sample(&mut rng);
        let u: f64 = StandardNormal.sample(&mut rng);
        x[t] = 0.6 * x[t - 1] + u;
        // x enters only the upper tail
        y[t] = 0.4 * y[t - 1] + 0.8 * x[t - 1].max(0.0) * e.max(0.0) + e;
    }
    let n = len - 1;
    let design = DMatrix::from_fn(n, 3, |t, j| match j {
        0 => 1.0,
        1 => y[t],
        _ => x[t],
    });
    let data = Dataset::with_names(
        design,
        DVector::from_iterator(n, y[1..].iter().copied()),
        vec!["(intercept)".into(), "y_lag1".into(), "x_lag1".into()],
    )?;

    let grid = QuantileGrid::from_range(0.1, 0.9, 0.05)?;
    let config = FitConfig::new(Method::SqrLinear).smoothing(Smoothing::Spar(1.0));
    let b = band(&data, &grid, &config, 200, Resampling::Blocks(10), 0.9, BandTarget::Coef, 1)?;
    for (l, &tau) in b.taus.iter().enumerate() {
        let (lo, hi) = (b.lower[(l, 2)], b.upper[(l, 2)]);
        let flag = if lo > 0.0 || hi < 0.0 { "*" } else { "" };
        println!("tau {tau:.2}  x_lag1 in [{lo:>7.3}, {hi:>7.3}] {flag}");
    }
    Ok(())
}
