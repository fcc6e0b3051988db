mod common;

use common::cubic_knots;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use sqr::bootstrap::{empirical_quantile, replicate_rng, resample_indices};
use sqr::splines::uniform_weights;
use sqr::{
    band, fit_qr, mae, spar_to_c, BandTarget, Dataset, FitConfig, Method, PenaltyMatrix, QuantileGrid, Resampling,
    Smoothing, SplineBasis,
};

/// Strictly increasing levels inside (0, 1) with gaps of at least 0.01.
fn grid_strategy(min_len: usize, max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    (0.01f64..0.2, prop::collection::vec(0.01f64..0.1, min_len - 1..max_len)).prop_map(|(start, gaps)| {
        let mut lv = vec![start];
        for g in gaps {
            let next = lv.last().unwrap() + g;
            if next >= 0.99 {
                break;
            }
            lv.push(next);
        }
        lv
    })
}

fn dataset(n: usize, seed: u64) -> Dataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
    let y = DVector::from_fn(n, |t, _| 1.0 + x[(t, 1)] + rng.random_range(-1.0..1.0));
    Dataset::new(x, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bases_sum_to_one(levels in grid_strategy(3, 20), u in 0.0f64..=1.0) {
        prop_assume!(levels.len() >= 3);
        let grid = QuantileGrid::new(levels).unwrap();
        let tau = grid.lower() + u * (grid.upper() - grid.lower());
        for basis in [SplineBasis::cubic(grid.clone()), SplineBasis::linear(grid)] {
            let s = basis.eval(tau, 0).unwrap().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "sum {s} at {tau}");
        }
    }

    #[test]
    fn cubic_derivatives_match_central_differences(levels in grid_strategy(3, 12), u in 0.05f64..0.95, order in 0usize..2) {
        prop_assume!(levels.len() >= 3);
        let grid = QuantileGrid::new(levels).unwrap();
        let basis = SplineBasis::cubic(grid.clone());
        let tau = grid.lower() + u * (grid.upper() - grid.lower());
        let h = 1e-5;
        prop_assume!(tau - h >= grid.lower() && tau + h <= grid.upper());
        let fd = (basis.eval(tau + h, order).unwrap() - basis.eval(tau - h, order).unwrap()) / (2.0 * h);
        let exact = basis.eval(tau, order + 1).unwrap();
        let scale = 1.0 + exact.amax();
        prop_assert!((&fd - &exact).amax() <= 1e-4 * scale, "order {} at {tau}: {fd} vs {exact}", order + 1);
    }

    #[test]
    fn linear_derivative_matches_slopes(levels in grid_strategy(3, 12), coefs in prop::collection::vec(-3.0f64..3.0, 20), u in 0.0f64..1.0) {
        prop_assume!(levels.len() >= 3);
        let grid = QuantileGrid::new(levels.clone()).unwrap();
        let basis = SplineBasis::linear(grid);
        let theta = &coefs[..levels.len()];
        let l = ((u * (levels.len() - 1) as f64) as usize).min(levels.len() - 2);
        let tau = 0.5 * (levels[l] + levels[l + 1]);
        let slope = (theta[l + 1] - theta[l]) / (levels[l + 1] - levels[l]);
        let got = basis.apply(theta, 1, tau, 1).unwrap()[0];
        prop_assert!((got - slope).abs() <= 1e-9 * (1.0 + slope.abs()));
    }

    #[test]
    fn penalty_is_psd_and_kills_straight_lines(levels in grid_strategy(3, 25), a in -1.0f64..1.0, b in -1.0f64..1.0) {
        prop_assume!(levels.len() >= 3);
        let len = levels.len();
        let basis = SplineBasis::cubic(QuantileGrid::new(levels.clone()).unwrap());
        let omega = PenaltyMatrix::cubic(&basis, 1, 1, 1.0, &uniform_weights(len)).unwrap().to_dense();
        let omega = &omega / omega.amax();
        prop_assert!(SymmetricEigen::new(omega.clone()).eigenvalues.min() >= -1e-10);
        let t = cubic_knots(&levels);
        let theta = DVector::from_fn(len + 2, |i, _| a + b * (t[i + 1] + t[i + 2] + t[i + 3]) / 3.0);
        prop_assert!((&omega * &theta).amax() <= 1e-10 * (1.0 + theta.amax()));
    }

    #[test]
    fn penalty_blocks_are_consistent(levels in grid_strategy(3, 10), p in 1usize..4, seed in 0u64..1000, c in 1e-4f64..1.0) {
        prop_assume!(levels.len() >= 3);
        let len = levels.len();
        let basis = SplineBasis::cubic(QuantileGrid::new(levels).unwrap());
        let pen = PenaltyMatrix::cubic(&basis, p, 40, c, &uniform_weights(len)).unwrap();
        let dense = pen.to_dense();
        let k = len + 2;
        prop_assert_eq!(dense.nrows(), p * k);
        for i in 0..p {
            for j in 0..p {
                let blk = dense.view((i * k, j * k), (k, k));
                if i == j {
                    prop_assert!((blk - pen.block()).amax() == 0.0);
                } else {
                    prop_assert!(blk.amax() == 0.0);
                }
            }
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..p * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let th = DVector::from_column_slice(&theta);
        let want = &dense * &th;
        prop_assert!((pen.mul(&theta) - &want).amax() <= 1e-12 * (1.0 + want.amax()));
        let quad = th.dot(&want);
        prop_assert!((pen.quad_form(&theta) - quad).abs() <= 1e-10 * (1.0 + quad.abs()));
    }

    #[test]
    fn resamples_stay_in_range(n in 1usize..200, len in 1usize..30, seed in any::<u64>(), b in 0u64..50) {
        prop_assume!(len <= n);
        let scheme = if len == 1 { Resampling::Pairs } else { Resampling::Blocks(len) };
        let idx = resample_indices(n, scheme, &mut replicate_rng(seed, b)).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| i < n));
        for chunk in idx.chunks(len) {
            for w in chunk.windows(2) {
                prop_assert_eq!(w[1], w[0] + 1);
            }
        }
        let again = resample_indices(n, scheme, &mut replicate_rng(seed, b)).unwrap();
        prop_assert_eq!(idx, again);
    }

    #[test]
    fn oversized_blocks_are_rejected(n in 1usize..50, extra in 1usize..10) {
        prop_assert!(resample_indices(n, Resampling::Blocks(n + extra), &mut replicate_rng(0, 0)).is_err());
    }

    #[test]
    fn mae_ignores_row_order(rows in 1usize..20, cols in 1usize..4, seed in any::<u64>()) {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let est = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-5.0..5.0));
        let truth = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-5.0..5.0));
        let mut perm: Vec<usize> = (0..rows).collect();
        perm.shuffle(&mut rng);
        let est_p = est.select_rows(&perm);
        let truth_p = truth.select_rows(&perm);
        let a = mae(&est, &truth).unwrap();
        let b = mae(&est_p, &truth_p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        prop_assert!(a >= 0.0);
        prop_assert_eq!(mae(&est, &est).unwrap(), 0.0);
        let naive: f64 = (0..rows).map(|i| (0..cols).map(|j| (est[(i, j)] - truth[(i, j)]).abs()).sum::<f64>()).sum::<f64>() / rows as f64;
        prop_assert!((a - naive).abs() <= 1e-12 * (1.0 + naive));
    }

    #[test]
    fn empirical_quantiles_are_ordered(mut xs in prop::collection::vec(-100.0f64..100.0, 1..60), alpha in 0.0f64..0.5) {
        xs.sort_by(f64::total_cmp);
        let lo = empirical_quantile(&xs, alpha);
        let hi = empirical_quantile(&xs, 1.0 - alpha);
        prop_assert!(lo <= hi);
        prop_assert!(xs.contains(&lo) && xs.contains(&hi));
    }

    #[test]
    fn spar_to_c_is_increasing(s in -3.0f64..3.0, ds in 0.01f64..2.0, seed in 0u64..100) {
        let data = dataset(30, seed);
        let basis = SplineBasis::cubic(QuantileGrid::from_range(0.1, 0.9, 0.1).unwrap());
        let w = uniform_weights(basis.grid().len());
        let c0 = spar_to_c(s, &data, &basis, &w).unwrap();
        let c1 = spar_to_c(s + ds, &data, &basis, &w).unwrap();
        prop_assert!(c0 > 0.0 && c1 > c0);
        prop_assert!((c1 / c0 - 1000f64.powf(ds)).abs() <= 1e-9 * 1000f64.powf(ds));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn qr_is_scale_equivariant(seed in 0u64..10_000, s in 0.1f64..20.0) {
        let data = dataset(25, seed);
        let scaled = Dataset::new(data.x().clone(), data.y() * s).unwrap();
        let grid = QuantileGrid::from_range(0.2, 0.8, 0.2).unwrap();
        let a = fit_qr(&data, &grid).unwrap().coefs_on_grid();
        let b = fit_qr(&scaled, &grid).unwrap().coefs_on_grid();
        prop_assert!((&a * s - &b).amax() <= 1e-8 * (1.0 + b.amax()), "{a} vs {b}");
    }

    #[test]
    fn bands_are_ordered_and_nested(seed in 0u64..10_000, boot_seed in any::<u64>()) {
        let data = dataset(40, seed);
        let grid = QuantileGrid::from_range(0.2, 0.8, 0.2).unwrap();
        let cfg = FitConfig::new(Method::SqrLinear).smoothing(Smoothing::Spar(0.5));
        let wide = band(&data, &grid, &cfg, 40, Resampling::Pairs, 0.9, BandTarget::Coef, boot_seed).unwrap();
        let narrow = band(&data, &grid, &cfg, 40, Resampling::Pairs, 0.5, BandTarget::Coef, boot_seed).unwrap();
        for i in 0..wide.lower.nrows() {
            for j in 0..wide.lower.ncols() {
                prop_assert!(wide.lower[(i, j)] <= wide.upper[(i, j)]);
                prop_assert!(wide.lower[(i, j)] <= narrow.lower[(i, j)]);
                prop_assert!(narrow.upper[(i, j)] <= wide.upper[(i, j)]);
            }
        }
    }
}
