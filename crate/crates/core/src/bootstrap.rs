//! Pointwise bootstrap bands for coefficient functions and their derivatives.
//!
//! Replicate `b` draws from its own ChaCha8 stream `(seed, b)`, so results do
//! not depend on scheduling.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::Dataset;
use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig, Method};
use crate::splines::QuantileGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Rows drawn independently with replacement.
    Pairs,
    /// Moving blocks of consecutive rows with the given length.
    Blocks(usize),
}

impl Resampling {
    pub fn block_len(self) -> usize {
        match self {
            Resampling::Pairs => 1,
            Resampling::Blocks(len) => len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTarget {
    Coef,
    Deriv,
}

/// Generator for replicate `b` under `seed`.
pub fn replicate_rng(seed: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    rng
}

/// Row indices of one resample of `n` rows.
///
/// Blocks start uniformly on `0..=n-len`; `ceil(n/len)` blocks are concatenated
/// and truncated to `n`. With `len = 1` this draws exactly the pair sequence.
pub fn resample_indices<R: Rng + ?Sized>(n: usize, scheme: Resampling, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidInput("cannot resample an empty dataset".into()));
    }
    let len = scheme.block_len();
    if len == 0 || len > n {
        return Err(Error::InvalidInput(format!("block length {len} must lie in 1..={n}")));
    }
    let blocks = n.div_ceil(len);
    let mut out = Vec::with_capacity(blocks * len);
    for _ in 0..blocks {
        let start = rng.random_range(0..n - len + 1);
        out.extend(start..start + len);
    }
    out.truncate(n);
    Ok(out)
}

/// One resampled dataset drawn from stream 0 of `seed`.
pub fn resample(data: &Dataset, scheme: Resampling, seed: u64) -> Result<Dataset> {
    let idx = resample_indices(data.n(), scheme, &mut replicate_rng(seed, 0))?;
    data.select_rows(&idx)
}

/// Replicate estimates, before percentile extraction.
#[derive(Debug, Clone)]
pub struct ReplicateSet {
    pub taus: Vec<f64>,
    pub target: BandTarget,
    pub scheme: Resampling,
    /// One `len(taus) x p` matrix per successful replicate, in replicate order.
    pub values: Vec<DMatrix<f64>>,
    pub failed: usize,
    pub total: usize,
}

/// Fits `b_reps` resamples and records the target at the grid levels.
pub fn replicates(
    data: &Dataset,
    grid: &QuantileGrid,
    config: &FitConfig,
    b_reps: usize,
    scheme: Resampling,
    target: BandTarget,
    seed: u64,
) -> Result<ReplicateSet> {
    if b_reps < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 replicates, got {b_reps}")));
    }
    if target == BandTarget::Deriv && config.method == Method::Qr {
        return Err(Error::InvalidInput("derivative bands need a spline method".into()));
    }
    resample_indices(data.n(), scheme, &mut replicate_rng(seed, 0))?;
    let taus = grid.levels().to_vec();
    let outcomes: Vec<Result<DMatrix<f64>>> = (0..b_reps as u64)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(data.n(), scheme, &mut replicate_rng(seed, b))?;
            let sample = data.select_rows(&idx)?;
            let f = fit(&sample, grid, config)?;
            match target {
                BandTarget::Coef => f.coefs_at(&taus),
                BandTarget::Deriv => f.derivs_at(&taus),
            }
        })
        .collect();
    let mut values = Vec::with_capacity(b_reps);
    let mut failed = 0;
    for (b, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => values.push(v),
            Err(e) => {
                log::warn!("bootstrap replicate {b} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed * 10 > b_reps {
        return Err(Error::Bootstrap { failed, total: b_reps });
    }
    Ok(ReplicateSet { taus, target, scheme, values, failed, total: b_reps })
}

/// Order statistic `x_(k)` with `k = ceil(prob * len)`, clamped to `1..=len`.
pub fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    let len = sorted.len();
    let k = ((prob * len as f64) - 1e-9).ceil().clamp(1.0, len as f64) as usize;
    sorted[k - 1]
}

/// Pointwise percentile band.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub taus: Vec<f64>,
    /// `len(taus) x p`.
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub level: f64,
    /// Replicates requested.
    pub b: usize,
    pub failed: usize,
    pub block_len: usize,
    pub target: BandTarget,
}

impl ReplicateSet {
    /// Limits at the `(1-level)/2` and `1-(1-level)/2` empirical quantiles.
    pub fn band(&self, level: f64) -> Result<Band> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidInput(format!("band level must lie in (0, 1), got {level}")));
        }
        let first = self.values.first().ok_or(Error::Bootstrap { failed: self.failed, total: self.total })?;
        let (rows, p) = first.shape();
        let alpha = (1.0 - level) / 2.0;
        let mut lower = DMatrix::zeros(rows, p);
        let mut upper = DMatrix::zeros(rows, p);
        let mut buf = Vec::with_capacity(self.values.len());
        for i in 0..rows {
            for j in 0..p {
                buf.clear();
                buf.extend(self.values.iter().map(|m| m[(i, j)]));
                buf.sort_by(f64::total_cmp);
                lower[(i, j)] = empirical_quantile(&buf, alpha);
                upper[(i, j)] = empirical_quantile(&buf, 1.0 - alpha);
            }
        }
        Ok(Band {
            taus: self.taus.clone(),
            lower,
            upper,
            level,
            b: self.total,
            failed: self.failed,
            block_len: self.scheme.block_len(),
            target: self.target,
        })
    }
}

/// Bootstrap band at the grid levels.
#[allow(clippy::too_many_arguments)]
pub fn band(
    data: &Dataset,
    grid: &QuantileGrid,
    config: &FitConfig,
    b_reps: usize,
    scheme: Resampling,
    level: f64,
    target: BandTarget,
    seed: u64,
) -> Result<Band> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("band level must lie in (0, 1), got {level}")));
    }
    replicates(data, grid, config, b_reps, scheme, target, seed)?.band(level)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_blocks_match_pairs() {
        let a = resample_indices(50, Resampling::Pairs, &mut replicate_rng(9, 3)).unwrap();
        let b = resample_indices(50, Resampling::Blocks(1), &mut replicate_rng(9, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_block_is_identity() {
        let idx = resample_indices(20, Resampling::Blocks(20), &mut replicate_rng(1, 0)).unwrap();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn blocks_are_contiguous_runs() {
        let idx = resample_indices(23, Resampling::Blocks(5), &mut replicate_rng(4, 7)).unwrap();
        assert_eq!(idx.len(), 23);
        for chunk in idx.chunks(5) {
            for w in chunk.windows(2) {
                assert_eq!(w[1], w[0] + 1);
            }
        }
    }

    #[test]
    fn bad_block_lengths() {
        let mut rng = replicate_rng(0, 0);
        assert!(resample_indices(5, Resampling::Blocks(0), &mut rng).is_err());
        assert!(resample_indices(5, Resampling::Blocks(6), &mut rng).is_err());
        assert!(resample_indices(0, Resampling::Pairs, &mut rng).is_err());
    }

    #[test]
    fn two_point_quantiles_are_extremes() {
        let s = [1.0, 4.0];
        assert_eq!(empirical_quantile(&s, 0.05), 1.0);
        assert_eq!(empirical_quantile(&s, 0.95), 4.0);
        let thousand: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(empirical_quantile(&thousand, 0.05), 50.0);
        assert_eq!(empirical_quantile(&thousand, 0.95), 950.0);
    }

    #[test]
    fn resample_is_reproducible() {
        let data = Dataset::intercept_only(&[1.0, 5.0, 2.0, 8.0, 3.0]).unwrap();
        let a = resample(&data, Resampling::Pairs, 42).unwrap();
        let b = resample(&data, Resampling::Pairs, 42).unwrap();
        assert_eq!(a, b);
    }
}
