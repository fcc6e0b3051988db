//! Spline bases in the quantile level and the roughness penalty matrix.
//!
//! Coefficient functions are written as `beta_j(tau) = phi(tau)^T theta_j` with
//! `theta = [theta_1; ...; theta_p]`, i.e. `beta(tau) = (I_p ⊗ phi(tau)^T) theta`.
//! Cubic bases are clamped B-splines of order 4 with a knot at every grid level
//! (`K = L + 2`); linear bases are hat functions (`K = L`).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const GRID_TOL: f64 = 1e-9;

/// Ordered quantile levels `tau_1 < ... < tau_L` inside `(0, 1)`; also the spline knots.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 levels, got {}",
                levels.len()
            )));
        }
        if let Some(bad) = levels.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidGrid(format!("level {bad} outside (0, 1)")));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("levels must be strictly increasing".into()));
        }
        Ok(Self { levels })
    }

    /// `{a, a + step, ..., b}`; the span `b - a` must be a whole number of steps.
    pub fn from_range(a: f64, b: f64, step: f64) -> Result<Self> {
        if !(a > 0.0 && a < b && b < 1.0) {
            return Err(Error::InvalidGrid(format!("need 0 < a < b < 1, got a = {a}, b = {b}")));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        let steps = (b - a) / step;
        let whole = steps.round();
        if (steps - whole).abs() > GRID_TOL * whole.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "span {} is not a whole number of steps of {step}",
                b - a
            )));
        }
        let count = whole as usize;
        let levels = (0..=count)
            .map(|k| if k == count { b } else { round12(a + k as f64 * step) })
            .collect();
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.levels[0]
    }

    pub fn upper(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    /// Index of the level equal to `tau` within `1e-9`.
    pub fn position(&self, tau: f64) -> Option<usize> {
        self.levels.iter().position(|&t| (t - tau).abs() <= GRID_TOL)
    }

    pub fn is_subset_of(&self, other: &QuantileGrid) -> bool {
        self.levels.iter().all(|&t| other.position(t).is_some())
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplineKind {
    Linear,
    Cubic,
}

impl SplineKind {
    pub fn degree(self) -> usize {
        match self {
            SplineKind::Linear => 1,
            SplineKind::Cubic => 3,
        }
    }
}

/// The nonzero window of a basis vector: entries `start .. start + values.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    pub start: usize,
    pub values: Vec<f64>,
}

impl BasisRow {
    pub fn dot(&self, coef: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(&coef[self.start..self.start + self.values.len()])
            .map(|(v, c)| v * c)
            .sum()
    }

    pub fn to_dense(&self, dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        for (i, v) in self.values.iter().enumerate() {
            out[self.start + i] = *v;
        }
        out
    }

    pub(crate) fn scaled(&self, s: f64) -> BasisRow {
        BasisRow { start: self.start, values: self.values.iter().map(|v| v * s).collect() }
    }

    fn difference(&self, earlier: &BasisRow) -> BasisRow {
        let start = self.start.min(earlier.start);
        let end = (self.start + self.values.len()).max(earlier.start + earlier.values.len());
        let mut values = vec![0.0; end - start];
        for (i, v) in self.values.iter().enumerate() {
            values[self.start - start + i] += v;
        }
        for (i, v) in earlier.values.iter().enumerate() {
            values[earlier.start - start + i] -= v;
        }
        BasisRow { start, values }
    }
}

/// A clamped B-spline basis on `[tau_1, tau_L]` with knots at every grid level.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    kind: SplineKind,
    grid: QuantileGrid,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(kind: SplineKind, grid: QuantileGrid) -> Self {
        let d = kind.degree();
        let levels = grid.levels();
        let mut knots = Vec::with_capacity(levels.len() + 2 * d);
        knots.extend(std::iter::repeat_n(levels[0], d + 1));
        knots.extend_from_slice(&levels[1..levels.len() - 1]);
        knots.extend(std::iter::repeat_n(levels[levels.len() - 1], d + 1));
        Self { kind, grid, knots }
    }

    pub fn cubic(grid: QuantileGrid) -> Self {
        Self::new(SplineKind::Cubic, grid)
    }

    pub fn linear(grid: QuantileGrid) -> Self {
        Self::new(SplineKind::Linear, grid)
    }

    pub fn kind(&self) -> SplineKind {
        self.kind
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    /// Basis dimension `K`.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.kind.degree() - 1
    }

    /// `phi(tau)`, `phi'(tau)` or `phi''(tau)` as a dense vector of length `K`.
    pub fn eval(&self, tau: f64, order: usize) -> Result<DVector<f64>> {
        Ok(self.eval_row(tau, order)?.to_dense(self.dim()))
    }

    /// Same as [`eval`](Self::eval) but returns only the local-support window.
    ///
    /// Derivatives are right-continuous at interior knots and left-continuous at
    /// the upper end. Orders above the degree evaluate to zero.
    pub fn eval_row(&self, tau: f64, order: usize) -> Result<BasisRow> {
        let (lo, hi) = (self.grid.lower(), self.grid.upper());
        if !(tau >= lo - GRID_TOL && tau <= hi + GRID_TOL) {
            return Err(Error::TauOutOfRange { tau, lower: lo, upper: hi });
        }
        let tau = tau.clamp(lo, hi);
        let d = self.kind.degree();
        let span = self.find_span(tau);
        let values = if order > d {
            vec![0.0; d + 1]
        } else {
            let ders = basis_derivatives(&self.knots, span, tau, d, order);
            ders[order].clone()
        };
        Ok(BasisRow { start: span - d, values })
    }

    /// `I_p ⊗ phi(tau)^T` applied to `theta`: the `p` coefficient values at `tau`.
    pub fn apply(&self, theta: &[f64], p: usize, tau: f64, order: usize) -> Result<DVector<f64>> {
        let k = self.dim();
        if theta.len() != p * k {
            return Err(Error::InvalidInput(format!(
                "theta has length {}, expected p*K = {}",
                theta.len(),
                p * k
            )));
        }
        let row = self.eval_row(tau, order)?;
        Ok(DVector::from_iterator(p, (0..p).map(|j| row.dot(&theta[j * k..(j + 1) * k]))))
    }

    /// Basis coefficients of the spline through the given values at every knot.
    ///
    /// For cubic bases the two extra degrees of freedom are fixed by natural end
    /// conditions (zero second derivative at both ends).
    pub fn interpolate(&self, values: &[f64]) -> Result<DVector<f64>> {
        let levels = self.grid.levels();
        if values.len() != levels.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for {} knots",
                values.len(),
                levels.len()
            )));
        }
        match self.kind {
            SplineKind::Linear => Ok(DVector::from_column_slice(values)),
            SplineKind::Cubic => {
                let k = self.dim();
                let mut system = DMatrix::zeros(k, k);
                let mut rhs = DVector::zeros(k);
                for (l, &tau) in levels.iter().enumerate() {
                    let row = self.eval_row(tau, 0)?;
                    for (i, v) in row.values.iter().enumerate() {
                        system[(l, row.start + i)] = *v;
                    }
                    rhs[l] = values[l];
                }
                for (r, tau) in [(k - 2, self.grid.lower()), (k - 1, self.grid.upper())] {
                    let row = self.eval_row(tau, 2)?;
                    for (i, v) in row.values.iter().enumerate() {
                        system[(r, row.start + i)] = *v;
                    }
                }
                system
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Numerical("singular interpolation system".into()))
            }
        }
    }

    fn find_span(&self, tau: f64) -> usize {
        let d = self.kind.degree();
        let k = self.dim();
        if tau >= self.knots[k] {
            return k - 1;
        }
        // largest i in [d, k-1] with knots[i] <= tau
        let mut lo = d;
        let mut hi = k;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Nonzero basis functions `N_{span-d..=span}` and their derivatives up to `n`
/// at `u` (de Boor / Cox recursion with the derivative table).
fn basis_derivatives(knots: &[f64], span: usize, u: f64, d: usize, n: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; d + 1]; d + 1];
    let mut left = vec![0.0; d + 1];
    let mut right = vec![0.0; d + 1];
    ndu[0][0] = 1.0;
    for j in 1..=d {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = vec![vec![0.0; d + 1]; n + 1];
    for j in 0..=d {
        ders[0][j] = ndu[j][d];
    }
    let mut a = [vec![0.0; d + 1], vec![0.0; d + 1]];
    for r in 0..=d {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n {
            let mut dd = 0.0;
            let rk = r as isize - k as isize;
            let pk = d - k;
            if r >= k {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                dd = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r <= pk + 1 { k - 1 } else { d - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                dd += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                dd += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = dd;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = d as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= factor;
        }
        factor *= (d - k) as f64;
    }
    ders
}

/// Roughness penalty `Omega = I_p ⊗ B` with `B = 2 Σ_l c_l phi''(tau_l) phi''(tau_l)^T`.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    p: usize,
    block: DMatrix<f64>,
    c_per_knot: Vec<f64>,
}

impl PenaltyMatrix {
    /// Discrete penalty with knot scales `c_l = n * c * w_l`.
    pub fn cubic(basis: &SplineBasis, p: usize, n: usize, c: f64, weights: &[f64]) -> Result<Self> {
        check_weights(weights, basis.grid().len())?;
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("smoothing scalar must be finite and >= 0, got {c}")));
        }
        let scales: Vec<f64> = weights.iter().map(|w| n as f64 * c * w).collect();
        Self::from_knot_scales(basis, p, &scales)
    }

    pub fn from_knot_scales(basis: &SplineBasis, p: usize, c_per_knot: &[f64]) -> Result<Self> {
        if basis.kind() != SplineKind::Cubic {
            return Err(Error::InvalidInput("the quadratic penalty needs a cubic basis".into()));
        }
        check_weights(c_per_knot, basis.grid().len())?;
        let k = basis.dim();
        let mut block = DMatrix::zeros(k, k);
        for (&tau, &scale) in basis.grid().levels().iter().zip(c_per_knot) {
            if scale == 0.0 {
                continue;
            }
            let row = basis.eval_row(tau, 2)?;
            for (i, vi) in row.values.iter().enumerate() {
                for (j, vj) in row.values.iter().enumerate() {
                    block[(row.start + i, row.start + j)] += 2.0 * scale * vi * vj;
                }
            }
        }
        Ok(Self { p, block, c_per_knot: c_per_knot.to_vec() })
    }

    /// An arbitrary symmetric PSD block replicated over `p` coefficients.
    pub fn from_block(p: usize, block: DMatrix<f64>) -> Result<Self> {
        if !block.is_square() {
            return Err(Error::InvalidInput("penalty block must be square".into()));
        }
        Ok(Self { p, block, c_per_knot: Vec::new() })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    pub fn c_per_knot(&self) -> &[f64] {
        &self.c_per_knot
    }

    pub fn dim(&self) -> usize {
        self.p * self.block.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.block.iter().all(|v| *v == 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.block.nrows();
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for j in 0..self.p {
            out.view_mut((j * k, j * k), (k, k)).copy_from(&self.block);
        }
        out
    }

    /// `theta^T Omega theta`.
    pub fn quad_form(&self, theta: &[f64]) -> f64 {
        let k = self.block.nrows();
        (0..self.p)
            .map(|j| {
                let t = DVector::from_column_slice(&theta[j * k..(j + 1) * k]);
                (t.transpose() * &self.block * &t)[(0, 0)]
            })
            .sum()
    }

    pub fn mul(&self, theta: &[f64]) -> DVector<f64> {
        let k = self.block.nrows();
        let mut out = DVector::zeros(self.dim());
        for j in 0..self.p {
            let t = DVector::from_column_slice(&theta[j * k..(j + 1) * k]);
            out.rows_mut(j * k, k).copy_from(&(&self.block * t));
        }
        out
    }
}

pub(crate) fn check_weights(weights: &[f64], len: usize) -> Result<()> {
    if weights.len() != len {
        return Err(Error::InvalidInput(format!(
            "expected {len} knot weights, got {}",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidInput(format!("knot weights must be finite and >= 0, got {w}")));
    }
    Ok(())
}

/// Slope jumps of a linear spline: row `l` is `phi'(tau_{l+1}) - phi'(tau_l)` for
/// `l = 1..L-1`, so block `l` of the penalty is `I_p ⊗` that row.
///
/// With the derivative left-continuous at the upper end, the last row compares
/// the final segment with itself and is identically zero.
pub fn delta_phidot(basis: &SplineBasis) -> Result<Vec<BasisRow>> {
    if basis.kind() != SplineKind::Linear {
        return Err(Error::InvalidInput("slope jumps are defined for linear bases only".into()));
    }
    let levels = basis.grid().levels();
    let rows: Vec<BasisRow> =
        levels.iter().map(|&t| basis.eval_row(t, 1)).collect::<Result<_>>()?;
    Ok(rows.windows(2).map(|w| w[1].difference(&w[0])).collect())
}

/// Unit knot weights.
pub fn uniform_weights(len: usize) -> Vec<f64> {
    vec![1.0; len]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid3() -> QuantileGrid {
        QuantileGrid::new(vec![0.1, 0.5, 0.9]).unwrap()
    }

    #[test]
    fn grid_from_range_counts() {
        let g = QuantileGrid::from_range(0.04, 0.96, 0.02).unwrap();
        assert_eq!(g.len(), 47);
        assert_eq!(g.lower(), 0.04);
        assert_eq!(g.upper(), 0.96);
        assert_eq!(QuantileGrid::from_range(0.05, 0.95, 0.02).unwrap().len(), 46);
    }

    #[test]
    fn grid_rejects_short_and_ragged() {
        assert!(matches!(QuantileGrid::from_range(0.25, 0.75, 0.5), Err(Error::InvalidGrid(_))));
        assert!(QuantileGrid::from_range(0.1, 0.9, 0.3).is_err());
        assert!(QuantileGrid::from_range(0.0, 0.9, 0.1).is_err());
        assert!(QuantileGrid::new(vec![0.1, 0.3, 0.3]).is_err());
    }

    #[test]
    fn dimensions() {
        let g = QuantileGrid::from_range(0.05, 0.95, 0.05).unwrap();
        assert_eq!(SplineBasis::cubic(g.clone()).dim(), g.len() + 2);
        assert_eq!(SplineBasis::linear(g.clone()).dim(), g.len());
    }

    #[test]
    fn hat_is_one_at_its_knot() {
        let b = SplineBasis::linear(grid3());
        assert_eq!(b.eval(0.5, 0).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(b.eval(0.9, 0).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
        let mid = b.eval(0.3, 0).unwrap();
        for (got, want) in mid.iter().zip([0.5, 0.5, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_derivative_is_right_continuous() {
        let b = SplineBasis::linear(grid3());
        // on [0.5, 0.9): slope of phi_2 is -2.5, of phi_3 is +2.5
        assert_eq!(b.eval(0.5, 1).unwrap().as_slice(), &[0.0, -2.5, 2.5]);
        // left-continuous at the upper end
        assert_eq!(b.eval(0.9, 1).unwrap().as_slice(), &[0.0, -2.5, 2.5]);
        assert_eq!(b.eval(0.4, 2).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_range() {
        let b = SplineBasis::cubic(grid3());
        assert!(matches!(b.eval(0.95, 0), Err(Error::TauOutOfRange { .. })));
        assert!(b.eval(0.05, 1).is_err());
    }

    #[test]
    fn cubic_second_derivative_kills_linear_function() {
        let g = QuantileGrid::from_range(0.1, 0.9, 0.1).unwrap();
        let b = SplineBasis::cubic(g.clone());
        let vals: Vec<f64> = g.levels().to_vec();
        let theta = b.interpolate(&vals).unwrap();
        for tau in [0.1, 0.17, 0.5, 0.8333, 0.9] {
            assert_abs_diff_eq!(b.eval(tau, 0).unwrap().dot(&theta), tau, epsilon = 1e-12);
            assert_abs_diff_eq!(b.eval(tau, 1).unwrap().dot(&theta), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(b.eval(tau, 2).unwrap().dot(&theta), 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn penalty_scales_and_vanishes() {
        let g = QuantileGrid::from_range(0.1, 0.9, 0.1).unwrap();
        let b = SplineBasis::cubic(g.clone());
        let w = uniform_weights(g.len());
        let zero = PenaltyMatrix::cubic(&b, 2, 10, 0.0, &w).unwrap();
        assert!(zero.is_zero());
        let one = PenaltyMatrix::cubic(&b, 2, 10, 0.3, &w).unwrap();
        let two = PenaltyMatrix::cubic(&b, 2, 10, 0.6, &w).unwrap();
        for (x, y) in one.to_dense().iter().zip(two.to_dense().iter()) {
            assert_abs_diff_eq!(2.0 * x, *y, epsilon = 1e-9 * y.abs().max(1.0));
        }
        assert!(PenaltyMatrix::cubic(&b, 2, 10, 0.3, &[1.0; 3]).is_err());
        let mut neg = w.clone();
        neg[2] = -1.0;
        assert!(PenaltyMatrix::cubic(&b, 2, 10, 0.3, &neg).is_err());
    }

    #[test]
    fn slope_jumps_of_tent() {
        let b = SplineBasis::linear(grid3());
        let jumps = delta_phidot(&b).unwrap();
        assert_eq!(jumps.len(), 2);
        // tent through (0.1, 0), (0.5, 0.4), (0.9, 0)
        let theta = [0.0, 0.4, 0.0];
        assert_abs_diff_eq!(jumps[0].dot(&theta), -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(jumps[1].dot(&theta), 0.0, epsilon = 1e-12);
        let linear = [0.3, 0.7, 1.1];
        for j in &jumps {
            assert_abs_diff_eq!(j.dot(&linear), 0.0, epsilon = 1e-12);
        }
        assert!(delta_phidot(&SplineBasis::cubic(grid3())).is_err());
    }
}
