//! Problem assembly for the stacked quantile fits.
//!
//! For a grid `tau_1 < ... < tau_L` the data block of the constraint matrix
//! stacks `X Phi(tau_l)` for every level, where `Phi(tau) = I_p ⊗ phi(tau)^T`.
//! Row `t` of level block `l` is therefore `x_t^T ⊗ phi(tau_l)^T`, and the
//! weighted Gram matrix of a level block is `(X' W_l X) ⊗ phi phi'`. The
//! operator below never materializes the stacked matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ipm::BoxDualOperator;
use crate::linalg::{BandedSym, SparseRows};
use crate::splines::{check_weights, delta_phidot, BasisRow, PenaltyMatrix, SplineBasis, SplineKind};

/// Default cap on the number of stacked constraint rows.
pub const DEFAULT_MAX_ROWS: usize = 50_000_000;

/// Design matrix `X` (`n x p`) and response `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, names)
    }

    pub fn with_names(x: DMatrix<f64>, y: DVector<f64>, names: Vec<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 || n < p {
            return Err(Error::InvalidInput(format!("need n >= p >= 1, got n = {n}, p = {p}")));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!("X has {n} rows but y has {}", y.len())));
        }
        if names.len() != p {
            return Err(Error::InvalidInput(format!("{} column names for {p} columns", names.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in X or y".into()));
        }
        Ok(Self { x, y, names })
    }

    /// Intercept-only design.
    pub fn intercept_only(y: &[f64]) -> Result<Self> {
        Self::with_names(
            DMatrix::from_element(y.len(), 1, 1.0),
            DVector::from_column_slice(y),
            vec!["(intercept)".into()],
        )
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// A dataset made of the given rows, in order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let p = self.p();
        let x = DMatrix::from_fn(rows.len(), p, |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        Self::with_names(x, y, self.names.clone())
    }

    pub(crate) fn row_major_x(&self) -> Vec<f64> {
        let (n, p) = self.x.shape();
        let mut out = Vec::with_capacity(n * p);
        for t in 0..n {
            for j in 0..p {
                out.push(self.x[(t, j)]);
            }
        }
        out
    }
}

/// The stacked matrix `[D; S]`: data rows `x_t^T ⊗ phi(tau_l)^T` for every level,
/// followed by optional penalty rows `e_j^T ⊗ s_l^T` for every penalty block.
#[derive(Debug, Clone)]
pub struct KronDesign {
    n: usize,
    p: usize,
    k: usize,
    x: Vec<f64>,
    levels: Vec<BasisRow>,
    penalty: Vec<BasisRow>,
    bandwidth: usize,
}

impl KronDesign {
    pub fn new(data: &Dataset, levels: Vec<BasisRow>, penalty: Vec<BasisRow>, k: usize) -> Self {
        let p = data.p();
        let spread = levels
            .iter()
            .chain(&penalty)
            .map(|r| r.values.len().saturating_sub(1))
            .max()
            .unwrap_or(0);
        Self { n: data.n(), p, k, x: data.row_major_x(), levels, penalty, bandwidth: spread * p + p - 1 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Basis dimension `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_rows(&self) -> &[BasisRow] {
        &self.levels
    }

    pub fn penalty_rows(&self) -> &[BasisRow] {
        &self.penalty
    }

    /// Number of data rows `n L`.
    pub fn data_rows(&self) -> usize {
        self.n * self.levels.len()
    }

    /// `beta(tau_l) = Phi(tau_l) theta` for level `l`.
    pub fn coef_at_level(&self, l: usize, theta: &[f64]) -> Vec<f64> {
        let row = &self.levels[l];
        (0..self.p).map(|j| row.dot(&theta[j * self.k..(j + 1) * self.k])).collect()
    }

    /// The same rows in coordinates `alpha` with `theta_j = T alpha_j` for every covariate.
    pub fn reparameterized(&self, t: &DMatrix<f64>) -> KronDesign {
        let map = |r: &BasisRow| {
            let values = (0..t.ncols())
                .map(|c| r.values.iter().enumerate().map(|(i, v)| v * t[(r.start + i, c)]).sum())
                .collect();
            BasisRow { start: 0, values }
        };
        let levels: Vec<BasisRow> = self.levels.iter().map(map).collect();
        let penalty: Vec<BasisRow> = self.penalty.iter().map(map).collect();
        let k = t.ncols();
        Self { n: self.n, p: self.p, k, x: self.x.clone(), levels, penalty, bandwidth: k * self.p - 1 }
    }

    /// Explicit sparse copy, mostly for checks.
    pub fn to_sparse(&self) -> SparseRows {
        let mut out = SparseRows::new(self.p * self.k);
        for row in &self.levels {
            for t in 0..self.n {
                let xt = &self.x[t * self.p..(t + 1) * self.p];
                out.push_row((0..self.p).flat_map(|j| {
                    row.values.iter().enumerate().map(move |(i, v)| (j * self.k + row.start + i, xt[j] * v))
                }));
            }
        }
        for row in &self.penalty {
            for j in 0..self.p {
                out.push_row(row.values.iter().enumerate().map(|(i, v)| (j * self.k + row.start + i, *v)));
            }
        }
        out
    }

    #[inline]
    fn position(&self, j: usize, k: usize) -> usize {
        k * self.p + j
    }
}

impl BoxDualOperator for KronDesign {
    fn nrows(&self) -> usize {
        self.data_rows() + self.p * self.penalty.len()
    }

    fn ncols(&self) -> usize {
        self.p * self.k
    }

    fn mul_into(&self, theta: &[f64], out: &mut [f64]) {
        let (n, p, k) = (self.n, self.p, self.k);
        let mut beta = vec![0.0; p];
        for (l, row) in self.levels.iter().enumerate() {
            for (j, b) in beta.iter_mut().enumerate() {
                *b = row.dot(&theta[j * k..(j + 1) * k]);
            }
            let block = &mut out[l * n..(l + 1) * n];
            for (t, o) in block.iter_mut().enumerate() {
                let xt = &self.x[t * p..(t + 1) * p];
                *o = xt.iter().zip(&beta).map(|(x, b)| x * b).sum();
            }
        }
        let base = self.data_rows();
        for (l, row) in self.penalty.iter().enumerate() {
            for j in 0..p {
                out[base + l * p + j] = row.dot(&theta[j * k..(j + 1) * k]);
            }
        }
    }

    fn tr_mul_into(&self, z: &[f64], out: &mut [f64]) {
        let (n, p, k) = (self.n, self.p, self.k);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut xtz = vec![0.0; p];
        for (l, row) in self.levels.iter().enumerate() {
            xtz.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..n {
                let zt = z[l * n + t];
                let xt = &self.x[t * p..(t + 1) * p];
                for (acc, x) in xtz.iter_mut().zip(xt) {
                    *acc += x * zt;
                }
            }
            for j in 0..p {
                for (i, v) in row.values.iter().enumerate() {
                    out[j * k + row.start + i] += xtz[j] * v;
                }
            }
        }
        let base = self.data_rows();
        for (l, row) in self.penalty.iter().enumerate() {
            for j in 0..p {
                let zj = z[base + l * p + j];
                for (i, v) in row.values.iter().enumerate() {
                    out[j * k + row.start + i] += zj * v;
                }
            }
        }
    }

    fn row_norms_sq(&self) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let xsq: Vec<f64> = (0..n).map(|t| self.x[t * p..(t + 1) * p].iter().map(|v| v * v).sum()).collect();
        let mut out = Vec::with_capacity(self.nrows());
        for row in &self.levels {
            let phi: f64 = row.values.iter().map(|v| v * v).sum();
            out.extend(xsq.iter().map(|x| x * phi));
        }
        for row in &self.penalty {
            let s: f64 = row.values.iter().map(|v| v * v).sum();
            out.extend(std::iter::repeat_n(s, p));
        }
        out
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        let (n, p, k) = (self.n, self.p, self.k);
        out.iter_mut().for_each(|o| *o = 0.0);
        if i < self.data_rows() {
            let (l, t) = (i / n, i % n);
            let row = &self.levels[l];
            for j in 0..p {
                let x = self.x[t * p + j];
                for (s, v) in row.values.iter().enumerate() {
                    out[j * k + row.start + s] += x * v;
                }
            }
        } else {
            let r = i - self.data_rows();
            let (row, j) = (&self.penalty[r / p], r % p);
            for (s, v) in row.values.iter().enumerate() {
                out[j * k + row.start + s] += v;
            }
        }
    }

    fn band_positions(&self) -> Vec<usize> {
        (0..self.p).flat_map(|j| (0..self.k).map(move |k| (j, k))).map(|(j, k)| self.position(j, k)).collect()
    }

    fn gram_bandwidth(&self) -> usize {
        self.bandwidth
    }

    fn add_weighted_gram(&self, w: &[f64], m: &mut BandedSym) {
        let (n, p) = (self.n, self.p);
        let mut g = vec![0.0; p * p];
        for (l, row) in self.levels.iter().enumerate() {
            g.iter_mut().for_each(|v| *v = 0.0);
            let wl = &w[l * n..(l + 1) * n];
            for (t, wt) in wl.iter().enumerate() {
                let xt = &self.x[t * p..(t + 1) * p];
                for a in 0..p {
                    let s = wt * xt[a];
                    for b in 0..=a {
                        g[a * p + b] += s * xt[b];
                    }
                }
            }
            for a in 0..p {
                for b in 0..=a {
                    let gab = g[a * p + b];
                    for (i1, v1) in row.values.iter().enumerate() {
                        for (i2, v2) in row.values.iter().enumerate() {
                            let pa = self.position(a, row.start + i1);
                            let pb = self.position(b, row.start + i2);
                            if a == b && pa < pb {
                                continue;
                            }
                            m.add(pa, pb, gab * v1 * v2);
                        }
                    }
                }
            }
        }
        let base = self.data_rows();
        for (l, row) in self.penalty.iter().enumerate() {
            for j in 0..p {
                let wj = w[base + l * p + j];
                for (i1, v1) in row.values.iter().enumerate() {
                    for (i2, v2) in row.values.iter().enumerate().take(i1 + 1) {
                        m.add(self.position(j, row.start + i1), self.position(j, row.start + i2), wj * v1 * v2);
                    }
                }
            }
        }
    }
}

/// `theta_j = T alpha_j` for each of the `p` stacked blocks.
pub fn expand_coefficients(t: &DMatrix<f64>, alpha: &[f64], p: usize) -> DVector<f64> {
    let (k, kk) = (t.nrows(), t.ncols());
    let mut theta = DVector::zeros(p * k);
    for j in 0..p {
        let a = DVector::from_column_slice(&alpha[j * kk..(j + 1) * kk]);
        theta.rows_mut(j * k, k).copy_from(&(t * a));
    }
    theta
}

/// Grid, basis and smoothing metadata carried by assembled problems.
#[derive(Debug, Clone)]
pub struct ProblemMeta {
    pub basis: SplineBasis,
    pub c: f64,
    pub weights: Vec<f64>,
    /// `c_l = n c w_l`.
    pub c_per_knot: Vec<f64>,
}

/// Box-dual LP of the linear-spline fit: `max b'zeta  s.t.  C'zeta = a, zeta in [0,1]`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    /// `C = [D; 2P]`.
    pub c: KronDesign,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub meta: ProblemMeta,
}

/// Primal QP of the cubic-spline fit:
/// `min c'u + (1-c)'v + theta' Omega theta / 2  s.t.  D theta + u - v = b`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub d: KronDesign,
    pub b: DVector<f64>,
    /// Level weights: block `l` is constant `tau_l`.
    pub c_vec: DVector<f64>,
    pub omega: PenaltyMatrix,
    pub meta: ProblemMeta,
}

impl QpProblem {
    /// `a = D'(1 - c)`.
    pub fn a(&self) -> DVector<f64> {
        let ones_minus_c: Vec<f64> = self.c_vec.iter().map(|c| 1.0 - c).collect();
        let mut out = vec![0.0; self.d.ncols()];
        self.d.tr_mul_into(&ones_minus_c, &mut out);
        DVector::from_vec(out)
    }
}

fn check_assembly(data: &Dataset, basis: &SplineBasis, c: f64, weights: &[f64], cap: usize) -> Result<()> {
    check_weights(weights, basis.grid().len())?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("smoothing scalar must be finite and >= 0, got {c}")));
    }
    let rows = data.n().checked_mul(basis.grid().len()).unwrap_or(usize::MAX);
    if rows > cap {
        return Err(Error::DimensionOverflow { rows, cap });
    }
    Ok(())
}

fn level_rows(basis: &SplineBasis) -> Result<Vec<BasisRow>> {
    basis.grid().levels().iter().map(|&t| basis.eval_row(t, 0)).collect()
}

fn stacked_response(data: &Dataset, levels: usize, extra_zeros: usize) -> DVector<f64> {
    let n = data.n();
    DVector::from_fn(n * levels + extra_zeros, |i, _| if i < n * levels { data.y()[i % n] } else { 0.0 })
}

/// Assembles the cubic-spline QP with `c_l = n c w_l`.
pub fn build_qp(data: &Dataset, basis: &SplineBasis, c: f64, weights: &[f64]) -> Result<QpProblem> {
    build_qp_with_cap(data, basis, c, weights, DEFAULT_MAX_ROWS)
}

pub fn build_qp_with_cap(
    data: &Dataset,
    basis: &SplineBasis,
    c: f64,
    weights: &[f64],
    cap: usize,
) -> Result<QpProblem> {
    if basis.kind() != SplineKind::Cubic {
        return Err(Error::InvalidInput("the QP form needs a cubic basis".into()));
    }
    check_assembly(data, basis, c, weights, cap)?;
    let omega = PenaltyMatrix::cubic(basis, data.p(), data.n(), c, weights)?;
    let d = KronDesign::new(data, level_rows(basis)?, Vec::new(), basis.dim());
    let levels = basis.grid().levels();
    let n = data.n();
    let c_vec = DVector::from_fn(n * levels.len(), |i, _| levels[i / n]);
    Ok(QpProblem {
        b: stacked_response(data, levels.len(), 0),
        c_vec,
        meta: ProblemMeta {
            basis: basis.clone(),
            c,
            weights: weights.to_vec(),
            c_per_knot: omega.c_per_knot().to_vec(),
        },
        omega,
        d,
    })
}

/// Assembles the linear-spline box-dual LP with `c_l = n c w_l`.
pub fn build_lp(data: &Dataset, basis: &SplineBasis, c: f64, weights: &[f64]) -> Result<LpProblem> {
    build_lp_with_cap(data, basis, c, weights, DEFAULT_MAX_ROWS)
}

pub fn build_lp_with_cap(
    data: &Dataset,
    basis: &SplineBasis,
    c: f64,
    weights: &[f64],
    cap: usize,
) -> Result<LpProblem> {
    if basis.kind() != SplineKind::Linear {
        return Err(Error::InvalidInput("the LP form needs a linear basis".into()));
    }
    check_assembly(data, basis, c, weights, cap)?;
    let (n, p) = (data.n(), data.p());
    let levels = basis.grid().levels();
    let c_per_knot: Vec<f64> = weights.iter().map(|w| n as f64 * c * w).collect();
    let jumps = delta_phidot(basis)?;
    let penalty: Vec<BasisRow> = jumps.iter().zip(&c_per_knot).map(|(r, cl)| r.scaled(2.0 * cl)).collect();
    let design = KronDesign::new(data, level_rows(basis)?, penalty, basis.dim());

    // a = Σ_l (1 - tau_l) Phi'(tau_l) X'1 + Σ_l c_l ΔΦ̇'(tau_l) 1_p, i.e. C' zeta0 for the default start
    let mut zeta0 = Vec::with_capacity(design.nrows());
    for &tau in levels {
        zeta0.extend(std::iter::repeat_n(1.0 - tau, n));
    }
    zeta0.extend(std::iter::repeat_n(0.5, p * jumps.len()));
    let mut a = vec![0.0; design.ncols()];
    design.tr_mul_into(&zeta0, &mut a);

    Ok(LpProblem {
        b: stacked_response(data, levels.len(), p * jumps.len()),
        a: DVector::from_vec(a),
        c: design,
        meta: ProblemMeta { basis: basis.clone(), c, weights: weights.to_vec(), c_per_knot },
    })
}

/// Data-dependent scale `r` in `c = r * 1000^(spar - 1)`.
///
/// The numerator is `n^-1 Σ_l ||X Phi(tau_l)||_1` (entrywise absolute sum). The
/// denominator is `Σ_l w_l tr(Phi''(tau_l)' Phi''(tau_l))` for cubic bases and
/// `Σ_{l<L} w_l ||ΔΦ̇(tau_l)||_1` for linear ones.
pub fn spar_scale(data: &Dataset, basis: &SplineBasis, weights: &[f64]) -> Result<f64> {
    check_weights(weights, basis.grid().len())?;
    let (n, p) = (data.n() as f64, data.p() as f64);
    let levels = basis.grid().levels();
    let abs_x: f64 = data.x().iter().map(|v| v.abs()).sum();
    let mut numerator = 0.0;
    for &tau in levels {
        let row = basis.eval_row(tau, 0)?;
        numerator += abs_x * row.values.iter().map(|v| v.abs()).sum::<f64>();
    }
    numerator /= n;
    let denominator = match basis.kind() {
        SplineKind::Cubic => levels
            .iter()
            .zip(weights)
            .map(|(&tau, w)| {
                let row = basis.eval_row(tau, 2)?;
                Ok(w * p * row.values.iter().map(|v| v * v).sum::<f64>())
            })
            .sum::<Result<f64>>()?,
        SplineKind::Linear => delta_phidot(basis)?
            .iter()
            .zip(weights)
            .map(|(r, w)| w * p * r.values.iter().map(|v| v.abs()).sum::<f64>())
            .sum(),
    };
    if !(denominator > 0.0) || !(numerator > 0.0) {
        return Err(Error::DegenerateScale(format!(
            "numerator {numerator:e}, denominator {denominator:e}"
        )));
    }
    Ok(numerator / denominator)
}

/// `c = r * 1000^(spar - 1)`.
pub fn spar_to_c(spar: f64, data: &Dataset, basis: &SplineBasis, weights: &[f64]) -> Result<f64> {
    if !spar.is_finite() {
        return Err(Error::InvalidInput(format!("spar must be finite, got {spar}")));
    }
    Ok(spar_scale(data, basis, weights)? * 1000f64.powf(spar - 1.0))
}
