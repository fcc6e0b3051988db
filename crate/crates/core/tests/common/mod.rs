//! Reference implementations shared by the integration tests.
//!
//! Nothing here calls the library's basis, assembly, or solver code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Check loss.
pub fn rho(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Clamped cubic knot vector on `levels`.
pub fn cubic_knots(levels: &[f64]) -> Vec<f64> {
    let (a, b) = (levels[0], *levels.last().unwrap());
    let mut t = vec![a; 3];
    t.extend_from_slice(levels);
    t.extend([b; 3]);
    t
}

/// Degree-0 indicator. Right-continuous spans `[t_i, t_{i+1})` with the last
/// nonempty one closed, or with `left` the mirror image `(t_i, t_{i+1}]`.
fn indicator(t: &[f64], i: usize, x: f64, left: bool) -> f64 {
    let inside = if left {
        let first = t.iter().position(|v| *v > t[0]).unwrap() - 1;
        (t[i] < x && x <= t[i + 1]) || (i == first && x == t[i])
    } else {
        let last = t.iter().rposition(|v| *v < *t.last().unwrap()).unwrap();
        (t[i] <= x && x < t[i + 1]) || (i == last && x == t[i + 1])
    };
    if inside && t[i + 1] > t[i] {
        1.0
    } else {
        0.0
    }
}

/// Cox-de Boor B-spline `i` of degree `k`.
fn bspline(t: &[f64], i: usize, k: usize, x: f64, left: bool) -> f64 {
    if k == 0 {
        return indicator(t, i, x, left);
    }
    let mut v = 0.0;
    if t[i + k] > t[i] {
        v += (x - t[i]) / (t[i + k] - t[i]) * bspline(t, i, k - 1, x, left);
    }
    if t[i + k + 1] > t[i + 1] {
        v += (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * bspline(t, i + 1, k - 1, x, left);
    }
    v
}

/// `d`-th derivative of B-spline `i` of degree `k`.
fn bspline_deriv(t: &[f64], i: usize, k: usize, d: usize, x: f64, left: bool) -> f64 {
    if d == 0 {
        return bspline(t, i, k, x, left);
    }
    let mut v = 0.0;
    if t[i + k] > t[i] {
        v += k as f64 / (t[i + k] - t[i]) * bspline_deriv(t, i, k - 1, d - 1, x, left);
    }
    if t[i + k + 1] > t[i + 1] {
        v -= k as f64 / (t[i + k + 1] - t[i + 1]) * bspline_deriv(t, i + 1, k - 1, d - 1, x, left);
    }
    v
}

/// All `L + 2` cubic basis functions (or a derivative) at `x`.
pub fn cubic_row(levels: &[f64], d: usize, x: f64) -> Vec<f64> {
    let t = cubic_knots(levels);
    (0..levels.len() + 2).map(|i| bspline_deriv(&t, i, 3, d, x, false)).collect()
}

/// Same as [`cubic_row`] but taking limits from the left.
pub fn cubic_row_left(levels: &[f64], d: usize, x: f64) -> Vec<f64> {
    let t = cubic_knots(levels);
    (0..levels.len() + 2).map(|i| bspline_deriv(&t, i, 3, d, x, true)).collect()
}

/// Hat functions on `levels` at `x`.
pub fn hat_row(levels: &[f64], x: f64) -> Vec<f64> {
    let l = levels.len();
    let mut row = vec![0.0; l];
    for k in 0..l {
        let left = if k > 0 { levels[k - 1] } else { f64::NEG_INFINITY };
        let right = if k + 1 < l { levels[k + 1] } else { f64::INFINITY };
        row[k] = if x == levels[k] {
            1.0
        } else if x > left && x < levels[k] {
            (x - left) / (levels[k] - left)
        } else if x > levels[k] && x < right {
            (right - x) / (right - levels[k])
        } else {
            0.0
        };
    }
    row
}

/// Tiny single-covariate problem: `y_t = x_t beta(tau) + noise`.
#[derive(Debug, Clone)]
pub struct Tiny {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub levels: Vec<f64>,
    pub c: f64,
}

impl Tiny {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let n = rng.random_range(1..=6);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0) * if rng.random_bool(0.8) { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        // Three levels with spacing at least 0.1.
        let a = rng.random_range(0.05..0.4);
        let b = a + rng.random_range(0.1..0.3);
        let c3 = b + rng.random_range(0.1..(0.95 - b));
        Self { x, y, levels: vec![a, b, c3], c: rng.random_range(0.0..1.0) }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Per-level data loss for fitted coefficients `beta[l]`.
    pub fn data_loss(&self, beta: &[f64]) -> f64 {
        let mut s = 0.0;
        for (l, &tau) in self.levels.iter().enumerate() {
            for t in 0..self.n() {
                s += rho(self.y[t] - self.x[t] * beta[l], tau);
            }
        }
        s
    }

    /// Linear-spline objective at hat coefficients `theta` (= values at the levels).
    ///
    /// The slope penalty is `n c |s_1 - s_0|`; the second jump compares the
    /// final segment with itself.
    pub fn linear_objective(&self, theta: &[f64]) -> f64 {
        let lv = &self.levels;
        let s0 = (theta[1] - theta[0]) / (lv[1] - lv[0]);
        let s1 = (theta[2] - theta[1]) / (lv[2] - lv[1]);
        self.data_loss(theta) + self.n() as f64 * self.c * (s1 - s0).abs()
    }

    /// `Omega = 2 sum_l n c phi''(tau_l) phi''(tau_l)'`.
    pub fn cubic_omega(&self) -> DMatrix<f64> {
        let k = self.levels.len() + 2;
        let mut om = DMatrix::zeros(k, k);
        for &tau in &self.levels {
            let r = DVector::from_vec(cubic_row(&self.levels, 2, tau));
            om += 2.0 * self.n() as f64 * self.c * &r * r.transpose();
        }
        om
    }

    /// `L x K` matrix of cubic basis values at the levels.
    pub fn cubic_phi(&self) -> DMatrix<f64> {
        let k = self.levels.len() + 2;
        DMatrix::from_fn(self.levels.len(), k, |l, i| cubic_row(&self.levels, 0, self.levels[l])[i])
    }

    pub fn cubic_objective(&self, theta: &[f64]) -> f64 {
        let th = DVector::from_column_slice(theta);
        let beta = self.cubic_phi() * &th;
        self.data_loss(beta.as_slice()) + 0.5 * (th.transpose() * self.cubic_omega() * &th)[(0, 0)]
    }
}

/// Minimum of the linear-spline objective by enumerating vertices of the
/// hyperplane arrangement: each data row `x_t theta_l = y_t` and the slope-jump
/// row. Every basic solution of the primal LP is one of these vertices.
pub fn lp_vertex_oracle(p: &Tiny) -> f64 {
    let lv = &p.levels;
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    for l in 0..3 {
        for t in 0..p.n() {
            let mut a = [0.0; 3];
            a[l] = p.x[t];
            rows.push((a, p.y[t]));
        }
    }
    let (h0, h1) = (lv[1] - lv[0], lv[2] - lv[1]);
    rows.push(([1.0 / h0, -1.0 / h0 - 1.0 / h1, 1.0 / h1], 0.0));
    let mut best = f64::INFINITY;
    let m = rows.len();
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                let a = DMatrix::from_fn(3, 3, |r, c| [rows[i].0, rows[j].0, rows[k].0][r][c]);
                let b = DVector::from_column_slice(&[rows[i].1, rows[j].1, rows[k].1]);
                if a.determinant().abs() < 1e-12 {
                    continue;
                }
                if let Some(theta) = a.lu().solve(&b) {
                    best = best.min(p.linear_objective(theta.as_slice()));
                }
            }
        }
    }
    best
}

/// Minimum of the cubic-spline objective by active-set enumeration.
///
/// The data term depends on `theta` only through `beta = Phi theta`, and for a
/// fixed `beta` the smallest penalty is the quadratic `beta' M beta / 2`
/// obtained from the equality-constrained KKT system. The reduced objective is
/// separable piecewise linear plus a quadratic, so every coordinate of the
/// minimizer either sits at a breakpoint `y_t / x_t` or lies inside a segment
/// where its loss has a known slope; each combination is solved exactly.
pub fn qp_active_set_oracle(p: &Tiny) -> f64 {
    let l = p.levels.len();
    let k = l + 2;
    let phi = p.cubic_phi();
    let omega = p.cubic_omega();
    let mut kkt = DMatrix::zeros(k + l, k + l);
    kkt.view_mut((0, 0), (k, k)).copy_from(&omega);
    kkt.view_mut((0, k), (k, l)).copy_from(&phi.transpose());
    kkt.view_mut((k, 0), (l, k)).copy_from(&phi);
    let inv = kkt.try_inverse().expect("Phi is injective on the null space of Omega");
    let m: DMatrix<f64> = -inv.view((k, k), (l, l)).into_owned();

    let mut bps: Vec<f64> = (0..p.n()).map(|t| p.y[t] / p.x[t]).collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let nb = bps.len();
    // State s of a coordinate: s < nb sits at breakpoint s; otherwise it lies in
    // open segment s - nb, between bps[s - nb - 1] and bps[s - nb].
    let states = 2 * nb + 1;
    let at_bp = |s: usize| s < nb;
    let slope = |lvl: usize, b: f64| -> f64 {
        let tau = p.levels[lvl];
        (0..p.n())
            .map(|t| {
                let r = p.y[t] - p.x[t] * b;
                let dr = -p.x[t];
                if r > 0.0 {
                    tau * dr
                } else {
                    (tau - 1.0) * dr
                }
            })
            .sum()
    };
    let reduced = |beta: &[f64]| {
        let b = DVector::from_column_slice(beta);
        p.data_loss(beta) + 0.5 * (b.transpose() * &m * &b)[(0, 0)]
    };

    let mut best = f64::INFINITY;
    let total = states.pow(l as u32);
    for code in 0..total {
        let mut st = vec![0; l];
        let mut c = code;
        for s in st.iter_mut() {
            *s = c % states;
            c /= states;
        }
        let free: Vec<usize> = (0..l).filter(|&i| !at_bp(st[i])).collect();
        let mut beta = vec![0.0; l];
        for i in 0..l {
            if at_bp(st[i]) {
                beta[i] = bps[st[i]];
            }
        }
        if !free.is_empty() {
            let seg = |i: usize| {
                let s = st[i] - nb;
                let lo = if s == 0 { f64::NEG_INFINITY } else { bps[s - 1] };
                let hi = if s == nb { f64::INFINITY } else { bps[s] };
                (lo, hi)
            };
            let probe = |i: usize| {
                let (lo, hi) = seg(i);
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + 1.0,
                    (false, true) => hi - 1.0,
                    _ => 0.0,
                }
            };
            let nf = free.len();
            let mff = DMatrix::from_fn(nf, nf, |a, b| m[(free[a], free[b])]);
            let rhs = DVector::from_fn(nf, |a, _| {
                let i = free[a];
                let fixed: f64 = (0..l).filter(|j| at_bp(st[*j])).map(|j| m[(i, j)] * beta[j]).sum();
                -slope(i, probe(i)) - fixed
            });
            let Some(sol) = mff.clone().lu().solve(&rhs) else { continue };
            if (&mff * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
                continue;
            }
            let mut inside = true;
            for (a, &i) in free.iter().enumerate() {
                let (lo, hi) = seg(i);
                if sol[a] < lo - 1e-12 || sol[a] > hi + 1e-12 {
                    inside = false;
                }
                beta[i] = sol[a];
            }
            if !inside {
                continue;
            }
        }
        best = best.min(reduced(&beta));
    }
    best
}

/// Sample quantile by sorting: the `ceil(n tau)`-th order statistic.
pub fn sample_quantile(y: &[f64], tau: f64) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((tau * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

/// Prints and records one acceptance line.
pub struct Ledger {
    pub failures: Vec<String>,
}

impl Ledger {
    pub fn new() -> Self {
        Self { failures: Vec::new() }
    }

    pub fn record(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures.push(name.to_string());
        }
    }
}
