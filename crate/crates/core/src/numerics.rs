//! Small shared numerical kernels.
//!
//! Nothing here is clever; the point is to have one tested copy of each
//! routine (root bisection, tridiagonal and banded solves, a tiny SPD
//! factorization, table interpolation) instead of five ad-hoc ones.

use crate::error::{Error, Result};

/// Bisect `f` for a root on [lo, hi]; requires a sign change. The interval is
/// shrunk to `tol` (absolute, on the argument).
pub fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    let fhi = f(hi);
    if fhi == 0.0 {
        return hi;
    }
    debug_assert!(flo * fhi < 0.0, "bisect needs a bracketing interval");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval at floating-point resolution
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

/// Quadratic (three-point Lagrange) extrapolation of `(xs, ys)` to `x`.
/// Used for endpoint limits of tabulated coefficients.
pub fn extrapolate3(xs: &[f64; 3], ys: &[f64; 3], x: f64) -> f64 {
    let [x0, x1, x2] = *xs;
    let [y0, y1, y2] = *ys;
    let l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
    y0 * l0 + y1 * l1 + y2 * l2
}

/// First derivative on a non-uniform 3-point stencil, evaluated at `x1`.
pub fn deriv3(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    let h1 = x1 - x0;
    let h2 = x2 - x1;
    -y0 * h2 / (h1 * (h1 + h2)) + y1 * (h2 - h1) / (h1 * h2) + y2 * h1 / (h2 * (h1 + h2))
}

/// Piecewise-linear interpolation on a sorted table, clamped at the ends.
pub fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x).min(n - 1);
    let (x0, x1, y0, y1) = (xs[j - 1], xs[j], ys[j - 1], ys[j]);
    if x1 == x0 {
        return 0.5 * (y0 + y1);
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Tridiagonal factorization (Thomas algorithm) with stored multipliers so a
/// constant matrix can be reused across many right-hand sides.
#[derive(Clone, Debug)]
pub struct Tridiag {
    /// Lower multipliers l[i] (i = 1..n), upper band c, modified diagonal d.
    l: Vec<f64>,
    d: Vec<f64>,
    c: Vec<f64>,
}

impl Tridiag {
    /// Factor the matrix with sub-diagonal `a` (a[0] unused), diagonal `b`,
    /// super-diagonal `c` (c[n-1] unused).
    pub fn factor(a: &[f64], b: &[f64], c: &[f64]) -> Result<Self> {
        let n = b.len();
        let mut l = vec![0.0; n];
        let mut d = vec![0.0; n];
        d[0] = b[0];
        for i in 1..n {
            if d[i - 1] == 0.0 {
                return Err(Error::SolveFailure("tridiagonal pivot is zero".into()));
            }
            l[i] = a[i] / d[i - 1];
            d[i] = b[i] - l[i] * c[i - 1];
        }
        if d[n - 1] == 0.0 {
            return Err(Error::SolveFailure("tridiagonal pivot is zero".into()));
        }
        Ok(Self { l, d, c: c.to_vec() })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.d.len();
        for i in 1..n {
            x[i] -= self.l[i] * x[i - 1];
        }
        x[n - 1] /= self.d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.c[i] * x[i + 1]) / self.d[i];
        }
    }
}

/// Banded matrix in diagonal storage: `band[k][i]` is entry (i, i + k - bw)
/// for k in 0..=2*bw. Factored in place by unpivoted LU; fine for the
/// M-matrices (I - dt L) assembled by the solvers.
pub struct Banded {
    pub n: usize,
    pub bw: usize,
    data: Vec<f64>, // (2*bw + 1) x n, diagonal-major
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; (2 * bw + 1) * n] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let k = j + self.bw - i; // 0..=2*bw by the band invariant
        k * self.n + i
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i.abs_diff(j) <= self.bw);
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            return 0.0;
        }
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.data[at] = v;
    }

    /// In-place LU without pivoting.
    pub fn factor(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let piv = self.get(k, k);
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::SolveFailure(format!("banded pivot {piv} at row {k}")));
            }
            let imax = (k + bw).min(n - 1);
            for i in k + 1..=imax {
                let m = self.get(i, k) / piv;
                if m != 0.0 {
                    self.set(i, k, m);
                    let jmax = (k + bw).min(n - 1);
                    for j in k + 1..=jmax {
                        let v = self.get(i, j) - m * self.get(k, j);
                        self.set(i, j, v);
                    }
                }
            }
        }
        Ok(())
    }

    /// Solve with a previously factored matrix.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut s = x[i];
            for j in j0..i {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let j1 = (i + bw).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=j1 {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s / self.get(i, i);
        }
    }
}

/// Dense LU with partial pivoting for small systems (vertex Schur
/// complements, a handful of unknowns).
#[derive(Clone, Debug)]
pub struct DenseLu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut imax = k;
            let mut vmax = a[k * n + k].abs();
            for i in k + 1..n {
                if a[i * n + k].abs() > vmax {
                    vmax = a[i * n + k].abs();
                    imax = i;
                }
            }
            if vmax == 0.0 || !vmax.is_finite() {
                return Err(Error::SolveFailure(format!("dense pivot {vmax} at column {k}")));
            }
            if imax != k {
                for j in 0..n {
                    a.swap(k * n + j, imax * n + j);
                }
                piv.swap(k, imax);
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let m = a[i * n + k] / pivot;
                a[i * n + k] = m;
                for j in k + 1..n {
                    a[i * n + j] -= m * a[k * n + j];
                }
            }
        }
        Ok(Self { n, a, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] = x[i] - self.a[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] = x[i] - self.a[i * n + j] * x[j];
            }
            x[i] /= self.a[i * n + i];
        }
        x
    }
}

/// Solve the SPD system `A x = b` by Cholesky, retrying with an escalating
/// diagonal shift when the factorization stalls (rank-deficient Gram
/// matrices). Returns the solution and the shift that was actually used.
pub fn solve_spd(a: &[Vec<f64>], b: &[f64], base_shift: f64) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0_f64, f64::max).max(1e-300);
    let mut shift = 0.0;
    for attempt in 0..8 {
        if attempt > 0 {
            shift = base_shift * scale * 10f64.powi(attempt - 1);
        }
        if let Some(l) = cholesky(a, shift, n) {
            // forward/back substitution
            let mut x = b.to_vec();
            for i in 0..n {
                for j in 0..i {
                    x[i] -= l[i][j] * x[j];
                }
                x[i] /= l[i][i];
            }
            for i in (0..n).rev() {
                for j in i + 1..n {
                    x[i] -= l[j][i] * x[j];
                }
                x[i] /= l[i][i];
            }
            return Ok((x, shift));
        }
    }
    Err(Error::SolveFailure("SPD solve failed at maximum shift".into()))
}

fn cholesky(a: &[Vec<f64>], shift: f64, n: usize) -> Option<Vec<Vec<f64>>> {
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            if i == j {
                s += shift;
            }
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence. Deterministic; order-n rules are exact through
/// degree 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// P_n(x) and its derivative by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let pk = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = pk;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// C^2 taper: 1 on [0, a], 0 on [b, inf), smootherstep transition between.
pub fn taper(x: f64, a: f64, b: f64) -> f64 {
    let x = x.abs();
    if x <= a {
        1.0
    } else if x >= b {
        0.0
    } else {
        let t = (x - a) / (b - a);
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// d/dx of [`taper`].
pub fn taper_deriv(x: f64, a: f64, b: f64) -> f64 {
    let ax = x.abs();
    if ax <= a || ax >= b {
        return 0.0;
    }
    let t = (ax - a) / (b - a);
    let dt = -30.0 * t * t * (1.0 - t) * (1.0 - t) / (b - a);
    dt * x.signum()
}

/// d2/dx2 of [`taper`].
pub fn taper_deriv2(x: f64, a: f64, b: f64) -> f64 {
    let ax = x.abs();
    if ax <= a || ax >= b {
        return 0.0;
    }
    let t = (ax - a) / (b - a);
    -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / ((b - a) * (b - a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_lu_solves_permuted_system() {
        // needs pivoting: zero leading entry
        let a = vec![0.0, 2.0, 1.0, /* row 1 */ 1.0, 0.0, 3.0, /* row 2 */ 2.0, 1.0, 0.0];
        let lu = DenseLu::factor(a.clone(), 3).unwrap();
        let x_true = [1.0, -1.0, 2.0];
        let mut b = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a[i * 3 + j] * x_true[j];
            }
        }
        let x = lu.solve(&b);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        for n in [1usize, 2, 5, 16, 64] {
            let (x, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "order {n} weight sum {total}");
            if n >= 2 {
                // integral of x^2 over [-1, 1] is 2/3
                let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
                assert!((s - 2.0 / 3.0).abs() < 1e-13, "order {n}: {s}");
            }
            // degree 2n - 1 monomial integrates to zero by symmetry
            let odd: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(2 * n as i32 - 1)).sum();
            assert!(odd.abs() < 1e-13);
        }
    }

    #[test]
    fn gauss_legendre_converges_on_smooth_integrand() {
        // integral of exp(x) over [-1, 1]
        let exact = std::f64::consts::E - 1.0 / std::f64::consts::E;
        let (x, w) = gauss_legendre(24);
        let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.exp()).sum();
        assert!((s - exact).abs() < 1e-14);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(0.0, 2.0, 1e-12, |x| x * x - 2.0);
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn tridiag_roundtrip() {
        let a = [0.0, -1.0, -1.0, -1.0];
        let b = [2.5, 2.5, 2.5, 2.5];
        let c = [-1.0, -1.0, -1.0, 0.0];
        let t = Tridiag::factor(&a, &b, &c).unwrap();
        let x_true = [1.0, -2.0, 3.0, 0.5];
        // rhs = A x
        let mut rhs = [0.0; 4];
        for i in 0..4 {
            rhs[i] = b[i] * x_true[i];
            if i > 0 {
                rhs[i] += a[i] * x_true[i - 1];
            }
            if i < 3 {
                rhs[i] += c[i] * x_true[i + 1];
            }
        }
        t.solve_in_place(&mut rhs);
        for i in 0..4 {
            assert!((rhs[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_matches_tridiag() {
        let n = 30;
        let mut m = Banded::zeros(n, 3);
        for i in 0..n {
            m.add(i, i, 4.0 + i as f64 * 0.01);
            if i + 3 < n {
                m.add(i, i + 3, -1.0);
                m.add(i + 3, i, -0.5);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.2);
                m.add(i + 1, i, -0.7);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            for j in i.saturating_sub(3)..(i + 4).min(n) {
                rhs[i] += m.get(i, j) * x_true[j];
            }
        }
        m.factor().unwrap();
        m.solve_in_place(&mut rhs);
        for i in 0..n {
            assert!((rhs[i] - x_true[i]).abs() < 1e-10, "row {i}");
        }
    }

    #[test]
    fn spd_solve_with_rank_deficiency() {
        // rank-1 Gram matrix: needs the shift path
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let b = vec![2.0, 2.0];
        let (x, shift) = solve_spd(&a, &b, 1e-10).unwrap();
        assert!(shift > 0.0);
        assert!((x[0] + x[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn taper_is_c1_at_joints() {
        assert_eq!(taper(0.3, 1.0, 2.0), 1.0);
        assert_eq!(taper(2.5, 1.0, 2.0), 0.0);
        let eps = 1e-6;
        let fd = (taper(1.0 + eps, 1.0, 2.0) - taper(1.0, 1.0, 2.0)) / eps;
        assert!(fd.abs() < 1e-4);
        assert!((taper_deriv(1.5, 1.0, 2.0) - (taper(1.5 + eps, 1.0, 2.0) - taper(1.5 - eps, 1.0, 2.0)) / (2.0 * eps)).abs() < 1e-6);
    }
}
