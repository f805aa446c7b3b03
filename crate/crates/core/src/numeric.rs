//! Small numerical building blocks shared by the orbit, averaging and
//! Monte Carlo layers: periodic spectral calculus, finite-difference
//! weights, cubic splines, least squares and scalar root finding.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward/inverse FFT pair for one transform length.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Spectral {
    pub fn new(n: usize) -> Spectral {
        let mut planner = FftPlanner::new();
        Spectral {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Signed wavenumber of FFT bin `k`. The Nyquist bin maps to 0 for
    /// odd-order derivatives, which keeps derivatives of real data real.
    fn wavenumber(&self, k: usize) -> f64 {
        let n = self.n;
        if 2 * k < n {
            k as f64
        } else if 2 * k == n {
            0.0
        } else {
            k as f64 - n as f64
        }
    }

    fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.n, "spectral length mismatch");
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// First derivative d/dφ of samples on the uniform grid φ_i = 2πi/n.
    pub fn derivative(&self, values: &[f64]) -> Vec<f64> {
        let mut c = self.forward(values);
        for (k, ck) in c.iter_mut().enumerate() {
            *ck *= Complex64::new(0.0, self.wavenumber(k));
        }
        self.inverse_real(c)
    }

    /// Second derivative d²/dφ². The Nyquist mode is kept (its second
    /// derivative is real).
    pub fn second_derivative(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut c = self.forward(values);
        for (k, ck) in c.iter_mut().enumerate() {
            let w = if 2 * k <= n { k as f64 } else { k as f64 - n as f64 };
            *ck *= -w * w;
        }
        self.inverse_real(c)
    }

    /// Zero-mean periodic antiderivative of the zero-mean part of `values`.
    pub fn antiderivative(&self, values: &[f64]) -> Vec<f64> {
        let mut c = self.forward(values);
        c[0] = Complex64::new(0.0, 0.0);
        for (k, ck) in c.iter_mut().enumerate().skip(1) {
            let w = self.wavenumber(k);
            if w == 0.0 {
                *ck = Complex64::new(0.0, 0.0);
            } else {
                *ck /= Complex64::new(0.0, w);
            }
        }
        self.inverse_real(c)
    }

    /// Complex Fourier coefficients normalized so that
    /// `f(φ) = Σ c_k e^{ikφ}` with the Nyquist term split symmetrically.
    pub fn interpolant(&self, values: &[f64]) -> TrigInterpolant {
        let c = self.forward(values);
        let n = self.n;
        let scale = 1.0 / n as f64;
        let half = n / 2;
        let mean = c[0].re * scale;
        let mut coef = Vec::with_capacity(half);
        for (k, ck) in c.iter().enumerate().take(half + 1).skip(1) {
            let mut z = *ck * scale;
            if n % 2 == 0 && k == half {
                z *= 0.5;
            }
            coef.push(z);
        }
        TrigInterpolant { mean, coef }
    }
}

/// Real trigonometric interpolant of periodic samples.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    mean: f64,
    coef: Vec<Complex64>,
}

impl TrigInterpolant {
    /// Value and first two derivatives at φ.
    pub fn eval3(&self, phi: f64) -> (f64, f64, f64) {
        let step = Complex64::from_polar(1.0, phi);
        let mut e = step;
        let mut v = self.mean;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (j, c) in self.coef.iter().enumerate() {
            let k = (j + 1) as f64;
            let term = c * e;
            v += 2.0 * term.re;
            d1 -= 2.0 * k * term.im;
            d2 -= 2.0 * k * k * term.re;
            e *= step;
        }
        (v, d1, d2)
    }

    pub fn eval(&self, phi: f64) -> f64 {
        self.eval3(phi).0
    }
}

/// Periodic trapezoid mean of uniformly sampled data.
pub fn periodic_mean(values: &[f64]) -> f64 {
    // pairwise-free Kahan summation keeps the 1e-14 examples honest
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum / values.len() as f64
}

/// Fornberg's algorithm: weights for derivatives 0..=m at `x0` using the
/// nodes `xs`. Returns `w[d][j]`.
pub fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Derivative operator along a nonuniform grid: for each node a short
/// stencil (centered where possible, one-sided at the ends) with weights
/// for every derivative order below the stencil width.
#[derive(Debug, Clone)]
pub struct GridDiff {
    width: usize,
    stencils: Vec<(usize, Vec<Vec<f64>>)>,
}

impl GridDiff {
    pub fn new(grid: &[f64], width: usize) -> GridDiff {
        let n = grid.len();
        let width = width.min(n);
        let stencils = (0..n)
            .map(|i| {
                let start = i.saturating_sub(width / 2).min(n - width);
                let xs = &grid[start..start + width];
                (start, fornberg_weights(grid[i], xs, width - 1))
            })
            .collect();
        GridDiff { width, stencils }
    }

    /// `order`-th derivative of nodal values.
    pub fn deriv(&self, values: &[f64], order: usize) -> Vec<f64> {
        assert!(order < self.width, "derivative order exceeds stencil width");
        self.stencils
            .iter()
            .map(|(start, w)| w[order].iter().zip(&values[*start..]).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn d1(&self, values: &[f64]) -> Vec<f64> {
        self.deriv(values, 1)
    }

    pub fn d2(&self, values: &[f64]) -> Vec<f64> {
        self.deriv(values, 2)
    }

    /// Derivative along the first index of a row-major `rows × cols` table.
    pub fn deriv_rows(&self, table: &[f64], cols: usize, order: usize) -> Vec<f64> {
        assert!(order < self.width, "derivative order exceeds stencil width");
        let mut out = vec![0.0; table.len()];
        for (i, (start, w)) in self.stencils.iter().enumerate() {
            let dst = &mut out[i * cols..(i + 1) * cols];
            for (s, &wt) in w[order].iter().enumerate() {
                let src = &table[(start + s) * cols..(start + s + 1) * cols];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += wt * v;
                }
            }
        }
        out
    }
}

/// Natural cubic spline through strictly increasing abscissae.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> CubicSpline {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n, "spline needs matching data of length >= 2");
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for second derivatives (Thomas algorithm)
            let mut a = vec![0.0; n];
            let mut b = vec![1.0; n];
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                a[i] = h0 / 6.0;
                b[i] = (h0 + h1) / 3.0;
                c[i] = h1 / 6.0;
                d[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
            }
            for i in 1..n {
                let w = a[i] / b[i - 1];
                b[i] -= w * c[i - 1];
                d[i] -= w * d[i - 1];
            }
            m[n - 1] = d[n - 1] / b[n - 1];
            for i in (0..n - 1).rev() {
                m[i] = (d[i] - c[i] * m[i + 1]) / b[i];
            }
        }
        CubicSpline { xs, ys, m }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        }
    }

    /// Value and first two derivatives at `x` (linear extrapolation of the
    /// end cubic outside the data range).
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval3(x).0
    }
}

/// First node of the `width`-point stencil used around `x`: centered on
/// the nearest node, so the stencil only switches at midpoints between
/// nodes and the interpolant is smooth through every node.
pub fn stencil_start(grid: &[f64], x: f64, width: usize) -> usize {
    let n = grid.len();
    let width = width.min(n);
    let p = grid.partition_point(|&g| g < x);
    let nearest = if p == 0 {
        0
    } else if p >= n {
        n - 1
    } else if x - grid[p - 1] <= grid[p] - x {
        p - 1
    } else {
        p
    };
    nearest.saturating_sub(width / 2).min(n - width)
}

/// Local Lagrange weights at `x` for derivatives `0..=m`, together with the
/// stencil start.
pub fn lagrange_weights(grid: &[f64], x: f64, width: usize, m: usize) -> (usize, Vec<Vec<f64>>) {
    let width = width.min(grid.len());
    let start = stencil_start(grid, x, width);
    (start, fornberg_weights(x, &grid[start..start + width], m))
}

/// Local Lagrange interpolation on a nonuniform grid; returns the value and
/// derivatives up to `m`.
pub fn lagrange_local(grid: &[f64], values: &[f64], x: f64, width: usize, m: usize) -> Vec<f64> {
    let (start, w) = lagrange_weights(grid, x, width, m);
    w.iter()
        .map(|row| row.iter().zip(&values[start..]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Ordinary least squares `min ‖A c − b‖` via SVD.
pub fn least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = design.clone().svd(true, true);
    svd.solve(rhs, 1e-13).ok()
}

/// Weighted straight-line fit y ≈ a + b x. Returns (a, b, rms residual).
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - a - b * x).powi(2))
        .sum();
    (a, b, (ss / sw).sqrt())
}

/// Bisection on a bracketing interval; `f(lo)` and `f(hi)` must differ in
/// sign (zero endpoints are returned immediately).
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * (1.0 + mid.abs()) {
            return Some(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Log-uniform grid with `n` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Empirical quantile with linear interpolation between order statistics
/// (type 7). `sorted` must be ascending; `+∞` entries are allowed.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
    }

    #[test]
    fn spectral_derivatives_of_trig_polynomial() {
        let n = 64;
        let sp = Spectral::new(n);
        let phi = grid(n);
        let f: Vec<f64> = phi.iter().map(|p| (3.0 * p).sin() + 0.5 * p.cos()).collect();
        let d = sp.derivative(&f);
        let dd = sp.second_derivative(&f);
        for (i, p) in phi.iter().enumerate() {
            assert_abs_diff_eq!(d[i], 3.0 * (3.0 * p).cos() - 0.5 * p.sin(), epsilon = 1e-12);
            assert_abs_diff_eq!(dd[i], -9.0 * (3.0 * p).sin() - 0.5 * p.cos(), epsilon = 1e-11);
        }
    }

    #[test]
    fn antiderivative_is_zero_mean_inverse_of_derivative() {
        let n = 128;
        let sp = Spectral::new(n);
        let phi = grid(n);
        let f: Vec<f64> = phi.iter().map(|p| 2.0 + (2.0 * p).cos()).collect();
        let a = sp.antiderivative(&f);
        for (i, p) in phi.iter().enumerate() {
            assert_abs_diff_eq!(a[i], (2.0 * p).sin() / 2.0, epsilon = 1e-13);
        }
        assert!(periodic_mean(&a).abs() < 1e-15);
    }

    #[test]
    fn interpolant_reproduces_offgrid_values() {
        let n = 32;
        let sp = Spectral::new(n);
        let phi = grid(n);
        let f: Vec<f64> = phi.iter().map(|p| (p.cos()).exp()).collect();
        let it = sp.interpolant(&f);
        for &x in &[0.1, 1.234, 5.9] {
            let (v, d1, d2) = it.eval3(x);
            assert_abs_diff_eq!(v, x.cos().exp(), epsilon = 1e-12);
            assert_abs_diff_eq!(d1, -x.sin() * x.cos().exp(), epsilon = 1e-11);
            assert_abs_diff_eq!(
                d2,
                (x.sin().powi(2) - x.cos()) * x.cos().exp(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn fornberg_central_weights() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn grid_diff_on_log_grid() {
        let g = log_grid(1e-3, 1.0, 60);
        let v: Vec<f64> = g.iter().map(|e| e * e * e).collect();
        let gd = GridDiff::new(&g, 7);
        let d1 = gd.d1(&v);
        let d2 = gd.d2(&v);
        let d3 = gd.deriv(&v, 3);
        for (i, e) in g.iter().enumerate() {
            assert!((d1[i] - 3.0 * e * e).abs() < 1e-12 * (1.0 + e));
            assert!((d2[i] - 6.0 * e).abs() < 1e-10);
            assert!((d3[i] - 6.0).abs() < 1e-6);
        }
        // the same operator down the columns of a table
        let table: Vec<f64> = g.iter().flat_map(|e| [e * e, 2.0 * e]).collect();
        let dt = gd.deriv_rows(&table, 2, 1);
        for (i, e) in g.iter().enumerate() {
            assert!((dt[2 * i] - 2.0 * e).abs() < 1e-11);
            assert!((dt[2 * i + 1] - 2.0).abs() < 1e-11);
        }
    }

    #[test]
    fn lagrange_is_exact_for_polynomials_and_continuous_at_nodes() {
        let g = log_grid(0.01, 1.0, 30);
        let v: Vec<f64> = g.iter().map(|e| 1.0 + e - 2.0 * e.powi(4)).collect();
        let r = lagrange_local(&g, &v, 0.3, 7, 1);
        assert!((r[0] - (1.3 - 2.0 * 0.3f64.powi(4))).abs() < 1e-13);
        assert!((r[1] - (1.0 - 8.0 * 0.3f64.powi(3))).abs() < 1e-11);
        let node = g[12];
        assert_eq!(stencil_start(&g, node * (1.0 - 1e-9), 7), stencil_start(&g, node * (1.0 + 1e-9), 7));
    }

    #[test]
    fn spline_reproduces_cubics_away_from_natural_ends() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let s = CubicSpline::new(xs, ys);
        let (v, d, _) = s.eval3(2.05);
        assert_abs_diff_eq!(v, 2.05f64.sin(), epsilon = 1e-5);
        assert_abs_diff_eq!(d, 2.05f64.cos(), epsilon = 1e-3);
    }

    #[test]
    fn line_fit_and_bisect() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (a, b, rms) = weighted_line_fit(&xs, &ys, &[1.0; 4]);
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-14);
        assert!(rms < 1e-14);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert_abs_diff_eq!(r, 2f64.sqrt(), epsilon = 1e-14);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_none());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
    }
}
