//! Small numerical kernels shared across modules: tridiagonal solves,
//! quadrature, and least-squares line fits.

/// Tridiagonal system solver (Thomas algorithm) with the factorization
/// prepared once so repeated solves against the same matrix are cheap.
///
/// Rows are `lower[i-1] * x[i-1] + diag[i] * x[i] + upper[i] * x[i+1] = b[i]`.
#[derive(Debug, Clone)]
pub struct Tridiag {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Diagonal after forward elimination; reciprocal stored for speed.
    inv_pivot: Vec<f64>,
}

impl Tridiag {
    /// Factorizes the matrix. Panics if a pivot vanishes (the matrices used
    /// here are diagonally dominant, so this indicates a setup bug).
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        Self::try_new(lower, diag, upper).expect("zero pivot in tridiagonal factorization")
    }

    /// Fallible factorization for shifts that may sit on an eigenvalue.
    pub fn try_new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Option<Self> {
        let n = diag.len();
        assert!(n >= 1 && lower.len() == n - 1 && upper.len() == n - 1);
        let mut inv_pivot = vec![0.0; n];
        let mut piv = diag[0];
        if piv == 0.0 {
            return None;
        }
        inv_pivot[0] = 1.0 / piv;
        for i in 1..n {
            piv = diag[i] - lower[i - 1] * upper[i - 1] * inv_pivot[i - 1];
            if piv == 0.0 {
                return None;
            }
            inv_pivot[i] = 1.0 / piv;
        }
        Some(Self { lower, upper, inv_pivot })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Solves in place: `b` holds the right-hand side on entry and the
    /// solution on exit.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.inv_pivot.len();
        assert_eq!(b.len(), n);
        for i in 1..n {
            b[i] -= self.lower[i - 1] * self.inv_pivot[i - 1] * b[i - 1];
        }
        b[n - 1] *= self.inv_pivot[n - 1];
        for i in (0..n - 1).rev() {
            b[i] = (b[i] - self.upper[i] * b[i + 1]) * self.inv_pivot[i];
        }
    }
}

/// Trapezoid rule over uniformly spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..n - 1].iter().sum();
    h * (0.5 * (values[0] + values[n - 1]) + interior)
}

/// Integrates grid samples over `[a, b]` with linear interpolation at the
/// endpoints. The grid is `x_i = x0 + i h`; `[a, b]` must lie inside it.
pub fn integrate_interval(values: &[f64], x0: f64, h: f64, a: f64, b: f64) -> f64 {
    assert!(b >= a);
    let n = values.len();
    let xmax = x0 + h * (n - 1) as f64;
    assert!(a >= x0 - 1e-12 && b <= xmax + 1e-12, "interval outside grid");
    let at = |x: f64| -> f64 {
        let s = ((x - x0) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    };
    let ia = ((a - x0) / h).ceil() as usize;
    let ib = ((b - x0) / h).floor() as usize;
    if ia > ib {
        // both endpoints in one cell
        return 0.5 * (at(a) + at(b)) * (b - a);
    }
    let xa = x0 + ia as f64 * h;
    let xb = x0 + ib as f64 * h;
    let mut total = 0.5 * (at(a) + values[ia]) * (xa - a);
    total += 0.5 * (values[ib] + at(b)) * (b - xb);
    if ib > ia {
        total += trapezoid(&values[ia..=ib], h);
    }
    total
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// Composite Simpson rule with `2 m` panels (used where the integrand is
/// known to be smooth and a fixed budget is preferable to recursion).
pub fn simpson_fixed<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, m: usize) -> f64 {
    let n = 2 * m.max(1);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Least-squares line fit `y = intercept + slope * x`.
/// Returns `(intercept, slope)`. Requires at least two points.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert!(xs.len() == ys.len() && xs.len() >= 2);
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    assert!(denom.abs() > 0.0, "degenerate line fit");
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (intercept, slope)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `int_0^T exp(-a r) (2 pi r)^{-1/2} exp(-delta^2 / (2 r)) dr`, the
/// time-truncated 1-d free resolvent kernel. Substituting `r = u^2` removes
/// the endpoint singularity, leaving a smooth integrand on `[0, sqrt(T)]`.
pub fn free_resolvent_segment(a: f64, delta: f64, t_end: f64) -> f64 {
    if t_end <= 0.0 {
        return 0.0;
    }
    let d2 = 0.5 * delta * delta;
    let g = |u: f64| -> f64 {
        if u <= 0.0 {
            if delta == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            let u2 = u * u;
            (-a * u2 - d2 / u2).exp()
        }
    };
    (2.0 / std::f64::consts::PI).sqrt() * adaptive_simpson(&g, 0.0, t_end.sqrt(), 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiag_matches_dense_solve() {
        // 4x4 diagonally dominant system, checked against hand elimination.
        let lower = vec![1.0, -1.0, 2.0];
        let diag = vec![4.0, 5.0, 6.0, 5.0];
        let upper = vec![1.0, 2.0, 1.0];
        let x_true = [1.0, -2.0, 3.0, 0.5];
        // b = A x
        let b = vec![
            4.0 * 1.0 + 1.0 * -2.0,
            1.0 * 1.0 + 5.0 * -2.0 + 2.0 * 3.0,
            -1.0 * -2.0 + 6.0 * 3.0 + 1.0 * 0.5,
            2.0 * 3.0 + 5.0 * 0.5,
        ];
        let solver = Tridiag::new(lower, diag, upper);
        let mut x = b;
        solver.solve_in_place(&mut x);
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).abs() < 1e-12, "{xi} vs {ti}");
        }
    }

    #[test]
    fn trapezoid_quadratic_exactness_scale() {
        let h = 0.01;
        let values: Vec<f64> = (0..=100).map(|i| (i as f64 * h).powi(2)).collect();
        let got = trapezoid(&values, h);
        assert!((got - 1.0 / 3.0).abs() < 2e-5);
    }

    #[test]
    fn interval_integration_handles_partial_cells() {
        let h = 0.1;
        let values: Vec<f64> = (0..=100).map(|i| (i as f64 * h) - 5.0).collect();
        // integral of x over [a, b] = (b^2 - a^2)/2; integrand linear so
        // interpolation is exact.
        let got = integrate_interval(&values, -5.0, h, -0.33, 2.47);
        let want = (2.47f64.powi(2) - 0.33f64.powi(2)) / 2.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn interval_integration_within_single_cell() {
        let h = 1.0;
        let values = vec![0.0, 1.0, 2.0];
        let got = integrate_interval(&values, 0.0, h, 0.25, 0.75);
        assert!((got - 0.25).abs() < 1e-14);
    }

    #[test]
    fn adaptive_simpson_reaches_tolerance() {
        let f = |x: f64| (x * x).exp();
        let got = adaptive_simpson(&f, 0.0, 1.0, 1e-12);
        // reference: series sum_k 1/(k!(2k+1))
        let mut want = 0.0;
        let mut fact = 1.0;
        for kk in 0..30u32 {
            if kk > 0 {
                fact *= kk as f64;
            }
            want += 1.0 / (fact * (2 * kk + 1) as f64);
        }
        assert!((got - want).abs() < 1e-11, "{got} vs {want}");
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 - 1.25 * x).collect();
        let (b, m) = fit_line(&xs, &ys);
        assert!((b - 2.5).abs() < 1e-12);
        assert!((m + 1.25).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.96) - 0.975).abs() < 2e-4);
        assert!((normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-12);
    }

    #[test]
    fn free_resolvent_segment_infinite_limit() {
        // int_0^inf e^{-ar} (2 pi r)^{-1/2} e^{-d^2/2r} dr = e^{-sqrt(2a) d} / sqrt(2a)
        let a = 1.2;
        for delta in [0.0, 0.3, 1.1] {
            let got = free_resolvent_segment(a, delta, 60.0);
            let want = (-(2.0 * a).sqrt() * delta).exp() / (2.0 * a).sqrt();
            assert!((got - want).abs() < 1e-9, "delta={delta}: {got} vs {want}");
        }
    }

    #[test]
    fn free_resolvent_segment_is_monotone_in_horizon() {
        let a = 0.8;
        let mut prev = 0.0;
        for t in [0.01, 0.1, 1.0, 10.0] {
            let v = free_resolvent_segment(a, 0.5, t);
            assert!(v >= prev);
            prev = v;
        }
    }
}
