//! Small numerical kernels shared by the solvers: tanh-sinh quadrature,
//! Gauss–Legendre nodes, a complex tridiagonal solver and a least-squares line.

use num_complex::Complex64;

/// Tanh-sinh quadrature on `[a, b]`; tolerates integrable endpoint singularities.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let c = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let pi2 = std::f64::consts::FRAC_PI_2;
    let node = |t: f64| -> (f64, f64) {
        let s = pi2 * t.sinh();
        let x = s.tanh();
        let w = pi2 * t.cosh() / (s.cosh() * s.cosh());
        (x, w)
    };
    let eval = |t: f64| -> f64 {
        let (x, w) = node(t);
        if w < 1e-300 {
            return 0.0;
        }
        // Distance to the nearer end computed without cancellation.
        let d = half / ((pi2 * t.sinh()).abs().exp() * (pi2 * t.sinh()).cosh());
        let pt = if x > 0.0 { b - d } else { a + d };
        let pt = if x == 0.0 { c } else { pt };
        if pt <= a || pt >= b {
            return 0.0;
        }
        w * f(pt)
    };
    let t_max = 3.5;
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * h <= t_max {
        let t = k as f64 * h;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut est = sum * h * half;
    for _ in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= t_max {
            let t = k as f64 * h;
            sum += eval(t) + eval(-t);
            k += 2;
        }
        let next = sum * h * half;
        if (next - est).abs() <= tol * next.abs().max(1e-300) {
            return next;
        }
        est = next;
    }
    est
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                x
            } else {
                p1
            };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.reverse();
    out
}

/// Solve a tridiagonal system in place (Thomas algorithm).
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [Complex64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = upper[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / d;
        }
        let prev = rhs[i - 1];
        rhs[i] = (rhs[i] - prev * lower[i]) / d;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= next * c[i];
    }
}

/// Running integral `∫_{x_0}^{x_j} f` of uniformly spaced samples (fourth order
/// from four points up, trapezoidal below).
pub fn cumulative_integral(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 4 {
        for j in 1..n {
            out[j] = out[j - 1] + 0.5 * h * (f[j - 1] + f[j]);
        }
        return out;
    }
    let c = h / 24.0;
    for j in 0..n - 1 {
        let step = if j == 0 {
            c * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else if j == n - 2 {
            c * (9.0 * f[n - 1] + 19.0 * f[n - 2] - 5.0 * f[n - 3] + f[n - 4])
        } else {
            c * (-f[j - 1] + 13.0 * f[j] + 13.0 * f[j + 1] - f[j + 2])
        };
        out[j + 1] = out[j] + step;
    }
    out
}

/// Least-squares line `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Observed convergence order from errors at successively halved steps.
pub fn observed_order(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_sinh_handles_endpoint_singularities() {
        let v = tanh_sinh(|x| (1.0 - x * x).sqrt(), -1.0, 1.0, 1e-13);
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let v = tanh_sinh(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1, 3, 4, 8] {
            let q = gauss_legendre(n);
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 0 { 2.0 / (deg + 1) as f64 } else { 0.0 };
            let v: f64 = q.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((v - exact).abs() < 1e-14);
            let w: f64 = q.iter().map(|p| p.1).sum();
            assert!((w - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn tridiagonal_solve() {
        let lower = [0.0, 1.0, 1.0];
        let diag = [4.0, 4.0, 4.0];
        let upper = [1.0, 1.0, 0.0];
        let x = [1.0, -2.0, 3.0];
        let mut rhs: Vec<Complex64> = (0..3)
            .map(|i| {
                let mut s = diag[i] * x[i];
                if i > 0 {
                    s += lower[i] * x[i - 1];
                }
                if i < 2 {
                    s += upper[i] * x[i + 1];
                }
                Complex64::new(s, 0.0)
            })
            .collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        for i in 0..3 {
            assert!((rhs[i].re - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn cumulative_integral_is_fourth_order() {
        let err = |n: usize| {
            let h = 2.0 / (n - 1) as f64;
            let f: Vec<f64> = (0..n).map(|j| (h * j as f64).exp()).collect();
            let c = cumulative_integral(&f, h);
            (0..n).map(|j| (c[j] - ((h * j as f64).exp() - 1.0)).abs()).fold(0.0, f64::max)
        };
        let order = (err(41) / err(81)).log2();
        assert!(order > 3.8, "{order}");
    }

    #[test]
    fn line_fit() {
        let (s, c) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14);
    }
}
