//! Small numerical kernels shared by the physics modules.

use std::f64::consts::PI;

/// sin(x)/x with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    libm::j0(x)
}

/// `n` points spanning `[a, b]` inclusively.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|i| if i + 1 == n { b } else { a + h * i as f64 })
                .collect()
        }
    }
}

/// Trapezoid rule on a uniform grid with spacing `h`.
pub fn trapezoid(y: &[f64], h: f64) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let inner: f64 = y[1..y.len() - 1].iter().sum();
    h * (inner + 0.5 * (y[0] + y[y.len() - 1]))
}

/// Composite Simpson rule on a uniform grid. Falls back to the trapezoid
/// rule on the last interval when the number of intervals is odd.
pub fn simpson(y: &[f64], h: f64) -> f64 {
    let n = y.len();
    if n < 3 {
        return trapezoid(y, h);
    }
    let intervals = n - 1;
    let even = intervals - intervals % 2;
    let mut s = y[0] + y[even];
    for (i, v) in y.iter().enumerate().take(even).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = s * h / 3.0;
    if even < intervals {
        total += 0.5 * h * (y[even] + y[even + 1]);
    }
    total
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre quadrature of `f` over `[a, b]`.
pub fn integrate_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(mid + 0.5 * h * xi);
        }
        total += 0.5 * h * s;
    }
    total
}

/// Time average over `[t0, t1]` of exp(−inv_w2·|r0 + v t|²) for a 2D linear
/// trajectory, in closed form.
pub fn gaussian_time_average(r0: [f64; 2], v: [f64; 2], inv_w2: f64, t0: f64, t1: f64) -> f64 {
    let dt = t1 - t0;
    let v2 = v[0] * v[0] + v[1] * v[1];
    let a = inv_w2 * v2;
    if dt <= 0.0 || a * dt * dt < 1e-14 {
        let tm = 0.5 * (t0 + t1);
        let x = r0[0] + v[0] * tm;
        let y = r0[1] + v[1] * tm;
        return (-inv_w2 * (x * x + y * y)).exp();
    }
    let rv = r0[0] * v[0] + r0[1] * v[1];
    let r2 = r0[0] * r0[0] + r0[1] * r0[1];
    let b = rv / v2;
    let closest = (r2 - rv * b).max(0.0);
    let sa = a.sqrt();
    let lo = sa * (t0 + b);
    let hi = sa * (t1 + b);
    (-inv_w2 * closest).exp() * erf_difference(lo, hi) * PI.sqrt() / (2.0 * sa * dt)
}

/// erf(hi) − erf(lo) for hi ≥ lo without catastrophic cancellation in the tails.
pub fn erf_difference(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        libm::erfc(lo) - libm::erfc(hi)
    } else if hi <= 0.0 {
        libm::erfc(-hi) - libm::erfc(-lo)
    } else {
        libm::erf(hi) - libm::erf(lo)
    }
}
