//! Adaptive Dormand–Prince 5(4) integrator for complex vector ODEs with
//! continuous (dense) output.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest allowed step (ns).
    pub h_max: f64,
    /// First trial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Accepted-step budget before reporting stiffness.
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-8,
            atol: 1e-10,
            h_max: f64::INFINITY,
            h_init: None,
            max_steps: 5_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol * 1e-2,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl OdeStats {
    pub fn merge(&mut self, other: OdeStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.evaluations += other.evaluations;
    }
}

/// One accepted step with its fifth-order continuous extension.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [Vec<C64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn dim(&self) -> usize {
        self.rcont[0].len()
    }

    pub fn start(&self) -> &[C64] {
        &self.rcont[0]
    }

    pub fn end(&self) -> Vec<C64> {
        self.rcont[0]
            .iter()
            .zip(&self.rcont[1])
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Interpolated state at `t` ∈ [t0, t0 + h].
    pub fn eval_into(&self, t: f64, out: &mut [C64]) {
        let s = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + (r2[i] + (r3[i] + (r4[i] + r5[i] * s1) * s) * s1) * s;
        }
    }

    pub fn eval(&self, t: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        self.eval_into(t, &mut out);
        out
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates y' = f(t, y) from `t0` to `t1`, calling `on_step` after every
/// accepted step. Returns y(t1).
pub fn integrate<F, S>(
    mut rhs: F,
    t0: f64,
    y0: &[C64],
    t1: f64,
    opts: &OdeOptions,
    mut on_step: S,
) -> Result<(Vec<C64>, OdeStats)>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    S: FnMut(&DenseStep),
{
    if !(t1 >= t0) {
        return Err(Error::Interval { start: t0, end: t1 });
    }
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    if t1 == t0 || n == 0 {
        return Ok((y, stats));
    }
    let zero = C64::new(0.0, 0.0);
    let mut k1 = vec![zero; n];
    let mut k2 = vec![zero; n];
    let mut k3 = vec![zero; n];
    let mut k4 = vec![zero; n];
    let mut k5 = vec![zero; n];
    let mut k6 = vec![zero; n];
    let mut k7 = vec![zero; n];
    let mut ytmp = vec![zero; n];
    let mut ynew = vec![zero; n];

    rhs(t0, &y, &mut k1);
    stats.evaluations += 1;

    let span = t1 - t0;
    let h_max = opts.h_max.min(span);
    let mut h = match opts.h_init {
        Some(h) => h.min(h_max),
        None => initial_step(&mut rhs, t0, &y, &k1, opts, h_max, &mut ytmp, &mut k2),
    };
    stats.evaluations += usize::from(opts.h_init.is_none());
    let mut t = t0;
    let mut last_rejected = false;

    loop {
        let remaining = t1 - t;
        if remaining <= 1e-14 * span.max(t1.abs()) {
            break;
        }
        if stats.accepted >= opts.max_steps {
            return Err(Error::Stiffness { t, h, steps: stats.accepted });
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < 1e-14 * t1.abs().max(1.0) {
            return Err(Error::Stiffness { t, h, steps: stats.accepted });
        }

        for i in 0..n {
            ytmp[i] = y[i] + k1[i] * (h * A21);
        }
        rhs(t + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
        }
        rhs(t + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
        }
        rhs(t + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
        }
        rhs(t + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i]
                + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
        }
        let t_new = if last { t1 } else { t + h };
        rhs(t_new, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i]
                + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h;
        }
        rhs(t_new, &ynew, &mut k7);
        stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
            err += e.norm_sqr() / (sc * sc);
        }
        let err = (err / n as f64).sqrt();

        if err <= 1.0 {
            let mut r5 = vec![zero; n];
            let mut r3 = vec![zero; n];
            let mut r4 = vec![zero; n];
            let mut r2 = vec![zero; n];
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = k1[i] * h - ydiff;
                r2[i] = ydiff;
                r3[i] = bspl;
                r4[i] = ydiff - k7[i] * h - bspl;
                r5[i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7)
                    * h;
            }
            let step = DenseStep {
                t0: t,
                h: t_new - t,
                rcont: [y.clone(), r2, r3, r4, r5],
            };
            on_step(&step);
            stats.accepted += 1;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if last {
                break;
            }
            let mut fac = if err == 0.0 { 10.0 } else { 0.9 * err.powf(-0.2) };
            fac = fac.clamp(0.2, if last_rejected { 1.0 } else { 10.0 });
            h = (h * fac).min(h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= fac.min(1.0);
        }
    }
    Ok((y, stats))
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[C64],
    f0: &[C64],
    opts: &OdeOptions,
    h_max: f64,
    ytmp: &mut [C64],
    f1: &mut [C64],
) -> f64
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let n = y0.len() as f64;
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..y0.len() {
        let sk = opts.atol + opts.rtol * y0[i].norm();
        dnf += f0[i].norm_sqr() / (sk * sk);
        dny += y0[i].norm_sqr() / (sk * sk);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(h_max);
    for i in 0..y0.len() {
        ytmp[i] = y0[i] + f0[i] * h;
    }
    rhs(t0 + h, ytmp, f1);
    let mut der2 = 0.0;
    for i in 0..y0.len() {
        let sk = opts.atol + opts.rtol * y0[i].norm();
        der2 += (f1[i] - f0[i]).norm_sqr() / (sk * sk);
    }
    let der2 = (der2 / n).sqrt() / h;
    let der12 = der2.max((dnf / n).sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(h_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy() {
        let opts = OdeOptions { rtol: 1e-11, atol: 1e-13, ..Default::default() };
        let (y, stats) = integrate(
            |_, y, dy| dy[0] = -y[0] * 0.5,
            0.0,
            &[C64::new(1.0, 0.0)],
            10.0,
            &opts,
            |_| {},
        )
        .unwrap();
        assert!((y[0].re - (-5.0f64).exp()).abs() < 1e-10);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn oscillator_phase_and_dense_output() {
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, h_max: 0.3, ..Default::default() };
        let w = 3.0;
        let mut max_dense_err: f64 = 0.0;
        let (y, _) = integrate(
            |_, y, dy| dy[0] = C64::new(0.0, -w) * y[0],
            0.0,
            &[C64::new(1.0, 0.0)],
            5.0,
            &opts,
            |step| {
                for k in 0..=10 {
                    let t = step.t0 + step.h * k as f64 / 10.0;
                    let exact = C64::new(0.0, -w * t).exp();
                    max_dense_err = max_dense_err.max((step.eval(t)[0] - exact).norm());
                }
            },
        )
        .unwrap();
        assert!((y[0] - C64::new(0.0, -w * 5.0).exp()).norm() < 1e-8);
        assert!(max_dense_err < 1e-8, "{max_dense_err}");
    }

    #[test]
    fn zero_rhs_is_identity() {
        let y0 = vec![C64::new(0.3, 0.4), C64::new(-0.1, 0.7)];
        let (y, _) = integrate(
            |_, _, dy| dy.iter_mut().for_each(|d| *d = C64::new(0.0, 0.0)),
            0.0,
            &y0,
            2.0,
            &OdeOptions::default(),
            |_| {},
        )
        .unwrap();
        assert_eq!(y, y0);
    }

    #[test]
    fn reversed_interval_is_rejected() {
        let r = integrate(|_, _, _| {}, 1.0, &[C64::new(1.0, 0.0)], 0.0, &OdeOptions::default(), |_| {});
        assert!(matches!(r, Err(Error::Interval { .. })));
    }

    #[test]
    fn step_budget_reports_stiffness() {
        let opts = OdeOptions { max_steps: 3, h_max: 0.01, ..Default::default() };
        let r = integrate(|_, y, dy| dy[0] = -y[0], 0.0, &[C64::new(1.0, 0.0)], 1.0, &opts, |_| {});
        assert!(matches!(r, Err(Error::Stiffness { .. })));
    }

    #[test]
    fn steps_tile_the_interval() {
        let mut edges = Vec::new();
        integrate(
            |t, _, dy| dy[0] = C64::new(t.cos(), 0.0),
            0.5,
            &[C64::new(0.0, 0.0)],
            3.0,
            &OdeOptions::default(),
            |s| edges.push((s.t0, s.t1())),
        )
        .unwrap();
        assert_eq!(edges.first().unwrap().0, 0.5);
        assert_eq!(edges.last().unwrap().1, 3.0);
        for w in edges.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }
}
