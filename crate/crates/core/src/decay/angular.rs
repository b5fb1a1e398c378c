//! Angular photon population densities p(θ, t) and p₂(θ, t).

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64 as C64;

use super::{DecayTrajectory, Sector, ZERO};
use crate::ensemble::pair_index;
use crate::error::{Error, Result};
use crate::numerics::{bessel_j0, gauss_legendre, linspace, simpson};
use crate::par::Execution;

/// How the pair sum Σ C_{m,l} e^{−ik d∥ cosθ} J₀(k d⊥ sinθ) is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KernelMethod {
    /// Cheaper of the two below for the given geometry.
    #[default]
    Auto,
    /// Explicit sum over atom pairs with the Bessel kernel.
    Pairwise,
    /// Azimuthal average of the squared structure factor |Σ α_n e^{−ik·R_n}|²
    /// on an equispaced φ grid. Single excitations only.
    Azimuthal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngularOptions {
    /// Points of the uniform θ grid on [0, theta_max].
    pub n_theta: usize,
    /// Upper end of the θ grid; π covers the full sphere.
    pub theta_max: f64,
    /// Largest time-quadrature panel (ns).
    pub panel: f64,
    /// Gauss–Legendre nodes per panel.
    pub order: usize,
    /// Times at which the cumulative density is recorded; the window end
    /// when empty.
    pub checkpoints: Vec<f64>,
    pub method: KernelMethod,
    /// Upper limit on N³ × time nodes for the first-photon density.
    pub budget: Option<f64>,
    pub exec: Execution,
}

impl Default for AngularOptions {
    fn default() -> Self {
        AngularOptions {
            n_theta: 181,
            theta_max: PI,
            panel: 0.1,
            order: 4,
            checkpoints: Vec::new(),
            method: KernelMethod::Auto,
            budget: None,
            exec: Execution::default(),
        }
    }
}

/// Uniform grid of `n` polar angles on [0, π].
pub fn theta_grid(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("θ grid needs at least 2 points, got {n}")));
    }
    Ok(linspace(0.0, PI, n))
}

/// Angular kernel e^{−ik d∥ cosθ} J₀(k d⊥ sinθ).
pub fn kernel_value(k: f64, d_par: f64, d_perp: f64, theta: f64) -> C64 {
    C64::from_polar(bessel_j0(k * d_perp * theta.sin()), -k * d_par * theta.cos())
}

/// Cumulative photon population density on a θ grid at several times.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularProfile {
    pub thetas: Vec<f64>,
    pub times: Vec<f64>,
    /// density[i][j] = p(θ_j, times[i]).
    pub density: Vec<Vec<f64>>,
}

impl AngularProfile {
    pub const CSV_HEADER: &'static str = "theta_rad,time_ns,density_per_rad,ensemble_id";

    fn step(&self) -> f64 {
        self.thetas[1] - self.thetas[0]
    }

    /// Integral of p(θ, times[i]) over the grid by Simpson's rule; the
    /// emitted population when the grid spans [0, π].
    pub fn total(&self, i: usize) -> f64 {
        simpson(&self.density[i], self.step())
    }

    /// ∫₀^{θmax} p(θ, times[i]) dθ: Simpson over whole grid intervals and a
    /// trapezoid on the interpolated remainder.
    pub fn cone(&self, i: usize, theta_max: f64) -> Result<f64> {
        let end = self.thetas[self.thetas.len() - 1];
        if !(0.0..=end + 1e-12).contains(&theta_max) {
            return Err(Error::Range(format!("cone angle {theta_max} rad outside the grid [0, {end}]")));
        }
        let h = self.step();
        let y = &self.density[i];
        let k = ((theta_max / h + 1e-9).floor() as usize).min(y.len() - 1);
        let mut s = simpson(&y[..=k], h);
        let rest = theta_max - self.thetas[k];
        if rest > 1e-12 && k + 1 < y.len() {
            let end = y[k] + (y[k + 1] - y[k]) * rest / h;
            s += 0.5 * rest * (y[k] + end);
        }
        Ok(s)
    }

    /// Cone population at the last recorded time.
    pub fn cone_population(&self, theta_max: f64) -> Result<f64> {
        self.cone(self.times.len() - 1, theta_max)
    }

    /// p(θ)/sinθ at times[i]; the poles take the limit from a quadratic
    /// through the neighbouring points.
    pub fn reduced(&self, i: usize) -> Vec<f64> {
        let y = &self.density[i];
        let n = y.len();
        let mut out: Vec<f64> = (0..n)
            .map(|j| {
                let s = self.thetas[j].sin();
                if s > 1e-12 { y[j] / s } else { 0.0 }
            })
            .collect();
        if n >= 4 {
            out[0] = 3.0 * out[1] - 3.0 * out[2] + out[3];
            out[n - 1] = 3.0 * out[n - 2] - 3.0 * out[n - 3] + out[n - 4];
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W, ensemble_id: usize, header: bool) -> Result<()> {
        if header {
            writeln!(w, "{}", Self::CSV_HEADER)?;
        }
        for (t, row) in self.times.iter().zip(&self.density) {
            for (th, p) in self.thetas.iter().zip(row) {
                writeln!(w, "{th:e},{t:e},{p:e},{ensemble_id}")?;
            }
        }
        Ok(())
    }

    /// Reads a table written by [`AngularProfile::write_csv`], one profile per
    /// ensemble id in order of first appearance.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<(usize, AngularProfile)>> {
        let mut out: Vec<(usize, AngularProfile)> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 columns", i + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)));
            let (theta, t, p) = (num(f[0])?, num(f[1])?, num(f[2])?);
            let id: usize = f[3].parse().map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            if out.last().is_none_or(|(last, _)| *last != id) {
                if out.iter().any(|(e, _)| *e == id) {
                    return Err(Error::Parse(format!("line {}: ensemble {id} is not contiguous", i + 1)));
                }
                out.push((id, AngularProfile { thetas: Vec::new(), times: Vec::new(), density: Vec::new() }));
            }
            let prof = &mut out.last_mut().expect("pushed above").1;
            if prof.times.last() != Some(&t) {
                prof.times.push(t);
                prof.density.push(Vec::new());
            }
            let row = prof.density.last_mut().expect("pushed above");
            if prof.times.len() == 1 {
                prof.thetas.push(theta);
            } else if prof.thetas.get(row.len()) != Some(&theta) {
                return Err(Error::Parse(format!("line {}: θ grid differs between times", i + 1)));
            }
            row.push(p);
        }
        for (id, prof) in &out {
            if prof.thetas.len() < 3 || prof.density.iter().any(|r| r.len() != prof.thetas.len()) {
                return Err(Error::Parse(format!("ensemble {id}: incomplete θ grid")));
            }
        }
        Ok(out)
    }
}

/// Positions at `t` projected on the forward axis and the transverse plane.
fn geometry(traj: &DecayTrajectory, t: f64) -> Vec<[f64; 3]> {
    (0..traj.n_atoms())
        .map(|n| {
            let r = traj.atoms.position_at(n, t);
            [traj.forward * r[0], r[1], r[2]]
        })
        .collect()
}

/// Σ_{m,l} C_{m,l} K(d_{m,l}, θ) for every θ, C Hermitian and given by its
/// diagonal sum and upper-triangle entries (m, l, C_{m,l}).
fn pairwise_sum(
    diag: f64,
    upper: &[(usize, usize, C64)],
    pos: &[[f64; 3]],
    k: f64,
    thetas: &[f64],
    exec: Execution,
) -> Vec<f64> {
    let geo: Vec<(f64, f64, C64)> = upper
        .iter()
        .map(|&(m, l, c)| {
            let d = [pos[m][0] - pos[l][0], pos[m][1] - pos[l][1], pos[m][2] - pos[l][2]];
            (k * d[0], k * d[1].hypot(d[2]), c)
        })
        .collect();
    exec.map_slice(thetas, |&th| {
        let (s, c) = th.sin_cos();
        let off: f64 = geo
            .iter()
            .map(|&(a, b, w)| {
                let (ps, pc) = (a * c).sin_cos();
                (w.re * pc + w.im * ps) * bessel_j0(b * s)
            })
            .sum();
        diag + 2.0 * off
    })
}

/// Number of azimuthal points that resolves J₀(z) for z ≤ z_max.
fn azimuthal_points(z_max: f64) -> usize {
    let m = (z_max + 12.0 * z_max.cbrt() + 12.0).ceil() as usize;
    (m + m % 2).max(8)
}

fn max_transverse(pos: &[[f64; 3]], active: &[bool]) -> f64 {
    pos.iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(r, _)| r[1].hypot(r[2]))
        .fold(0.0, f64::max)
}

fn azimuthal_sum(alpha: &[C64], pos: &[[f64; 3]], active: &[bool], k: f64, thetas: &[f64], exec: Execution) -> Vec<f64> {
    let m = azimuthal_points(2.0 * k * max_transverse(pos, active));
    let phis: Vec<(f64, f64)> = (0..m).map(|p| (2.0 * PI * p as f64 / m as f64).sin_cos()).collect();
    let atoms: Vec<(C64, [f64; 3])> = alpha
        .iter()
        .zip(pos)
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|((&al, &r), _)| (al, r))
        .collect();
    exec.map_slice(thetas, |&th| {
        let (s, c) = th.sin_cos();
        let mut acc = 0.0;
        for &(sp, cp) in &phis {
            let f = atoms.iter().fold(ZERO, |f, &(al, r)| {
                f + al * C64::from_polar(1.0, -k * (r[0] * c + s * (r[1] * cp + r[2] * sp)))
            });
            acc += f.norm_sqr();
        }
        acc / m as f64
    })
}

fn check(opts: &AngularOptions, traj: &DecayTrajectory) -> Result<Vec<f64>> {
    if !(opts.panel > 0.0) || opts.order == 0 {
        return Err(Error::Config(String::from("angular quadrature needs a positive panel and order")));
    }
    if !(opts.theta_max > 0.0 && opts.theta_max <= PI) {
        return Err(Error::Config(format!("θ grid end {} rad outside (0, π]", opts.theta_max)));
    }
    let mut cps = opts.checkpoints.clone();
    for &t in &cps {
        if !(t >= traj.window.0 - 1e-12 && t <= traj.window.1 + 1e-12) {
            return Err(Error::Range(format!("checkpoint {t} ns outside the decay window")));
        }
    }
    if cps.is_empty() {
        cps.push(traj.window.1);
    }
    cps.sort_by(f64::total_cmp);
    cps.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    Ok(cps)
}

/// Integrates (Γ/2) sinθ · node_sum(t, θ) over time panels and records the
/// cumulative result at each checkpoint.
fn accumulate<F>(traj: &DecayTrajectory, opts: &AngularOptions, checkpoints: &[f64], node_sum: F) -> Result<AngularProfile>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let thetas = theta_grid(opts.n_theta)?.iter().map(|t| t * opts.theta_max / PI).collect::<Vec<_>>();
    let edges = traj.panel_edges(opts.panel, checkpoints);
    let (x, w) = gauss_legendre(opts.order);
    let mut acc = vec![0.0; thetas.len()];
    let mut times = Vec::with_capacity(checkpoints.len());
    let mut density = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    let sin: Vec<f64> = thetas.iter().map(|t| 0.5 * traj.gamma * t.sin()).collect();
    while next < checkpoints.len() && checkpoints[next] <= edges[0] + 1e-12 {
        times.push(checkpoints[next]);
        density.push(acc.clone());
        next += 1;
    }
    for e in edges.windows(2) {
        let (mid, half) = (0.5 * (e[0] + e[1]), 0.5 * (e[1] - e[0]));
        for (xi, wi) in x.iter().zip(&w) {
            let s = node_sum(mid + half * xi, &thetas)?;
            for ((a, v), g) in acc.iter_mut().zip(&s).zip(&sin) {
                *a += half * wi * g * v;
            }
        }
        while next < checkpoints.len() && checkpoints[next] <= e[1] + 1e-12 {
            times.push(checkpoints[next]);
            density.push(acc.clone());
            next += 1;
        }
    }
    Ok(AngularProfile { thetas, times, density })
}

/// Single-photon density p(θ, t) of a single-excitation trajectory. Atoms
/// past their wall time drop out of the sum.
pub fn angular_density(traj: &DecayTrajectory, opts: &AngularOptions) -> Result<AngularProfile> {
    if traj.sector != Sector::Single {
        return Err(Error::Config(String::from("angular density needs a single-excitation trajectory")));
    }
    let cps = check(opts, traj)?;
    let k = traj.k_emission;
    accumulate(traj, opts, &cps, |t, thetas| {
        let alpha = traj.amplitudes_at(t)?;
        let active = traj.active_at(t);
        let pos = geometry(traj, t);
        let idx: Vec<usize> = (0..alpha.len()).filter(|&i| active[i]).collect();
        let n = idx.len() as f64;
        let method = match opts.method {
            KernelMethod::Auto => {
                let m = azimuthal_points(2.0 * k * max_transverse(&pos, &active)) as f64;
                if n * m < 1.25 * n * (n - 1.0) { KernelMethod::Azimuthal } else { KernelMethod::Pairwise }
            }
            other => other,
        };
        Ok(match method {
            KernelMethod::Azimuthal => azimuthal_sum(&alpha, &pos, &active, k, thetas, opts.exec),
            _ => {
                let diag: f64 = idx.iter().map(|&i| alpha[i].norm_sqr()).sum();
                let mut upper = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
                for (a, &m) in idx.iter().enumerate() {
                    for &l in &idx[a + 1..] {
                        upper.push((m, l, alpha[m] * alpha[l].conj()));
                    }
                }
                pairwise_sum(diag, &upper, &pos, k, thetas, opts.exec)
            }
        })
    })
}

/// Density p₂(θ, t) of the first photon emitted by a double-excitation
/// trajectory.
pub fn first_photon_density(traj: &DecayTrajectory, opts: &AngularOptions) -> Result<AngularProfile> {
    if traj.sector != Sector::Double {
        return Err(Error::Config(String::from("first-photon density needs a double-excitation trajectory")));
    }
    if opts.method == KernelMethod::Azimuthal {
        return Err(Error::Config(String::from("the azimuthal kernel applies to single excitations only")));
    }
    let cps = check(opts, traj)?;
    let n = traj.n_atoms();
    let panels = traj.panel_edges(opts.panel, &cps).len() - 1;
    let required = (n as f64).powi(3) * (panels * opts.order) as f64;
    if let Some(budget) = opts.budget {
        if required > budget {
            return Err(Error::ResourceBudget { required, budget });
        }
    }
    let k = traj.k_emission;
    accumulate(traj, opts, &cps, |t, thetas| {
        let pairs = traj.amplitudes_at(t)?;
        let active = traj.active_at(t);
        let pos = geometry(traj, t);
        let mut amat = vec![ZERO; n * n];
        for a in 0..n {
            for b in a + 1..n {
                if active[a] && active[b] {
                    let v = pairs[pair_index(n, a, b)];
                    amat[a * n + b] = v;
                    amat[b * n + a] = v;
                }
            }
        }
        // C_{m,l} = Σ_n α_{n,m} α*_{n,l}
        let rows: Vec<Vec<C64>> = opts.exec.map_range(n, |m| {
            if !active[m] {
                return Vec::new();
            }
            let rm = &amat[m * n..(m + 1) * n];
            (m..n)
                .map(|l| {
                    if !active[l] {
                        return ZERO;
                    }
                    let rl = &amat[l * n..(l + 1) * n];
                    rm.iter().zip(rl).fold(ZERO, |s, (a, b)| s + a * b.conj())
                })
                .collect()
        });
        let mut diag = 0.0;
        let mut upper = Vec::new();
        for (m, row) in rows.iter().enumerate() {
            for (off, &c) in row.iter().enumerate() {
                if off == 0 {
                    diag += c.re;
                } else if c != ZERO {
                    upper.push((m, m + off, c));
                }
            }
        }
        Ok(pairwise_sum(diag, &upper, &pos, k, thetas, opts.exec))
    })
}
