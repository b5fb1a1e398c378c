//! Collective decay of single and double excitations of moving atoms, with
//! wall cutoffs, angular photon densities and emission rates.

mod angular;

use std::io::Write;

use num_complex::Complex64 as C64;

pub use angular::{
    angular_density, first_photon_density, kernel_value, theta_grid, AngularOptions, AngularProfile,
    KernelMethod,
};

use crate::config::PhysicalConfig;
use crate::ensemble::{pair_index, AtomSet};
use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, sinc};
use crate::ode::{integrate, DenseStep, OdeOptions, OdeStats};
use crate::par::Execution;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Excitation sector carried by a decay trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sector {
    /// One amplitude α_n per atom.
    Single,
    /// One amplitude α_{n,m} per unordered pair, stored for n < m.
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayOptions {
    pub tol: f64,
    /// Largest integrator step (ns).
    pub h_max: f64,
    pub exec: Execution,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions { tol: 1e-10, h_max: 0.5, exec: Execution::default() }
    }
}

/// Amplitudes at one instant together with the atoms still taking part.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayState {
    pub sector: Sector,
    pub time: f64,
    pub amplitudes: Vec<C64>,
    /// False once the atom has reached a wall.
    pub active: Vec<bool>,
}

/// Continuous solution of the decay equations over a time window.
#[derive(Clone, Debug)]
pub struct DecayTrajectory {
    pub sector: Sector,
    pub atoms: AtomSet,
    pub window: (f64, f64),
    /// Window ends and the wall events inside it.
    pub breakpoints: Vec<f64>,
    pub initial: Vec<C64>,
    pub stats: OdeStats,
    pub gamma: f64,
    pub k_emission: f64,
    /// Sign of the mixed wave number; fixes the forward direction θ = 0.
    pub forward: f64,
    steps: Vec<DenseStep>,
    exec: Execution,
}

impl DecayTrajectory {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Atoms that have not reached a wall by `t`.
    pub fn active_at(&self, t: f64) -> Vec<bool> {
        self.atoms.wall_times.iter().map(|&tw| tw > t).collect()
    }

    pub fn amplitudes_at(&self, t: f64) -> Result<Vec<C64>> {
        let (a, b) = self.window;
        if !(t >= a - 1e-12 && t <= b + 1e-12) {
            return Err(Error::Range(format!("time {t} ns outside the decay window [{a}, {b}]")));
        }
        if self.steps.is_empty() {
            return Ok(self.initial.clone());
        }
        let i = self.steps.partition_point(|s| s.t1() < t).min(self.steps.len() - 1);
        Ok(self.steps[i].eval(t.clamp(a, b)))
    }

    pub fn state_at(&self, t: f64) -> Result<DecayState> {
        Ok(DecayState {
            sector: self.sector,
            time: t,
            amplitudes: self.amplitudes_at(t)?,
            active: self.active_at(t),
        })
    }

    pub fn final_amplitudes(&self) -> Vec<C64> {
        self.steps.last().map_or_else(|| self.initial.clone(), DenseStep::end)
    }

    pub fn initial_population(&self) -> f64 {
        self.initial.iter().map(C64::norm_sqr).sum()
    }

    /// Total remaining excitation Σ|α|².
    pub fn population_at(&self, t: f64) -> Result<f64> {
        Ok(self.amplitudes_at(t)?.iter().map(C64::norm_sqr).sum())
    }

    /// Population frozen on atoms that reached a wall before `t`.
    pub fn lost_to_walls(&self, t: f64) -> Result<f64> {
        let amps = self.amplitudes_at(t)?;
        let active = self.active_at(t);
        let n = self.n_atoms();
        Ok(match self.sector {
            Sector::Single => amps.iter().zip(&active).filter(|(_, &on)| !on).map(|(a, _)| a.norm_sqr()).sum(),
            Sector::Double => {
                let mut lost = 0.0;
                for a in 0..n {
                    for b in a + 1..n {
                        if !(active[a] && active[b]) {
                            lost += amps[pair_index(n, a, b)].norm_sqr();
                        }
                    }
                }
                lost
            }
        })
    }

    /// Right-hand side dα/dt at `t`.
    pub fn derivative(&self, t: f64, amplitudes: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; amplitudes.len()];
        let active = self.active_at(t);
        rhs(self.sector, &self.atoms, self.k_emission, self.gamma, &active, t, amplitudes, &mut out, self.exec);
        out
    }

    /// −d/dt Σ|α|² in units of Γ, from the equations of motion.
    pub fn outflow(&self, t: f64) -> Result<f64> {
        let amps = self.amplitudes_at(t)?;
        let d = self.derivative(t, &amps);
        let s: f64 = amps.iter().zip(&d).map(|(a, da)| (a.conj() * da).re).sum();
        Ok(-2.0 * s / self.gamma)
    }

    /// Uniform sample times with spacing close to `dt`, including both ends.
    pub fn uniform_times(&self, dt: f64) -> Vec<f64> {
        let (a, b) = self.window;
        let n = ((b - a) / dt).ceil().max(1.0) as usize;
        crate::numerics::linspace(a, b, n + 1)
    }

    /// Window split at breakpoints and then into panels no longer than
    /// `panel`, as consecutive boundary times.
    pub(crate) fn panel_edges(&self, panel: f64, extra: &[f64]) -> Vec<f64> {
        let mut cuts = self.breakpoints.clone();
        cuts.extend(extra.iter().copied().filter(|&t| t > self.window.0 && t < self.window.1));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        let mut edges = vec![cuts[0]];
        for w in cuts.windows(2) {
            let pieces = ((w[1] - w[0]) / panel).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / pieces as f64;
            for i in 1..pieces {
                edges.push(w[0] + h * i as f64);
            }
            edges.push(w[1]);
        }
        edges
    }
}

/// Symmetric matrix sinc(k_e d_{n,m}(t)) over active atoms; rows and columns
/// of inactive atoms are zero, the active diagonal is one.
fn sinc_matrix(atoms: &AtomSet, k_e: f64, active: &[bool], t: f64, exec: Execution) -> Vec<f64> {
    let n = atoms.len();
    let pos: Vec<[f64; 3]> = (0..n).map(|i| atoms.position_at(i, t)).collect();
    let rows: Vec<Vec<f64>> = exec.map_range(n, |i| {
        if !active[i] {
            return Vec::new();
        }
        (i + 1..n)
            .map(|j| {
                if !active[j] {
                    return 0.0;
                }
                let d = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1], pos[j][2] - pos[i][2]];
                sinc(k_e * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
            })
            .collect()
    });
    let mut s = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        if !active[i] {
            continue;
        }
        s[i * n + i] = 1.0;
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn rhs(
    sector: Sector,
    atoms: &AtomSet,
    k_e: f64,
    gamma: f64,
    active: &[bool],
    t: f64,
    y: &[C64],
    dy: &mut [C64],
    exec: Execution,
) {
    let n = atoms.len();
    let s = sinc_matrix(atoms, k_e, active, t, exec);
    let half = -0.5 * gamma;
    match sector {
        Sector::Single => {
            exec.for_each_chunk(dy, 64, |offset, out| {
                for (k, o) in out.iter_mut().enumerate() {
                    let i = offset + k;
                    *o = if active[i] {
                        let row = &s[i * n..(i + 1) * n];
                        row.iter().zip(y).fold(ZERO, |acc, (&sv, &a)| acc + a * sv) * half
                    } else {
                        ZERO
                    };
                }
            });
        }
        Sector::Double => {
            // symmetric extension α_{a,b} = α_{b,a}, zero on the diagonal and
            // for inactive atoms
            let mut amat = vec![ZERO; n * n];
            for a in 0..n {
                for b in a + 1..n {
                    if active[a] && active[b] {
                        let v = y[pair_index(n, a, b)];
                        amat[a * n + b] = v;
                        amat[b * n + a] = v;
                    }
                }
            }
            exec.for_each_chunk(dy, 256, |offset, out| {
                let (mut a, mut b) = crate::ensemble::pair_from_index(n, offset);
                for o in out.iter_mut() {
                    *o = if active[a] && active[b] {
                        let (ra, rb) = (&amat[a * n..(a + 1) * n], &amat[b * n..(b + 1) * n]);
                        let (sa, sb) = (&s[a * n..(a + 1) * n], &s[b * n..(b + 1) * n]);
                        let mut acc = ZERO;
                        for l in 0..n {
                            acc += ra[l] * sb[l] + rb[l] * sa[l];
                        }
                        acc * half
                    } else {
                        ZERO
                    };
                    b += 1;
                    if b == n {
                        a += 1;
                        b = a + 1;
                    }
                }
            });
        }
    }
}

fn check_window(window: (f64, f64)) -> Result<()> {
    if !(window.0.is_finite() && window.1.is_finite() && window.1 >= window.0) {
        return Err(Error::Interval { start: window.0, end: window.1 });
    }
    Ok(())
}

fn run(
    sector: Sector,
    initial: &[C64],
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    window: (f64, f64),
    opts: &DecayOptions,
) -> Result<DecayTrajectory> {
    check_window(window)?;
    let mut breakpoints = vec![window.0, window.1];
    breakpoints.extend(atoms.wall_times.iter().copied().filter(|&t| t > window.0 && t < window.1));
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    let gamma = cfg.gamma();
    let k_e = cfg.k_emission();
    let ode = OdeOptions { rtol: opts.tol, atol: opts.tol * 1e-2, h_max: opts.h_max, ..Default::default() };
    let mut y = initial.to_vec();
    let mut steps = Vec::new();
    let mut stats = OdeStats::default();
    for seg in breakpoints.windows(2) {
        let active: Vec<bool> = atoms.wall_times.iter().map(|&tw| tw > 0.5 * (seg[0] + seg[1])).collect();
        let (yb, st) = integrate(
            |t, x, dx| rhs(sector, atoms, k_e, gamma, &active, t, x, dx, opts.exec),
            seg[0],
            &y,
            seg[1],
            &ode,
            |step| steps.push(step.clone()),
        )?;
        y = yb;
        stats.merge(st);
    }
    Ok(DecayTrajectory {
        sector,
        atoms: atoms.clone(),
        window,
        breakpoints,
        initial: initial.to_vec(),
        stats,
        gamma,
        k_emission: k_e,
        forward: if cfg.k0() < 0.0 { -1.0 } else { 1.0 },
        steps,
        exec: opts.exec,
    })
}

/// Integrates α̇_n = −(Γ/2) Σ_m α_m sinc(k_e d_{n,m}(t)) over `window`.
/// An atom that reaches a wall keeps its amplitude and leaves every sum.
pub fn decay_single(
    initial: &[C64],
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    window: (f64, f64),
    opts: &DecayOptions,
) -> Result<DecayTrajectory> {
    if initial.len() != atoms.len() {
        return Err(Error::Dimension { expected: atoms.len(), found: initial.len() });
    }
    run(Sector::Single, initial, atoms, cfg, window, opts)
}

/// Integrates the pair amplitudes α_{n,m}, n < m, of the double-excitation
/// sector. A pair freezes as soon as either atom reaches a wall.
pub fn decay_double(
    initial: &[C64],
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    window: (f64, f64),
    opts: &DecayOptions,
) -> Result<DecayTrajectory> {
    let n = atoms.len();
    let pairs = n * n.saturating_sub(1) / 2;
    if initial.len() != pairs {
        return Err(Error::Index(format!(
            "{} pair amplitudes supplied for {n} atoms ({pairs} pairs)",
            initial.len()
        )));
    }
    run(Sector::Double, initial, atoms, cfg, window, opts)
}

/// Time series in units of Γ.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl RateSeries {
    pub const CSV_HEADER: &'static str = "time_ns,rate_per_gamma,ensemble_id";

    /// Grid point of the largest value.
    pub fn peak(&self) -> Option<(f64, f64)> {
        let i = (0..self.values.len()).max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))?;
        Some((self.times[i], self.values[i]))
    }

    /// Peak position refined by a parabola through the largest grid value and
    /// its neighbours.
    pub fn refined_peak(&self) -> Option<(f64, f64)> {
        let i = (0..self.values.len()).max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))?;
        if i == 0 || i + 1 == self.values.len() {
            return Some((self.times[i], self.values[i]));
        }
        let (y0, y1, y2) = (self.values[i - 1], self.values[i], self.values[i + 1]);
        let h = 0.5 * (self.times[i + 1] - self.times[i - 1]);
        let denom = y0 - 2.0 * y1 + y2;
        if denom >= 0.0 {
            return Some((self.times[i], y1));
        }
        let off = 0.5 * (y0 - y2) / denom;
        Some((self.times[i] + off * h, y1 - 0.25 * (y0 - y2) * off))
    }

    pub fn write_csv<W: Write>(&self, mut w: W, ensemble_id: usize, header: bool) -> Result<()> {
        if header {
            writeln!(w, "{}", Self::CSV_HEADER)?;
        }
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t:e},{v:e},{ensemble_id}")?;
        }
        Ok(())
    }
}

/// −d/dt Σ|α|² normalized by Γ·Σ|α(t₀)|², evaluated from the equations of
/// motion at `times`.
pub fn emission_rate(traj: &DecayTrajectory, times: &[f64]) -> Result<RateSeries> {
    let p0 = traj.initial_population();
    let values = times
        .iter()
        .map(|&t| Ok(if p0 > 0.0 { traj.outflow(t)? / p0 } else { 0.0 }))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RateSeries { times: times.to_vec(), values })
}

/// Normalized rate of second-photon emission after the first photon left at
/// time t′.
pub trait SecondPhotonKernel: Sync {
    fn rate(&self, elapsed: f64, gamma: f64) -> f64;
}

/// Independent single-atom decay Γ e^{−Γ(t−t′)}.
#[derive(Clone, Copy, Debug, Default)]
pub struct IndependentDecay;

impl SecondPhotonKernel for IndependentDecay {
    fn rate(&self, elapsed: f64, gamma: f64) -> f64 {
        gamma * (-gamma * elapsed).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateOptions {
    /// Output spacing and quadrature panel width (ns).
    pub panel: f64,
    /// Gauss–Legendre nodes per panel.
    pub order: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { panel: 0.05, order: 4 }
    }
}

/// Rate of the second photon of a double excitation in units of Γ,
/// normalized by the initial double population. The first-photon outflow at
/// t′ is propagated to t by `kernel`.
pub fn second_photon_rate(
    traj: &DecayTrajectory,
    kernel: &dyn SecondPhotonKernel,
    opts: &RateOptions,
) -> Result<RateSeries> {
    if traj.sector != Sector::Double {
        return Err(Error::Config(String::from("second-photon rate needs a double-excitation trajectory")));
    }
    if !(opts.panel > 0.0) || opts.order == 0 {
        return Err(Error::Config(String::from("rate panels need a positive width and order")));
    }
    let edges = traj.panel_edges(opts.panel, &[]);
    let p0 = traj.initial_population();
    let (x, w) = gauss_legendre(opts.order);
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity((edges.len() - 1) * opts.order);
    for e in edges.windows(2) {
        let (mid, half) = (0.5 * (e[0] + e[1]), 0.5 * (e[1] - e[0]));
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push((mid + half * xi, half * wi));
        }
    }
    let outflow: Vec<f64> = nodes.iter().map(|&(t, _)| traj.outflow(t)).collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(edges.len());
    for (j, &t) in edges.iter().enumerate() {
        let upto = j * opts.order;
        let s: f64 = nodes[..upto]
            .iter()
            .zip(&outflow[..upto])
            .map(|(&(tp, wq), &a)| wq * a * kernel.rate(t - tp, traj.gamma))
            .sum();
        values.push(if p0 > 0.0 { s / p0 } else { 0.0 });
    }
    Ok(RateSeries { times: edges, values })
}

/// Atoms and single-excitation amplitudes α_n(t₀) of one ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcitedEnsemble {
    pub atoms: AtomSet,
    pub amplitudes: Vec<C64>,
}

/// Merges consecutive groups of `group_size` samples into larger ensembles,
/// rescaling every amplitude by 1/√group_size.
pub fn group_samples(samples: &[ExcitedEnsemble], group_size: usize) -> Result<Vec<ExcitedEnsemble>> {
    if group_size == 0 || !samples.len().is_multiple_of(group_size) {
        return Err(Error::Grouping { samples: samples.len(), group_size });
    }
    for s in samples {
        if s.atoms.len() != s.amplitudes.len() {
            return Err(Error::Dimension { expected: s.atoms.len(), found: s.amplitudes.len() });
        }
    }
    let scale = 1.0 / (group_size as f64).sqrt();
    Ok(samples
        .chunks(group_size)
        .map(|group| {
            let sets: Vec<&AtomSet> = group.iter().map(|s| &s.atoms).collect();
            ExcitedEnsemble {
                atoms: AtomSet::concat(&sets),
                amplitudes: group.iter().flat_map(|s| s.amplitudes.iter().map(|a| a * scale)).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
