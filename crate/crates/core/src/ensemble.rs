//! Atom sampling inside the vapor cell, ballistic trajectories, beam-overlap
//! filtering and polynomial fits of the time-dependent Hamiltonian channels.
//!
//! The beam axis is x. Atoms are confined between walls at x = 0 and
//! x = `cell_thickness`; the transverse plane is unbounded.

use std::f64::consts::TAU;
use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{LiadWalls, PhysicalConfig};
use crate::error::{Error, Result};
use crate::numerics::gaussian_time_average;
use crate::par::Execution;
use crate::polyfit::{Fitter, Polynomial};

/// Window over which the beam-overlap filter and channel fits are evaluated (ns).
pub const PULSE_WINDOW: (f64, f64) = (0.0, 2.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Boltzmann,
    Liad,
    /// Constructed explicitly rather than sampled.
    Manual,
}

impl Distribution {
    pub fn tag(self) -> u8 {
        match self {
            Distribution::Boltzmann => 0,
            Distribution::Liad => 1,
            Distribution::Manual => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Distribution::Boltzmann),
            1 => Ok(Distribution::Liad),
            2 => Ok(Distribution::Manual),
            _ => Err(Error::Parse(format!("unknown distribution tag {tag}"))),
        }
    }
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "boltzmann" => Ok(Distribution::Boltzmann),
            "liad" => Ok(Distribution::Liad),
            "manual" => Ok(Distribution::Manual),
            other => Err(Error::Parse(format!("unknown distribution '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtomSet {
    /// Initial positions (µm).
    pub positions: Vec<[f64; 3]>,
    /// Velocities (µm/ns).
    pub velocities: Vec<[f64; 3]>,
    /// First wall-exit time of each straight trajectory (ns).
    pub wall_times: Vec<f64>,
    pub distribution: Distribution,
    pub seed: u64,
}

impl AtomSet {
    /// Builds a set from explicit initial conditions; wall times follow from
    /// the cell geometry.
    pub fn from_parts(
        positions: Vec<[f64; 3]>,
        velocities: Vec<[f64; 3]>,
        cell_thickness: f64,
    ) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::Dimension { expected: positions.len(), found: velocities.len() });
        }
        let wall_times = positions
            .iter()
            .zip(&velocities)
            .map(|(r, v)| wall_time(r[0], v[0], cell_thickness))
            .collect();
        Ok(AtomSet {
            positions,
            velocities,
            wall_times,
            distribution: Distribution::Manual,
            seed: 0,
        })
    }

    /// Stationary atoms that never reach a wall.
    pub fn stationary(positions: Vec<[f64; 3]>) -> Self {
        let n = positions.len();
        AtomSet {
            positions,
            velocities: vec![[0.0; 3]; n],
            wall_times: vec![f64::INFINITY; n],
            distribution: Distribution::Manual,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position_at(&self, n: usize, t: f64) -> [f64; 3] {
        let r = self.positions[n];
        let v = self.velocities[n];
        [r[0] + v[0] * t, r[1] + v[1] * t, r[2] + v[2] * t]
    }

    /// Separation vector R_m(t) − R_n(t).
    pub fn separation(&self, n: usize, m: usize, t: f64) -> [f64; 3] {
        let a = self.position_at(n, t);
        let b = self.position_at(m, t);
        [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
    }

    pub fn distance(&self, n: usize, m: usize, t: f64) -> f64 {
        let d = self.separation(n, m, t);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Laser-j beam factor exp(−|R⊥(t)|²/w_j²).
    pub fn beam_factor(&self, n: usize, laser: usize, t: f64, cfg: &PhysicalConfig) -> f64 {
        let r = self.position_at(n, t);
        let w = cfg.waists[laser];
        (-(r[1] * r[1] + r[2] * r[2]) / (w * w)).exp()
    }

    /// Mean over `window` of the product of the beam factors of `lasers`.
    pub fn mean_beam_factor(
        &self,
        n: usize,
        lasers: &[usize],
        window: (f64, f64),
        cfg: &PhysicalConfig,
    ) -> f64 {
        let inv_w2: f64 = lasers.iter().map(|&j| 1.0 / (cfg.waists[j] * cfg.waists[j])).sum();
        let r = self.positions[n];
        let v = self.velocities[n];
        gaussian_time_average([r[1], r[2]], [v[1], v[2]], inv_w2, window.0, window.1)
    }

    pub fn subset(&self, keep: &[usize]) -> AtomSet {
        AtomSet {
            positions: keep.iter().map(|&i| self.positions[i]).collect(),
            velocities: keep.iter().map(|&i| self.velocities[i]).collect(),
            wall_times: keep.iter().map(|&i| self.wall_times[i]).collect(),
            distribution: self.distribution,
            seed: self.seed,
        }
    }

    /// Concatenates several sets into one ensemble.
    pub fn concat(sets: &[&AtomSet]) -> AtomSet {
        let mut out = AtomSet {
            positions: Vec::new(),
            velocities: Vec::new(),
            wall_times: Vec::new(),
            distribution: sets.first().map_or(Distribution::Manual, |s| s.distribution),
            seed: sets.first().map_or(0, |s| s.seed),
        };
        for s in sets {
            out.positions.extend_from_slice(&s.positions);
            out.velocities.extend_from_slice(&s.velocities);
            out.wall_times.extend_from_slice(&s.wall_times);
        }
        out
    }

    /// Fraction of atoms whose wall time exceeds `t`.
    pub fn survivor_fraction(&self, t: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.wall_times.iter().filter(|&&tw| tw > t).count() as f64 / self.len() as f64
    }

    pub const CSV_HEADER: &'static str = "x_um,y_um,z_um,vx_um_per_ns,vy_um_per_ns,vz_um_per_ns,t_wall_ns";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for n in 0..self.len() {
            let r = self.positions[n];
            let v = self.velocities[n];
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r[0], r[1], r[2], v[0], v[1], v[2], self.wall_times[n]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, distribution: Distribution, seed: u64) -> Result<Self> {
        let mut set = AtomSet {
            positions: Vec::new(),
            velocities: Vec::new(),
            wall_times: Vec::new(),
            distribution,
            seed,
        };
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            if vals.len() != 7 {
                return Err(Error::Parse(format!("line {}: expected 7 columns", i + 1)));
            }
            set.positions.push([vals[0], vals[1], vals[2]]);
            set.velocities.push([vals[3], vals[4], vals[5]]);
            set.wall_times.push(vals[6]);
        }
        Ok(set)
    }

    const MAGIC: &'static [u8; 8] = b"RYDATOMS";
    const VERSION: u16 = 1;

    /// Versioned little-endian snapshot that round-trips bit-exactly.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u16::<LittleEndian>(Self::VERSION)?;
        w.write_u8(self.distribution.tag())?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        for n in 0..self.len() {
            for x in self.positions[n].iter().chain(&self.velocities[n]) {
                w.write_f64::<LittleEndian>(*x)?;
            }
            w.write_f64::<LittleEndian>(self.wall_times[n])?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse(String::from("not an atom snapshot")));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != Self::VERSION {
            return Err(Error::Parse(format!("unsupported snapshot version {version}")));
        }
        let distribution = Distribution::from_tag(r.read_u8()?)?;
        let seed = r.read_u64::<LittleEndian>()?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let mut set = AtomSet {
            positions: Vec::with_capacity(n),
            velocities: Vec::with_capacity(n),
            wall_times: Vec::with_capacity(n),
            distribution,
            seed,
        };
        for _ in 0..n {
            let mut v = [0.0; 7];
            for x in v.iter_mut() {
                *x = r.read_f64::<LittleEndian>()?;
            }
            set.positions.push([v[0], v[1], v[2]]);
            set.velocities.push([v[3], v[4], v[5]]);
            set.wall_times.push(v[6]);
        }
        Ok(set)
    }
}

/// First t ≥ 0 at which x + vx·t leaves [0, thickness].
pub fn wall_time(x: f64, vx: f64, thickness: f64) -> f64 {
    if vx > 0.0 {
        ((thickness - x) / vx).max(0.0)
    } else if vx < 0.0 {
        (x / -vx).max(0.0)
    } else {
        f64::INFINITY
    }
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config(String::from("atom count must be at least 1")));
    }
    Ok(())
}

fn uniform_disk<R: Rng>(rng: &mut R, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = TAU * rng.random::<f64>();
    (r * phi.cos(), r * phi.sin())
}

/// Thermal atoms: uniform in the cell slab and a transverse disk, Gaussian
/// velocity components with σ = √(k_B T / m).
pub fn sample_boltzmann(n: usize, cfg: &PhysicalConfig, seed: u64) -> Result<AtomSet> {
    check_count(n)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = cfg.thermal_sigma();
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for _ in 0..n {
        let x = cfg.cell_thickness * rng.random::<f64>();
        let (y, z) = uniform_disk(&mut rng, cfg.transverse_radius);
        let v: [f64; 3] = std::array::from_fn(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            sigma * g
        });
        positions.push([x, y, z]);
        velocities.push(v);
    }
    let mut set = AtomSet::from_parts(positions, velocities, cfg.cell_thickness)?;
    set.distribution = Distribution::Boltzmann;
    set.seed = seed;
    Ok(set)
}

/// Wall-desorbed atoms with P(v, θ) ∝ v² exp(−v²/b²) cos θ, θ measured from
/// the inward wall normal.
pub fn sample_liad(n: usize, cfg: &PhysicalConfig, seed: u64) -> Result<AtomSet> {
    check_count(n)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = cfg.liad_b / std::f64::consts::SQRT_2;
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for _ in 0..n {
        // v² e^{−v²/b²} is the speed law of a 3D Gaussian with σ = b/√2
        let g: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let speed = scale * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let theta = rng.random::<f64>().asin();
        let phi = TAU * rng.random::<f64>();
        let far_wall = match cfg.liad_walls {
            LiadWalls::Both => rng.random::<bool>(),
            LiadWalls::Near => false,
        };
        let (y, z) = uniform_disk(&mut rng, cfg.transverse_radius);
        let inward = if far_wall { -1.0 } else { 1.0 };
        let x = if far_wall { cfg.cell_thickness } else { 0.0 };
        let vt = speed * theta.sin();
        positions.push([x, y, z]);
        velocities.push([inward * speed * theta.cos(), vt * phi.cos(), vt * phi.sin()]);
    }
    let mut set = AtomSet::from_parts(positions, velocities, cfg.cell_thickness)?;
    set.distribution = Distribution::Liad;
    set.seed = seed;
    Ok(set)
}

pub fn sample(dist: Distribution, n: usize, cfg: &PhysicalConfig, seed: u64) -> Result<AtomSet> {
    match dist {
        Distribution::Boltzmann => sample_boltzmann(n, cfg, seed),
        Distribution::Liad => sample_liad(n, cfg, seed),
        Distribution::Manual => Err(Error::Config(String::from("manual sets cannot be sampled"))),
    }
}

/// Keeps atoms whose laser-1 beam factor averaged over `window` is at least
/// `threshold` and that stay inside the cell for the whole window.
pub fn filter_by_rabi(
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    window: (f64, f64),
    threshold: f64,
) -> AtomSet {
    let keep: Vec<usize> = (0..atoms.len())
        .filter(|&n| {
            atoms.wall_times[n] >= window.1
                && atoms.mean_beam_factor(n, &[0], window, cfg) >= threshold
        })
        .collect();
    atoms.subset(&keep)
}

/// Draws raw candidates in batches until `n` atoms pass [`filter_by_rabi`].
pub fn sample_filtered(
    dist: Distribution,
    n: usize,
    cfg: &PhysicalConfig,
    seed: u64,
    threshold: f64,
) -> Result<AtomSet> {
    check_count(n)?;
    let mut kept: Vec<AtomSet> = Vec::new();
    let mut count = 0;
    let batch = (4 * n).max(64);
    for round in 0..10_000u64 {
        let raw = sample(dist, batch, cfg, crate::seeds::derive(seed, 0x5A3F, round))?;
        let f = filter_by_rabi(&raw, cfg, PULSE_WINDOW, threshold);
        count += f.len();
        kept.push(f);
        if count >= n {
            break;
        }
    }
    if count < n {
        return Err(Error::Config(format!(
            "beam-overlap filter retained only {count} of the requested {n} atoms"
        )));
    }
    let refs: Vec<&AtomSet> = kept.iter().collect();
    let all = AtomSet::concat(&refs);
    let mut out = all.subset(&(0..n).collect::<Vec<_>>());
    out.distribution = dist;
    out.seed = seed;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOrders {
    pub lasers: [usize; 3],
    pub interaction: usize,
}

impl Default for FitOrders {
    fn default() -> Self {
        FitOrders { lasers: [3, 2, 2], interaction: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelId {
    /// Beam factor of laser `laser` (0-based) seen by `atom`.
    Envelope { atom: usize, laser: usize },
    /// Capped van-der-Waals shift of pair `first < second`.
    Interaction { first: usize, second: usize },
}

impl std::fmt::Display for ChannelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelId::Envelope { atom, laser } => write!(f, "envelope(atom {atom}, laser {})", laser + 1),
            ChannelId::Interaction { first, second } => write!(f, "interaction({first}, {second})"),
        }
    }
}

/// Fitted time dependence of every Hamiltonian channel of one atom set.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelFits {
    pub window: (f64, f64),
    pub orders: FitOrders,
    pub n_atoms: usize,
    /// `envelopes[n][j]`: beam factor of laser j at atom n.
    pub envelopes: Vec<[Polynomial; 3]>,
    /// Pair interactions in [`pair_index`] order.
    pub interactions: Vec<Polynomial>,
}

impl ChannelFits {
    pub fn get(&self, id: ChannelId) -> Result<&Polynomial> {
        let missing = || Error::MissingChannel(id.to_string());
        match id {
            ChannelId::Envelope { atom, laser } => self
                .envelopes
                .get(atom)
                .and_then(|e| e.get(laser))
                .ok_or_else(missing),
            ChannelId::Interaction { first, second } => {
                if first >= second || second >= self.n_atoms {
                    return Err(missing());
                }
                self.interactions
                    .get(pair_index(self.n_atoms, first, second))
                    .ok_or_else(missing)
            }
        }
    }

    /// Largest residual over every channel.
    pub fn max_residual(&self) -> (Option<ChannelId>, f64) {
        let mut best = (None, 0.0);
        for (n, env) in self.envelopes.iter().enumerate() {
            for (j, p) in env.iter().enumerate() {
                if p.max_residual > best.1 {
                    best = (Some(ChannelId::Envelope { atom: n, laser: j }), p.max_residual);
                }
            }
        }
        for (k, p) in self.interactions.iter().enumerate() {
            if p.max_residual > best.1 {
                let (first, second) = pair_from_index(self.n_atoms, k);
                best = (Some(ChannelId::Interaction { first, second }), p.max_residual);
            }
        }
        best
    }
}

/// Position of pair (n, m), n < m, in row-major upper-triangle order.
pub fn pair_index(n_atoms: usize, n: usize, m: usize) -> usize {
    debug_assert!(n < m && m < n_atoms);
    n * (2 * n_atoms - n - 1) / 2 + (m - n - 1)
}

pub fn pair_from_index(n_atoms: usize, mut k: usize) -> (usize, usize) {
    let mut n = 0;
    loop {
        let row = n_atoms - n - 1;
        if k < row {
            return (n, n + 1 + k);
        }
        k -= row;
        n += 1;
    }
}

/// Least-squares fits of every beam envelope and pair interaction over `window`.
pub fn polyfit_channels(
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    window: (f64, f64),
    orders: FitOrders,
    exec: Execution,
) -> Result<ChannelFits> {
    let n = atoms.len();
    let laser_fitters = [
        Fitter::new(window, orders.lasers[0])?,
        Fitter::new(window, orders.lasers[1])?,
        Fitter::new(window, orders.lasers[2])?,
    ];
    let pair_fitter = Fitter::new(window, orders.interaction)?;
    let label = |id: ChannelId| {
        move |e: Error| match e {
            Error::Fit { reason, .. } => Error::Fit { channel: id.to_string(), reason },
            other => other,
        }
    };
    let envelopes = exec
        .map_range(n, |a| -> Result<[Polynomial; 3]> {
            let fit = |j: usize| {
                laser_fitters[j]
                    .fit_function(|t| atoms.beam_factor(a, j, t, cfg))
                    .map_err(label(ChannelId::Envelope { atom: a, laser: j }))
            };
            Ok([fit(0)?, fit(1)?, fit(2)?])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n_pairs = n * n.saturating_sub(1) / 2;
    let interactions = exec
        .map_range(n_pairs, |k| {
            let (first, second) = pair_from_index(n, k);
            pair_fitter
                .fit_function(|t| cfg.interaction(atoms.distance(first, second, t)))
                .map_err(label(ChannelId::Interaction { first, second }))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelFits { window, orders, n_atoms: n, envelopes, interactions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PhysicalConfig {
        PhysicalConfig::default()
    }

    #[test]
    fn boltzmann_is_deterministic_and_inside_the_slab() {
        let a = sample_boltzmann(500, &cfg(), 11).unwrap();
        let b = sample_boltzmann(500, &cfg(), 11).unwrap();
        assert_eq!(a, b);
        for n in 0..a.len() {
            let x = a.positions[n][0];
            assert!((0.0..=1.0).contains(&x));
            let rt = a.positions[n][1].hypot(a.positions[n][2]);
            assert!(rt <= cfg().transverse_radius);
        }
        assert_ne!(a, sample_boltzmann(500, &cfg(), 12).unwrap());
    }

    #[test]
    fn zero_atoms_is_a_config_error() {
        assert!(matches!(sample_boltzmann(0, &cfg(), 1), Err(Error::Config(_))));
        assert!(matches!(sample_liad(0, &cfg(), 1), Err(Error::Config(_))));
        let mut c = cfg();
        c.temperature = 0.0;
        assert!(matches!(sample_boltzmann(3, &c, 1), Err(Error::Config(_))));
    }

    #[test]
    fn boltzmann_velocity_moments() {
        let c = cfg();
        let n = 100_000;
        let s = sample_boltzmann(n, &c, 3).unwrap();
        let sigma = c.thermal_sigma();
        for k in 0..3 {
            let mean = s.velocities.iter().map(|v| v[k]).sum::<f64>() / n as f64;
            let var = s.velocities.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt());
            assert!((var.sqrt() / sigma - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn normal_emission_wall_time() {
        assert_eq!(wall_time(0.0, 0.5, 1.0), 2.0);
        assert_eq!(wall_time(1.0, -0.5, 1.0), 2.0);
        assert_eq!(wall_time(0.3, 0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn liad_atoms_start_on_a_wall_moving_inward() {
        let s = sample_liad(2000, &cfg(), 5).unwrap();
        let mut far = 0;
        for n in 0..s.len() {
            let x = s.positions[n][0];
            let vx = s.velocities[n][0];
            assert!(x == 0.0 && vx > 0.0 || x == 1.0 && vx < 0.0);
            far += usize::from(x == 1.0);
        }
        assert!(far > 900 && far < 1100);
        let mut c = cfg();
        c.liad_walls = LiadWalls::Near;
        let s = sample_liad(200, &c, 5).unwrap();
        assert!(s.positions.iter().all(|r| r[0] == 0.0));
    }

    fn liad_speed_cdf(v: f64, b: f64) -> f64 {
        // ∫₀^v u² e^{−u²/b²} du normalized by b³√π/4
        let x = v / b;
        libm::erf(x) - 2.0 * x * (-x * x).exp() / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn liad_speed_distribution_ks() {
        let c = cfg();
        let n = 200_000;
        let s = sample_liad(n, &c, 9).unwrap();
        let mut speeds: Vec<f64> = s
            .velocities
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .collect();
        speeds.sort_by(f64::total_cmp);
        let d = speeds
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = liad_speed_cdf(v, c.liad_b);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // 99.9% critical value 1.95/√n
        assert!(d < 1.95 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn liad_polar_angle_follows_cosine() {
        let s = sample_liad(100_000, &cfg(), 2).unwrap();
        // E[cos θ] for density ∝ cos θ on [0, π/2] is π/4
        let mean_cos = s
            .velocities
            .iter()
            .map(|v| v[0].abs() / (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .sum::<f64>()
            / 100_000.0;
        assert!((mean_cos - std::f64::consts::FRAC_PI_4).abs() < 0.005);
    }

    #[test]
    fn filter_keeps_on_axis_and_drops_weak_overlap() {
        let c = cfg();
        let w = c.waists[0];
        let r_weak = w * (1.0 / 0.05f64).ln().sqrt();
        let atoms = AtomSet::stationary(vec![[0.5, 0.0, 0.0], [0.5, r_weak, 0.0]]);
        let kept = filter_by_rabi(&atoms, &c, PULSE_WINDOW, 0.1);
        assert_eq!(kept.positions, vec![[0.5, 0.0, 0.0]]);
    }

    #[test]
    fn filter_drops_early_wall_hits() {
        let c = cfg();
        let atoms = AtomSet::from_parts(vec![[0.5, 0.0, 0.0]; 2], vec![[0.3, 0.0, 0.0], [0.1, 0.0, 0.0]], 1.0).unwrap();
        let kept = filter_by_rabi(&atoms, &c, PULSE_WINDOW, 0.1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.velocities[0][0], 0.1);
    }

    #[test]
    fn sample_filtered_returns_requested_count() {
        let c = cfg();
        let s = sample_filtered(Distribution::Liad, 30, &c, 4, 0.1).unwrap();
        assert_eq!(s.len(), 30);
        assert!(s.wall_times.iter().all(|&t| t >= 2.0));
        assert_eq!(s, sample_filtered(Distribution::Liad, 30, &c, 4, 0.1).unwrap());
    }

    #[test]
    fn pair_index_round_trip() {
        for n_atoms in 2..12 {
            let mut k = 0;
            for n in 0..n_atoms {
                for m in n + 1..n_atoms {
                    assert_eq!(pair_index(n_atoms, n, m), k);
                    assert_eq!(pair_from_index(n_atoms, k), (n, m));
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn stationary_channels_fit_exactly() {
        let c = cfg();
        let atoms = AtomSet::stationary(vec![[0.2, 0.1, 0.0], [0.2, 0.1, 1.0]]);
        let fits = polyfit_channels(&atoms, &c, PULSE_WINDOW, FitOrders::default(), Execution::Sequential).unwrap();
        let env = fits.get(ChannelId::Envelope { atom: 0, laser: 0 }).unwrap();
        assert!((env.eval(0.7) - (-0.01f64 / 0.25).exp()).abs() < 1e-13);
        let v = fits.get(ChannelId::Interaction { first: 0, second: 1 }).unwrap();
        assert!((v.eval(1.3) - c.c6).abs() < 1e-11);
        assert!(fits.max_residual().1 < 1e-11);
        assert!(matches!(
            fits.get(ChannelId::Interaction { first: 1, second: 0 }),
            Err(Error::MissingChannel(_))
        ));
    }

    #[test]
    fn channel_fits_match_between_execution_modes() {
        let c = cfg();
        let atoms = sample_filtered(Distribution::Boltzmann, 6, &c, 8, 0.1).unwrap();
        let a = polyfit_channels(&atoms, &c, PULSE_WINDOW, FitOrders::default(), Execution::Sequential).unwrap();
        let b = polyfit_channels(&atoms, &c, PULSE_WINDOW, FitOrders::default(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_and_snapshot_round_trip() {
        let s = sample_liad(25, &cfg(), 21).unwrap();
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf).unwrap();
        assert_eq!(AtomSet::read_snapshot(buf.as_slice()).unwrap(), s);
        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        let back = AtomSet::read_csv(csv.as_slice(), Distribution::Liad, 21).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn wall_time_is_first_exit(x in 0.0f64..1.0, vx in -2.0f64..2.0) {
            let t = wall_time(x, vx, 1.0);
            if vx != 0.0 {
                let xe = x + vx * t;
                prop_assert!(xe.abs() < 1e-12 || (xe - 1.0).abs() < 1e-12);
                prop_assert!(t >= 0.0);
            }
        }

        #[test]
        fn liad_survival_formula(seed in 0u64..1000) {
            let c = PhysicalConfig::default();
            let s = sample_liad(20_000, &c, seed).unwrap();
            for t in [0.5, 1.0, 1.5, 2.0] {
                let expect = 1.0 - (-(c.cell_thickness / (c.liad_b * t)).powi(2)).exp();
                let se = (expect * (1.0 - expect) / 20_000.0).sqrt();
                prop_assert!((s.survivor_fraction(t) - expect).abs() < 5.0 * se + 1e-4);
            }
        }
    }
}
