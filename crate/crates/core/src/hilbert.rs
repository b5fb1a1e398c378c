//! Truncated many-body basis and the couplings of the effective third
//! excitation.
//!
//! Atoms have levels g, i, r, e. The basis keeps the all-ground state, every
//! single and double excitation, and for N ≥ 3 one effective triple per
//! double: the double plus a collective intermediate excitation i_eff shared
//! by the remaining ("spectator") atoms. The spectator block is reduced to its
//! two bright levels by Rayleigh–Schrödinger perturbation theory up to third
//! order in the spread of spectator detunings.

use std::io::Write;

use num_complex::Complex64 as C64;

use crate::config::PhysicalConfig;
use crate::ensemble::{pair_from_index, pair_index, AtomSet, ChannelId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    I,
    R,
    E,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::I, Level::R, Level::E];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Level {
        Level::ALL[i]
    }

    pub fn symbol(self) -> char {
        match self {
            Level::I => 'i',
            Level::R => 'r',
            Level::E => 'e',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisState {
    Ground,
    Single { atom: usize, level: Level },
    /// Atoms `first < second` excited to `levels.0` and `levels.1`.
    Double { first: usize, second: usize, levels: (Level, Level) },
    /// The double `(first, second, levels)` plus one collective i_eff.
    Triple { first: usize, second: usize, levels: (Level, Level) },
}

impl BasisState {
    pub fn label(&self) -> String {
        match *self {
            BasisState::Ground => String::from("G"),
            BasisState::Single { atom, level } => format!("{}{atom}", level.symbol()),
            BasisState::Double { first, second, levels } => {
                format!("{}{first}{}{second}", levels.0.symbol(), levels.1.symbol())
            }
            BasisState::Triple { first, second, levels } => {
                format!("{}{first}{}{second}i_eff", levels.0.symbol(), levels.1.symbol())
            }
        }
    }

    /// Level of `atom` in this state, `None` for ground.
    pub fn level_of(&self, atom: usize) -> Option<Level> {
        match *self {
            BasisState::Ground => None,
            BasisState::Single { atom: a, level } => (a == atom).then_some(level),
            BasisState::Double { first, second, levels } | BasisState::Triple { first, second, levels } => {
                if atom == first {
                    Some(levels.0)
                } else if atom == second {
                    Some(levels.1)
                } else {
                    None
                }
            }
        }
    }
}

/// Ordered low-excitation basis with arithmetic index maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruncatedBasis {
    n_atoms: usize,
    effective: bool,
}

impl TruncatedBasis {
    /// Full basis; the effective sector is present whenever N ≥ 3.
    pub fn new(n_atoms: usize) -> Result<Self> {
        Self::with_effective(n_atoms, true)
    }

    pub fn with_effective(n_atoms: usize, effective: bool) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::Config(String::from("basis needs at least one atom")));
        }
        Ok(TruncatedBasis { n_atoms, effective: effective && n_atoms >= 3 })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn has_effective(&self) -> bool {
        self.effective
    }

    pub fn n_pairs(&self) -> usize {
        self.n_atoms * (self.n_atoms - 1) / 2
    }

    fn double_offset(&self) -> usize {
        1 + 3 * self.n_atoms
    }

    fn triple_offset(&self) -> usize {
        self.double_offset() + 9 * self.n_pairs()
    }

    pub fn dim(&self) -> usize {
        let doubles = 9 * self.n_pairs();
        1 + 3 * self.n_atoms + doubles + if self.effective { doubles } else { 0 }
    }

    pub fn single(&self, atom: usize, level: Level) -> usize {
        1 + 3 * atom + level.index()
    }

    /// Index of the double with `a` in `la` and `b` in `lb`, in either order.
    pub fn double(&self, a: usize, la: Level, b: usize, lb: Level) -> usize {
        let (first, second, l1, l2) = if a < b { (a, b, la, lb) } else { (b, a, lb, la) };
        self.double_offset() + 9 * pair_index(self.n_atoms, first, second) + 3 * l1.index() + l2.index()
    }

    pub fn triple(&self, a: usize, la: Level, b: usize, lb: Level) -> usize {
        self.double(a, la, b, lb) + 9 * self.n_pairs()
    }

    pub fn index(&self, state: &BasisState) -> Option<usize> {
        let n = self.n_atoms;
        match *state {
            BasisState::Ground => Some(0),
            BasisState::Single { atom, level } => (atom < n).then(|| self.single(atom, level)),
            BasisState::Double { first, second, levels } => {
                (first < second && second < n).then(|| self.double(first, levels.0, second, levels.1))
            }
            BasisState::Triple { first, second, levels } => (self.effective && first < second && second < n)
                .then(|| self.triple(first, levels.0, second, levels.1)),
        }
    }

    pub fn label(&self, index: usize) -> Option<BasisState> {
        if index >= self.dim() {
            return None;
        }
        if index == 0 {
            return Some(BasisState::Ground);
        }
        if index < self.double_offset() {
            let k = index - 1;
            return Some(BasisState::Single { atom: k / 3, level: Level::from_index(k % 3) });
        }
        let (k, triple) = if index < self.triple_offset() {
            (index - self.double_offset(), false)
        } else {
            (index - self.triple_offset(), true)
        };
        let (first, second) = pair_from_index(self.n_atoms, k / 9);
        let levels = (Level::from_index(k % 9 / 3), Level::from_index(k % 3));
        Some(if triple {
            BasisState::Triple { first, second, levels }
        } else {
            BasisState::Double { first, second, levels }
        })
    }

    pub fn states(&self) -> impl Iterator<Item = BasisState> + '_ {
        (0..self.dim()).map(move |i| self.label(i).expect("index below dimension"))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,label,sector")?;
        for (i, s) in self.states().enumerate() {
            let sector = match s {
                BasisState::Ground => "ground",
                BasisState::Single { .. } => "single",
                BasisState::Double { .. } => "double",
                BasisState::Triple { .. } => "effective_triple",
            };
            writeln!(w, "{i},{},{sector}", s.label())?;
        }
        Ok(())
    }
}

/// Convenience wrapper for [`TruncatedBasis::new`].
pub fn build_basis(n_atoms: usize) -> Result<TruncatedBasis> {
    TruncatedBasis::new(n_atoms)
}

/// Laser-1 data the effective sector needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Laser1 {
    pub start: f64,
    pub duration: f64,
    /// Peak Rabi frequency Ω₁ (rad/ns).
    pub rabi: f64,
}

/// Per-atom laser-1 quantities shared by every parent double.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectatorData {
    /// |⟨Ω₁,ₗ⟩|: time-averaged Rabi magnitude over the laser-1 window (rad/ns).
    pub mean_rabi: Vec<f64>,
    /// Doppler-shifted δ₁,ₗ (rad/ns).
    pub detuning: Vec<f64>,
}

impl SpectatorData {
    pub fn new(atoms: &AtomSet, cfg: &PhysicalConfig, laser1: &Laser1) -> Self {
        let window = (laser1.start, laser1.start + laser1.duration);
        SpectatorData {
            mean_rabi: (0..atoms.len())
                .map(|n| laser1.rabi.abs() * atoms.mean_beam_factor(n, &[0], window, cfg))
                .collect(),
            detuning: atoms
                .velocities
                .iter()
                .map(|v| cfg.doppler_detuning(0, v[0]))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveCoupling {
    pub first: usize,
    pub second: usize,
    /// Mean spectator detuning δ̄₁ (rad/ns).
    pub mean_detuning: f64,
    /// Quadrature sum of spectator mean Rabi frequencies |⟨Ω₁⟩| (rad/ns).
    pub rabi: f64,
    /// Corrected detuning δ̄₁′ (rad/ns).
    pub effective_detuning: f64,
    /// Corrected Rabi frequency |⟨Ω₁′⟩| (rad/ns).
    pub effective_rabi: f64,
    /// False when a correction exceeded half the gap to the nearest level or
    /// the corrected levels imply no real coupling; the unperturbed values
    /// are kept then.
    pub perturbative: bool,
}

/// Effective coupling of the parent pair `(first, second)`.
pub fn effective_coupling(
    first: usize,
    second: usize,
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    laser1: &Laser1,
) -> Result<EffectiveCoupling> {
    let data = SpectatorData::new(atoms, cfg, laser1);
    effective_coupling_from(&data, first, second)
}

pub fn effective_coupling_from(data: &SpectatorData, first: usize, second: usize) -> Result<EffectiveCoupling> {
    let n = data.mean_rabi.len();
    let degenerate = |reason: &str| Error::DegeneratePerturbation { first, second, reason: reason.to_string() };
    if n < 3 {
        return Err(degenerate("effective sector needs at least one spectator"));
    }
    if first >= n || second >= n || first == second {
        return Err(Error::Index(format!("pair ({first}, {second}) for {n} atoms")));
    }
    let spectators = || (0..n).filter(move |&l| l != first && l != second);
    let count = (n - 2) as f64;
    let dbar = spectators().map(|l| data.detuning[l]).sum::<f64>() / count;
    let omega2: f64 = spectators().map(|l| data.mean_rabi[l].powi(2)).sum();
    let omega = omega2.sqrt();
    if !(omega > 1e-12) {
        return Err(degenerate("vanishing collective Rabi frequency"));
    }
    // u_l² weights and perturbation v_l = δ̄ − δ₁,ₗ on the spectator block
    let (mut m1, mut m2, mut m3) = (0.0, 0.0, 0.0);
    for l in spectators() {
        let u2 = data.mean_rabi[l].powi(2) / omega2;
        let v = dbar - data.detuning[l];
        m1 += u2 * v;
        m2 += u2 * v * v;
        m3 += u2 * v * v * v;
    }
    let m2c = m2 - m1 * m1;
    let m3c = m3 - 2.0 * m1 * m2 + m1 * m1 * m1;

    let root = (dbar * dbar + omega2).sqrt();
    // roots of e² + δ̄e − Ω²/4 without cancellation
    let big = -0.5 * (dbar + dbar.signum() * root);
    let small = -0.25 * omega2 / big;
    let e = if big > small { [big, small] } else { [small, big] };
    let e_dark = -dbar;
    if (e[0] - e[1]).abs() < 1e-6 {
        return Err(degenerate("bright levels are degenerate"));
    }
    let cb = e.map(|ea| {
        let ratio = 2.0 * ea / omega;
        ratio / (1.0 + ratio * ratio).sqrt()
    });
    let has_dark = n > 3;
    let mut corrected = [0.0; 2];
    let mut within = true;
    for a in 0..2 {
        let b = 1 - a;
        let v_aa = cb[a] * cb[a] * m1;
        let v_bb = cb[b] * cb[b] * m1;
        let v_ab = cb[a] * cb[b] * m1;
        let w_aa = cb[a] * cb[a] * m2c;
        let w_ab = cb[a] * cb[b] * m2c;
        let x_aa = cb[a] * cb[a] * m3c;
        let d_ab = e[a] - e[b];
        let mut e2 = v_ab * v_ab / d_ab;
        let mut e3 = v_ab * v_ab * v_bb / (d_ab * d_ab) - v_aa * v_ab * v_ab / (d_ab * d_ab);
        if has_dark && (w_aa != 0.0 || x_aa != 0.0) {
            let d_ad = e[a] - e_dark;
            if d_ad.abs() < 1e-6 {
                return Err(degenerate("bright level degenerate with the dark manifold"));
            }
            e2 += w_aa / d_ad;
            e3 += 2.0 * v_ab * w_ab / (d_ab * d_ad) + x_aa / (d_ad * d_ad) - v_aa * w_aa / (d_ad * d_ad);
        }
        corrected[a] = e[a] + v_aa + e2 + e3;
        let gap = if has_dark { d_ab.abs().min((e[a] - e_dark).abs()) } else { d_ab.abs() };
        within &= (corrected[a] - e[a]).abs() < 0.5 * gap;
    }
    let sum = corrected[0] + corrected[1];
    let radicand = -4.0 * corrected[0] * corrected[1];
    if !(within && radicand >= 0.0 && sum.is_finite()) {
        return Ok(EffectiveCoupling {
            first,
            second,
            mean_detuning: dbar,
            rabi: omega,
            effective_detuning: dbar,
            effective_rabi: omega,
            perturbative: false,
        });
    }
    Ok(EffectiveCoupling {
        first,
        second,
        mean_detuning: dbar,
        rabi: omega,
        effective_detuning: -sum,
        effective_rabi: radicand.sqrt(),
        perturbative: true,
    })
}

/// Effective couplings for every pair, in pair order.
pub fn effective_couplings(data: &SpectatorData) -> Result<Vec<EffectiveCoupling>> {
    let n = data.mean_rabi.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for k in 0..n * n.saturating_sub(1) / 2 {
        let (a, b) = pair_from_index(n, k);
        out.push(effective_coupling_from(data, a, b)?);
    }
    Ok(out)
}

/// One coupling ⟨row|H|col⟩ = factor · env₁,ₗ(t) · env₁,ₘ(t) while laser 1 is
/// on, from adiabatic elimination of |r_n i_m i_l⟩. The Hermitian partner
/// ⟨col|H|row⟩ carries the conjugate factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndirectTerm {
    pub rydberg: usize,
    /// Atom gaining the i excitation (l).
    pub to: usize,
    /// Atom losing the i excitation (m), m < l.
    pub from: usize,
    /// Index of |r_n i_l⟩.
    pub row: usize,
    /// Index of |r_n i_m⟩.
    pub col: usize,
    /// Ω₁² e^{ik₁(x_l − x_m)} / (4 (δ₁,ₙ + δ₂,ₙ + δ₁,ₘ + δ₁,ₗ)).
    pub factor: C64,
    pub envelopes: (ChannelId, ChannelId),
}

impl IndirectTerm {
    /// Value of ⟨row|H|col⟩ for given laser-1 beam factors of atoms l and m.
    pub fn value(&self, env_to: f64, env_from: f64) -> C64 {
        self.factor * (env_to * env_from)
    }
}

/// Indirect couplings between doubles |r_n i_m⟩ and |r_n i_l⟩, m < l.
pub fn indirect_hamiltonian_terms(
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    laser1: &Laser1,
    basis: &TruncatedBasis,
) -> Result<Vec<IndirectTerm>> {
    let n_atoms = atoms.len();
    if basis.n_atoms() != n_atoms {
        return Err(Error::Dimension { expected: basis.n_atoms(), found: n_atoms });
    }
    let k = cfg.wave_numbers();
    let d1: Vec<f64> = atoms.velocities.iter().map(|v| cfg.doppler_detuning(0, v[0])).collect();
    let d2: Vec<f64> = atoms.velocities.iter().map(|v| cfg.doppler_detuning(1, v[0])).collect();
    let mut out = Vec::new();
    for n in 0..n_atoms {
        for m in 0..n_atoms {
            if m == n {
                continue;
            }
            for l in m + 1..n_atoms {
                if l == n {
                    continue;
                }
                let denom = d1[n] + d2[n] + d1[m] + d1[l];
                if denom.abs() < 1e-9 * laser1.rabi.abs().max(1.0) {
                    return Err(Error::SingularElimination { rydberg: n, from: m, to: l });
                }
                let phase = k[0] * (atoms.positions[l][0] - atoms.positions[m][0]);
                out.push(IndirectTerm {
                    rydberg: n,
                    to: l,
                    from: m,
                    row: basis.double(n, Level::R, l, Level::I),
                    col: basis.double(n, Level::R, m, Level::I),
                    factor: C64::from_polar(laser1.rabi * laser1.rabi / (4.0 * denom), phase),
                    envelopes: (
                        ChannelId::Envelope { atom: l, laser: 0 },
                        ChannelId::Envelope { atom: m, laser: 0 },
                    ),
                });
            }
        }
    }
    Ok(out)
}
