//! Rotating-frame Hamiltonian in the truncated basis as a sparse operator
//! whose entries are static complex factors times real time channels.

use std::collections::HashMap;

use num_complex::Complex64 as C64;

use super::pulses::PulseSequence;
use crate::config::PhysicalConfig;
use crate::ensemble::{pair_index, AtomSet, ChannelFits, ChannelId};
use crate::error::{Error, Result};
use crate::hilbert::{
    effective_couplings, indirect_hamiltonian_terms, EffectiveCoupling, Laser1, Level, SpectatorData,
    TruncatedBasis,
};
use crate::par::Execution;
use crate::polyfit::Polynomial;

/// Switch controlling when a channel is non-zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    Always,
    Laser(usize),
}

impl Gate {
    fn open(self, gates: [bool; 3]) -> bool {
        match self {
            Gate::Always => true,
            Gate::Laser(j) => gates[j],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Constant,
    /// Fitted polynomial at this index of [`Hamiltonian::polynomials`].
    Poly(usize),
    /// Product of two fitted polynomials.
    Product(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Channel {
    pub kind: ChannelKind,
    pub gate: Gate,
}

/// H(t) = diag(drift) + Σ_k factor_k · channel_k(t) |row_k⟩⟨col_k|.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    pub basis: TruncatedBasis,
    /// Static rotating-frame drift diagonal.
    pub drift: Vec<f64>,
    pub polynomials: Vec<Polynomial>,
    pub channels: Vec<Channel>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    factors: Vec<C64>,
    chans: Vec<u32>,
    pub pulses: PulseSequence,
    pub effective: Vec<EffectiveCoupling>,
    window: (f64, f64),
}

struct Builder {
    polys: Vec<Polynomial>,
    poly_index: HashMap<ChannelId, usize>,
    channels: Vec<Channel>,
    channel_index: HashMap<Channel, usize>,
    triplets: Vec<(usize, usize, C64, usize)>,
}

impl Builder {
    fn poly(&mut self, id: ChannelId, fits: &ChannelFits) -> Result<usize> {
        if let Some(&i) = self.poly_index.get(&id) {
            return Ok(i);
        }
        let p = fits.get(id)?.clone();
        self.polys.push(p);
        self.poly_index.insert(id, self.polys.len() - 1);
        Ok(self.polys.len() - 1)
    }

    fn channel(&mut self, kind: ChannelKind, gate: Gate) -> usize {
        let c = Channel { kind, gate };
        if let Some(&i) = self.channel_index.get(&c) {
            return i;
        }
        self.channels.push(c);
        self.channel_index.insert(c, self.channels.len() - 1);
        self.channels.len() - 1
    }

    /// Adds ⟨upper|H|lower⟩ = factor·c(t) and its Hermitian partner.
    fn pair(&mut self, upper: usize, lower: usize, factor: C64, chan: usize) {
        if factor == C64::new(0.0, 0.0) {
            return;
        }
        self.triplets.push((upper, lower, factor, chan));
        self.triplets.push((lower, upper, factor.conj(), chan));
    }
}

impl Hamiltonian {
    /// Assembles the operator for `pulses` from precomputed channel fits.
    pub fn assemble(
        atoms: &AtomSet,
        cfg: &PhysicalConfig,
        pulses: &PulseSequence,
        basis: &TruncatedBasis,
        fits: &ChannelFits,
    ) -> Result<Self> {
        pulses.validate()?;
        let n = atoms.len();
        if basis.n_atoms() != n || fits.n_atoms != n {
            return Err(Error::Dimension { expected: basis.n_atoms(), found: n });
        }
        let t0 = pulses.total_duration();
        if t0 > fits.window.1 + 1e-12 || fits.window.0 > 0.0 {
            return Err(Error::Fit {
                channel: String::from("all"),
                reason: format!(
                    "fit window [{}, {}] does not cover the pulse window [0, {t0}]",
                    fits.window.0, fits.window.1
                ),
            });
        }
        let k = cfg.wave_numbers();
        let lasers = pulses.lasers();
        // cumulative Doppler-shifted drift per level: i, r, e
        let det: Vec<[f64; 3]> = atoms
            .velocities
            .iter()
            .map(|v| {
                let d = [0, 1, 2].map(|j| cfg.doppler_detuning(j, v[0]));
                [-d[0], -(d[0] + d[1]), -(d[0] + d[1] - d[2])]
            })
            .collect();
        let rabi: Vec<[C64; 3]> = atoms
            .positions
            .iter()
            .map(|r| [0, 1, 2].map(|j| C64::from_polar(0.5 * lasers[j].rabi, k[j] * r[0])))
            .collect();

        let mut b = Builder {
            polys: Vec::new(),
            poly_index: HashMap::new(),
            channels: Vec::new(),
            channel_index: HashMap::new(),
            triplets: Vec::new(),
        };
        let mut env_chan = vec![[0usize; 3]; n];
        for (a, ch) in env_chan.iter_mut().enumerate() {
            for j in 0..3 {
                let p = b.poly(ChannelId::Envelope { atom: a, laser: j }, fits)?;
                ch[j] = b.channel(ChannelKind::Poly(p), Gate::Laser(j));
            }
        }

        let dim = basis.dim();
        let mut drift = vec![0.0; dim];
        for a in 0..n {
            for l in Level::ALL {
                drift[basis.single(a, l)] = det[a][l.index()];
            }
        }

        // intra-atom transitions i↔r (laser 2) and r↔e (laser 3) of atom `a`
        // inside a state whose other excitations are fixed
        let intra = |b: &mut Builder, a: usize, index_of: &dyn Fn(Level) -> usize| {
            b.pair(index_of(Level::R), index_of(Level::I), rabi[a][1], env_chan[a][1]);
            b.pair(index_of(Level::R), index_of(Level::E), rabi[a][2], env_chan[a][2]);
        };

        for a in 0..n {
            b.pair(basis.single(a, Level::I), 0, rabi[a][0], env_chan[a][0]);
            intra(&mut b, a, &|l| basis.single(a, l));
        }

        let effective = if basis.has_effective() {
            let laser1 = Laser1 { start: lasers[0].start, duration: lasers[0].duration, rabi: lasers[0].rabi };
            if lasers[0].duration > 0.0 && lasers[0].rabi != 0.0 {
                effective_couplings(&SpectatorData::new(atoms, cfg, &laser1))?
            } else {
                Vec::new()
            }
        } else {
            Vec::new()
        };
        let eff_chan = b.channel(ChannelKind::Constant, Gate::Laser(0));

        for first in 0..n {
            for second in first + 1..n {
                let p = pair_index(n, first, second);
                let vdw = b.poly(ChannelId::Interaction { first, second }, fits)?;
                let vdw_chan = b.channel(ChannelKind::Poly(vdw), Gate::Always);
                for l1 in Level::ALL {
                    for l2 in Level::ALL {
                        let d = basis.double(first, l1, second, l2);
                        drift[d] = det[first][l1.index()] + det[second][l2.index()];
                        if l1 == Level::R && l2 == Level::R {
                            b.triplets.push((d, d, C64::new(1.0, 0.0), vdw_chan));
                        }
                        if basis.has_effective() {
                            let t = basis.triple(first, l1, second, l2);
                            let (shift, coupling) = match effective.get(p) {
                                Some(e) => (-e.effective_detuning, 0.5 * e.effective_rabi),
                                None => (0.0, 0.0),
                            };
                            drift[t] = drift[d] + shift;
                            if l1 == Level::R && l2 == Level::R {
                                b.triplets.push((t, t, C64::new(1.0, 0.0), vdw_chan));
                            }
                            b.pair(t, d, C64::new(coupling, 0.0), eff_chan);
                        }
                    }
                }
                // second excitation: atom `second` joins a single of `first` and vice versa
                for l in Level::ALL {
                    b.pair(basis.double(first, l, second, Level::I), basis.single(first, l), rabi[second][0], env_chan[second][0]);
                    b.pair(basis.double(second, l, first, Level::I), basis.single(second, l), rabi[first][0], env_chan[first][0]);
                }
                for other in Level::ALL {
                    intra(&mut b, first, &|l| basis.double(first, l, second, other));
                    intra(&mut b, second, &|l| basis.double(second, l, first, other));
                    if basis.has_effective() {
                        intra(&mut b, first, &|l| basis.triple(first, l, second, other));
                        intra(&mut b, second, &|l| basis.triple(second, l, first, other));
                    }
                }
            }
        }

        if n >= 3 && lasers[0].duration > 0.0 && lasers[0].rabi != 0.0 {
            let laser1 = Laser1 { start: lasers[0].start, duration: lasers[0].duration, rabi: lasers[0].rabi };
            for term in indirect_hamiltonian_terms(atoms, cfg, &laser1, basis)? {
                let pa = b.poly(term.envelopes.0, fits)?;
                let pb = b.poly(term.envelopes.1, fits)?;
                let c = b.channel(ChannelKind::Product(pa, pb), Gate::Laser(0));
                b.pair(term.row, term.col, term.factor, c);
            }
        }

        let mut triplets = b.triplets;
        triplets.sort_by_key(|&(r, c, _, ch)| (r, c, ch));
        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, ..) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Hamiltonian {
            basis: *basis,
            drift,
            polynomials: b.polys,
            channels: b.channels,
            row_ptr,
            cols: triplets.iter().map(|t| t.1 as u32).collect(),
            factors: triplets.iter().map(|t| t.2).collect(),
            chans: triplets.iter().map(|t| t.3 as u32).collect(),
            pulses: *pulses,
            effective,
            window: fits.window,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Channel values at `t` with the laser switches fixed to `gates`.
    pub fn channel_values(&self, t: f64, gates: [bool; 3]) -> Vec<f64> {
        let s = if self.window.1 > self.window.0 {
            (2.0 * t - self.window.0 - self.window.1) / (self.window.1 - self.window.0)
        } else {
            0.0
        };
        debug_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s), "t = {t} outside the fit window");
        let p: Vec<f64> = self.polynomials.iter().map(|p| p.eval_scaled(s)).collect();
        self.channels
            .iter()
            .map(|c| {
                if !c.gate.open(gates) {
                    return 0.0;
                }
                match c.kind {
                    ChannelKind::Constant => 1.0,
                    ChannelKind::Poly(i) => p[i],
                    ChannelKind::Product(a, b) => p[a] * p[b],
                }
            })
            .collect()
    }

    /// y = −i H x for precomputed channel values.
    pub fn apply(&self, values: &[f64], x: &[C64], y: &mut [C64], exec: Execution) {
        let chunk = if exec.is_parallel() && self.dim() > 4096 { 1024 } else { self.dim().max(1) };
        exec.for_each_chunk(y, chunk, |offset, out| {
            for (k, yk) in out.iter_mut().enumerate() {
                let r = offset + k;
                let mut acc = x[r] * self.drift[r];
                for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let v = values[self.chans[e] as usize];
                    if v != 0.0 {
                        acc += self.factors[e] * x[self.cols[e] as usize] * v;
                    }
                }
                *yk = C64::new(acc.im, -acc.re);
            }
        });
    }

    /// Sparse entries of H(t) with the pulse switches evaluated at `t`.
    pub fn entries_at(&self, t: f64) -> Vec<(usize, usize, C64)> {
        let values = self.channel_values(t, self.pulses.gates_at(t));
        let mut out: Vec<(usize, usize, C64)> =
            self.drift.iter().enumerate().map(|(i, &d)| (i, i, C64::new(d, 0.0))).collect();
        for r in 0..self.dim() {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.push((r, self.cols[e] as usize, self.factors[e] * values[self.chans[e] as usize]));
            }
        }
        out
    }

    fn channel_coeffs(&self, c: &Channel) -> Vec<f64> {
        match c.kind {
            ChannelKind::Constant => vec![1.0],
            ChannelKind::Poly(i) => self.polynomials[i].coeffs.clone(),
            ChannelKind::Product(a, b) => {
                let (pa, pb) = (&self.polynomials[a].coeffs, &self.polynomials[b].coeffs);
                let mut out = vec![0.0; pa.len() + pb.len() - 1];
                for (i, x) in pa.iter().enumerate() {
                    for (j, y) in pb.iter().enumerate() {
                        out[i + j] += x * y;
                    }
                }
                out
            }
        }
    }

    /// Grouped form H = Σ_a H_a sᵃ for fixed switches, with s the
    /// normalized fit-window time. Entry `a` lists the triplets of H_a.
    pub fn power_terms(&self, gates: [bool; 3]) -> Vec<Vec<(usize, usize, C64)>> {
        let mut terms: Vec<Vec<(usize, usize, C64)>> = vec![Vec::new()];
        for (i, &d) in self.drift.iter().enumerate() {
            terms[0].push((i, i, C64::new(d, 0.0)));
        }
        for r in 0..self.dim() {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.channels[self.chans[e] as usize];
                if !c.gate.open(gates) {
                    continue;
                }
                for (a, coef) in self.channel_coeffs(&c).into_iter().enumerate() {
                    if terms.len() <= a {
                        terms.resize(a + 1, Vec::new());
                    }
                    terms[a].push((r, self.cols[e] as usize, self.factors[e] * coef));
                }
            }
        }
        terms
    }
}
