//! Three-pulse excitation of the atom set: Hamiltonian assembly, propagation,
//! frame transformation and state diagnostics.

mod hamiltonian;
mod pulses;

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

pub use hamiltonian::{Channel, ChannelKind, Gate, Hamiltonian};
pub use pulses::{LaserPulse, PulseSequence};

use crate::config::PhysicalConfig;
use crate::ensemble::{polyfit_channels, AtomSet, ChannelFits, FitOrders, PULSE_WINDOW};
use crate::error::{Error, Result};
use crate::hilbert::{BasisState, Level, TruncatedBasis};
use crate::ode::{integrate, OdeOptions, OdeStats};
use crate::par::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Rotating,
    Lab,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub basis: TruncatedBasis,
    pub amplitudes: Vec<C64>,
    pub frame: Frame,
    /// Time the amplitudes refer to (ns).
    pub time: f64,
}

impl StateVector {
    pub fn ground(basis: TruncatedBasis) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); basis.dim()];
        amplitudes[0] = C64::new(1.0, 0.0);
        StateVector { basis, amplitudes, frame: Frame::Rotating, time: 0.0 }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(C64::norm_sqr).sum()
    }

    pub fn amplitude(&self, state: &BasisState) -> Option<C64> {
        self.basis.index(state).map(|i| self.amplitudes[i])
    }

    /// Amplitudes α_n of |e_n⟩.
    pub fn single_excited(&self) -> Vec<C64> {
        (0..self.basis.n_atoms())
            .map(|n| self.amplitudes[self.basis.single(n, Level::E)])
            .collect()
    }

    /// Amplitudes α_{n,m} of |e_n e_m⟩, n < m, in pair order.
    pub fn double_excited(&self) -> Vec<C64> {
        let n = self.basis.n_atoms();
        let mut out = Vec::with_capacity(self.basis.n_pairs());
        for a in 0..n {
            for b in a + 1..n {
                out.push(self.amplitudes[self.basis.double(a, Level::E, b, Level::E)]);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "label,real,imag")?;
        for (s, a) in self.basis.states().zip(&self.amplitudes) {
            writeln!(w, "{},{:e},{:e}", s.label(), a.re, a.im)?;
        }
        Ok(())
    }
}

fn apply_frame_phase(psi: &StateVector, drift: &[f64], sign: f64) -> Result<Vec<C64>> {
    if drift.len() != psi.amplitudes.len() {
        return Err(Error::Dimension { expected: psi.amplitudes.len(), found: drift.len() });
    }
    Ok(psi
        .amplitudes
        .iter()
        .zip(drift)
        .map(|(a, d)| a * C64::from_polar(1.0, sign * d * psi.time))
        .collect())
}

/// Undoes the rotating-frame transformation at `psi.time`:
/// ψ_lab[s] = e^{i D_s t} ψ_rot[s] with D the drift diagonal.
pub fn to_lab_frame(psi: &StateVector, drift: &[f64]) -> Result<StateVector> {
    if psi.frame != Frame::Rotating {
        return Err(Error::Frame { expected: Frame::Rotating, found: psi.frame });
    }
    Ok(StateVector { amplitudes: apply_frame_phase(psi, drift, 1.0)?, frame: Frame::Lab, ..psi.clone() })
}

pub fn to_rotating_frame(psi: &StateVector, drift: &[f64]) -> Result<StateVector> {
    if psi.frame != Frame::Lab {
        return Err(Error::Frame { expected: Frame::Lab, found: psi.frame });
    }
    Ok(StateVector { amplitudes: apply_frame_phase(psi, drift, -1.0)?, frame: Frame::Rotating, ..psi.clone() })
}

#[derive(Clone, Debug)]
pub struct PropagationOptions {
    /// Per-step relative error bound.
    pub tol: f64,
    pub h_max: f64,
    /// Times at which intermediate states are recorded.
    pub record_times: Vec<f64>,
    pub exec: Execution,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions { tol: 1e-7, h_max: 0.05, record_times: Vec::new(), exec: Execution::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub state: StateVector,
    /// States at the requested record times, rotating frame.
    pub samples: Vec<StateVector>,
    pub stats: OdeStats,
    /// Largest |‖ψ‖² − ‖ψ₀‖²| seen at segment ends.
    pub norm_drift: f64,
}

/// Solves i∂ₜψ = H(t)ψ over `window`, segmenting at laser switching times.
pub fn propagate(
    h: &Hamiltonian,
    psi0: &StateVector,
    window: (f64, f64),
    opts: &PropagationOptions,
) -> Result<Propagation> {
    if psi0.frame != Frame::Rotating {
        return Err(Error::Frame { expected: Frame::Rotating, found: psi0.frame });
    }
    if psi0.amplitudes.len() != h.dim() {
        return Err(Error::Dimension { expected: h.dim(), found: psi0.amplitudes.len() });
    }
    if !(window.1 >= window.0) {
        return Err(Error::Interval { start: window.0, end: window.1 });
    }
    // local control below the accumulated drift budget
    let ode = OdeOptions { rtol: 0.05 * opts.tol, atol: 0.05 * opts.tol, h_max: opts.h_max, ..Default::default() };
    let norm0 = psi0.norm_sqr();
    let mut y = psi0.amplitudes.clone();
    let mut stats = OdeStats::default();
    let mut norm_drift: f64 = 0.0;
    let mut record: Vec<f64> = opts.record_times.clone();
    record.sort_by(f64::total_cmp);
    let mut samples = Vec::with_capacity(record.len());
    let mut next = 0;
    while next < record.len() && record[next] <= window.0 {
        samples.push(StateVector { time: record[next], amplitudes: y.clone(), ..psi0.clone() });
        next += 1;
    }
    let points = h.pulses.breakpoints(window);
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let gates = h.pulses.gates_at(0.5 * (a + b));
        let (yb, st) = integrate(
            |t, x, dx| {
                let v = h.channel_values(t, gates);
                h.apply(&v, x, dx, opts.exec);
            },
            a,
            &y,
            b,
            &ode,
            |step| {
                while next < record.len() && record[next] <= step.t1() && record[next] <= window.1 {
                    samples.push(StateVector { time: record[next], amplitudes: step.eval(record[next]), ..psi0.clone() });
                    next += 1;
                }
            },
        )?;
        y = yb;
        stats.merge(st);
        let norm: f64 = y.iter().map(C64::norm_sqr).sum();
        norm_drift = norm_drift.max((norm - norm0).abs());
    }
    Ok(Propagation {
        state: StateVector { basis: psi0.basis, amplitudes: y, frame: Frame::Rotating, time: window.1 },
        samples,
        stats,
        norm_drift,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Rabi,
}

/// Target |W(t_W)⟩ = Σ_n w_n e^{i k₀ x_n(t_W)} |e_n⟩ in the lab frame.
pub fn w_state_target(
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    pulses: &PulseSequence,
    basis: &TruncatedBasis,
    t_w: f64,
    weighting: Weighting,
) -> Result<StateVector> {
    if atoms.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if !(t_w >= 0.0) {
        return Err(Error::Range(format!("t_W must be non-negative, got {t_w}")));
    }
    if basis.n_atoms() != atoms.len() {
        return Err(Error::Dimension { expected: basis.n_atoms(), found: atoms.len() });
    }
    let weights = w_state_weights(atoms, cfg, pulses, weighting)?;
    let k0 = cfg.k0();
    let mut amplitudes = vec![C64::new(0.0, 0.0); basis.dim()];
    for (n, w) in weights.iter().enumerate() {
        let x = atoms.position_at(n, t_w)[0];
        amplitudes[basis.single(n, Level::E)] = C64::from_polar(*w, k0 * x);
    }
    Ok(StateVector { basis: *basis, amplitudes, frame: Frame::Lab, time: t_w })
}

/// Normalized real weights w_n.
pub fn w_state_weights(
    atoms: &AtomSet,
    cfg: &PhysicalConfig,
    pulses: &PulseSequence,
    weighting: Weighting,
) -> Result<Vec<f64>> {
    let n = atoms.len();
    if n == 0 {
        return Err(Error::EmptyTarget);
    }
    let raw: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0; n],
        Weighting::Rabi => {
            let l1 = pulses.laser1;
            let l3 = pulses.laser3;
            let w12 = (l1.start, l1.end().max(l1.start));
            let w3 = (l3.start, l3.end().max(l3.start));
            (0..n)
                .map(|a| {
                    let d1 = cfg.doppler_detuning(0, atoms.velocities[a][0]);
                    let f12 = atoms.mean_beam_factor(a, &[0, 1], w12, cfg);
                    let f3 = atoms.mean_beam_factor(a, &[2], w3, cfg);
                    (f12 / d1).abs() * f3
                })
                .collect()
        }
    };
    let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::EmptyTarget);
    }
    Ok(raw.into_iter().map(|w| w / norm).collect())
}

/// |⟨target|ψ⟩|².
pub fn fidelity(psi: &StateVector, target: &StateVector) -> Result<f64> {
    for s in [psi, target] {
        if s.frame != Frame::Lab {
            return Err(Error::Frame { expected: Frame::Lab, found: s.frame });
        }
    }
    if psi.amplitudes.len() != target.amplitudes.len() {
        return Err(Error::Dimension { expected: target.amplitudes.len(), found: psi.amplitudes.len() });
    }
    let overlap: C64 = target.amplitudes.iter().zip(&psi.amplitudes).map(|(t, p)| t.conj() * p).sum();
    Ok(overlap.norm_sqr().min(1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SectorPopulations {
    pub ground: f64,
    pub single_e: f64,
    pub double_ee: f64,
    pub other: f64,
}

pub fn sector_populations(psi: &StateVector) -> SectorPopulations {
    let mut s = SectorPopulations::default();
    for (state, a) in psi.basis.states().zip(&psi.amplitudes) {
        let p = a.norm_sqr();
        match state {
            BasisState::Ground => s.ground += p,
            BasisState::Single { level: Level::E, .. } => s.single_e += p,
            BasisState::Double { levels: (Level::E, Level::E), .. } => s.double_ee += p,
            _ => s.other += p,
        }
    }
    s
}

/// Analytic phase time from the pulse timing: the velocity-dependent phase
/// of |e⟩ is k₀ v t_φ with t_φ = Σ_j σ_j k_j (2t_{s,j} + Δt_j) / (2k₀),
/// σ = (+, +, −).
pub fn phase_time(pulses: &PulseSequence, cfg: &PhysicalConfig) -> f64 {
    let k = cfg.wave_numbers();
    let sigma = [1.0, 1.0, -1.0];
    let l = pulses.lasers();
    (0..3).map(|j| sigma[j] * k[j] * (2.0 * l[j].start + l[j].duration)).sum::<f64>() / (2.0 * cfg.k0())
}

/// Point for [`phase_time_from_points`]: amplitude, k·R(0) and k·v.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub amplitude: C64,
    pub k_r: f64,
    pub k_v: f64,
}

/// Least-squares slope t_φ of arg(α) − k·R(0) against k·v, weighted by |α|².
pub fn phase_time_from_points(points: &[PhasePoint]) -> Result<f64> {
    let pts: Vec<&PhasePoint> = points.iter().filter(|p| p.amplitude.norm_sqr() > 1e-24).collect();
    let fit_err = |reason: &str| Error::Fit { channel: String::from("phase time"), reason: reason.to_string() };
    let mut kv: Vec<f64> = pts.iter().map(|p| p.k_v).collect();
    kv.sort_by(f64::total_cmp);
    kv.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-12));
    if kv.len() < 2 {
        return Err(fit_err("fewer than two distinct velocities"));
    }
    let phi: Vec<f64> = pts.iter().map(|p| p.amplitude.arg() - p.k_r).collect();
    let weight: Vec<f64> = pts.iter().map(|p| p.amplitude.norm_sqr()).collect();
    let coherence = |t: f64| -> C64 {
        pts.iter()
            .zip(&phi)
            .zip(&weight)
            .map(|((p, f), w)| C64::from_polar(*w, f - t * p.k_v))
            .sum()
    };
    // coarse search keeps the unwrap on the right branch
    let span = kv[kv.len() - 1] - kv[0];
    let dt = (0.1 / span).min(0.01);
    let mut best = (0.0, -1.0);
    let mut t = -20.0;
    while t <= 20.0 {
        let c = coherence(t).norm();
        if c > best.1 {
            best = (t, c);
        }
        t += dt;
    }
    let t_c = best.0;
    let c0 = coherence(t_c).arg();
    let resid: Vec<f64> = pts
        .iter()
        .zip(&phi)
        .map(|(p, f)| {
            let r = f - c0 - t_c * p.k_v;
            r - 2.0 * PI * (r / (2.0 * PI)).round()
        })
        .collect();
    let sw: f64 = weight.iter().sum();
    let mx = pts.iter().zip(&weight).map(|(p, w)| w * p.k_v).sum::<f64>() / sw;
    let my = resid.iter().zip(&weight).map(|(r, w)| w * r).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((p, r), w) in pts.iter().zip(&resid).zip(&weight) {
        sxx += w * (p.k_v - mx).powi(2);
        sxy += w * (p.k_v - mx) * (r - my);
    }
    Ok(t_c + sxy / sxx)
}

/// Ensemble phase time of the |e_n⟩ amplitudes of a lab-frame state.
pub fn phase_time_from_state(psi: &StateVector, atoms: &AtomSet, cfg: &PhysicalConfig) -> Result<f64> {
    if psi.frame != Frame::Lab {
        return Err(Error::Frame { expected: Frame::Lab, found: psi.frame });
    }
    let k0 = cfg.k0();
    let points: Vec<PhasePoint> = psi
        .single_excited()
        .into_iter()
        .enumerate()
        .map(|(n, a)| PhasePoint {
            amplitude: a,
            k_r: k0 * atoms.positions[n][0],
            k_v: k0 * atoms.velocities[n][0],
        })
        .collect();
    phase_time_from_points(&points)
}

/// Per-sample cache of everything that does not depend on the pulses.
#[derive(Clone, Debug)]
pub struct ExcitationModel {
    pub atoms: AtomSet,
    pub basis: TruncatedBasis,
    pub fits: ChannelFits,
}

#[derive(Clone, Debug)]
pub struct ExcitationResult {
    /// Lab-frame state at t₀.
    pub state: StateVector,
    pub populations: SectorPopulations,
    pub norm_drift: f64,
    pub stats: OdeStats,
}

impl ExcitationModel {
    pub fn new(atoms: AtomSet, cfg: &PhysicalConfig, orders: FitOrders, exec: Execution) -> Result<Self> {
        let basis = TruncatedBasis::new(atoms.len())?;
        let fits = polyfit_channels(&atoms, cfg, PULSE_WINDOW, orders, exec)?;
        Ok(ExcitationModel { atoms, basis, fits })
    }

    pub fn hamiltonian(&self, cfg: &PhysicalConfig, pulses: &PulseSequence) -> Result<Hamiltonian> {
        Hamiltonian::assemble(&self.atoms, cfg, pulses, &self.basis, &self.fits)
    }

    /// Propagates |G⟩ over [0, t₀] and returns the lab-frame final state.
    pub fn excite(&self, cfg: &PhysicalConfig, pulses: &PulseSequence, opts: &PropagationOptions) -> Result<ExcitationResult> {
        let h = self.hamiltonian(cfg, pulses)?;
        let prop = propagate(&h, &StateVector::ground(self.basis), (0.0, pulses.total_duration()), opts)?;
        let state = to_lab_frame(&prop.state, &h.drift)?;
        Ok(ExcitationResult {
            populations: sector_populations(&state),
            state,
            norm_drift: prop.norm_drift,
            stats: prop.stats,
        })
    }
}

#[cfg(test)]
mod tests;
