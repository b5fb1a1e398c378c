use std::f64::consts::TAU;

use proptest::prelude::*;

use super::*;
use crate::ensemble::{FitOrders, PULSE_WINDOW};
use crate::numerics::integrate_gl;

fn cfg() -> PhysicalConfig {
    PhysicalConfig::default()
}

fn model(atoms: AtomSet, cfg: &PhysicalConfig) -> ExcitationModel {
    ExcitationModel::new(atoms, cfg, FitOrders::default(), Execution::Sequential).unwrap()
}

fn only_laser1(start: f64, duration: f64, rabi: f64) -> PulseSequence {
    PulseSequence {
        laser1: LaserPulse { start, duration, rabi },
        laser2: LaserPulse::OFF,
        laser3: LaserPulse::OFF,
    }
}

fn dense(h: &Hamiltonian, t: f64) -> Vec<Vec<C64>> {
    let n = h.dim();
    let mut m = vec![vec![C64::new(0.0, 0.0); n]; n];
    for (r, c, v) in h.entries_at(t) {
        m[r][c] += v;
    }
    m
}

#[test]
fn single_stationary_atom_two_level_block() {
    let c = cfg();
    let m = model(AtomSet::stationary(vec![[0.0; 3]]), &c);
    let h = m.hamiltonian(&c, &only_laser1(0.0, 1.0, 12.0)).unwrap();
    let d = dense(&h, 0.5);
    let (g, i) = (0, h.basis.single(0, Level::I));
    assert!((d[i][g] - C64::new(6.0, 0.0)).norm() < 1e-12);
    assert!((d[i][i].re + c.detunings[0]).abs() < 1e-12);
    let r = h.basis.single(0, Level::R);
    assert_eq!(d[r][i], C64::new(0.0, 0.0));
    assert_eq!(d[g][g], C64::new(0.0, 0.0));
}

#[test]
fn doppler_shift_enters_the_drift() {
    let c = cfg();
    let v = 0.3;
    let atoms = AtomSet::from_parts(vec![[0.2, 0.0, 0.0]], vec![[v, 0.0, 0.0]], 1.0).unwrap();
    let m = model(atoms, &c);
    let h = m.hamiltonian(&c, &PulseSequence::default()).unwrap();
    let k = c.wave_numbers();
    let d1 = c.detunings[0] - k[0] * v;
    let d2 = c.detunings[1] - k[1] * v;
    let d3 = c.detunings[2] - k[2] * v;
    assert!((h.drift[h.basis.single(0, Level::I)] + d1).abs() < 1e-12);
    assert!((h.drift[h.basis.single(0, Level::E)] + d1 + d2 - d3).abs() < 1e-12);
}

#[test]
fn pair_interaction_at_one_micron() {
    let c = cfg();
    let m = model(AtomSet::stationary(vec![[0.0; 3], [0.0, 0.0, 1.0]]), &c);
    let h = m.hamiltonian(&c, &PulseSequence::default()).unwrap();
    let rr = h.basis.double(0, Level::R, 1, Level::R);
    let d = dense(&h, 0.3);
    let shift = d[rr][rr].re - h.drift[rr];
    assert!((shift - TAU * 0.6421).abs() < 1e-9, "{shift}");
}

#[test]
fn zero_hamiltonian_is_identity() {
    let mut c = cfg();
    c.detunings = [0.0; 3];
    let m = model(AtomSet::stationary(vec![[0.0; 3], [0.0, 0.0, 5.0]]), &c);
    let pulses = PulseSequence::tied(1.0, 1.0, 0.5, [0.0; 3]);
    let mut h = m.hamiltonian(&c, &pulses).unwrap();
    h.polynomials.iter_mut().for_each(|p| p.coeffs.iter_mut().for_each(|x| *x = 0.0));
    let mut psi = StateVector::ground(m.basis);
    psi.amplitudes[3] = C64::new(0.6, 0.0);
    psi.amplitudes[0] = C64::new(0.0, 0.8);
    let out = propagate(&h, &psi, (0.0, 1.5), &PropagationOptions::default()).unwrap();
    assert_eq!(out.state.amplitudes, psi.amplitudes);
}

/// Rotating-frame two-level solution for H = [[0, Ω/2], [Ω/2, −δ]].
fn two_level(omega: f64, delta: f64, t: f64) -> (C64, C64) {
    let od = (omega * omega + delta * delta).sqrt();
    let ph = C64::from_polar(1.0, 0.5 * delta * t);
    let (s, co) = (0.5 * od * t).sin_cos();
    (ph * C64::new(co, -delta / od * s), ph * C64::new(0.0, -omega / od * s))
}

#[test]
fn detuned_two_level_matches_rabi_formula() {
    let mut c = cfg();
    c.detunings = [TAU * 2.0, 0.0, 0.0];
    let m = model(AtomSet::stationary(vec![[0.0; 3]]), &c);
    let (ts, dt, omega) = (0.3, 1.1, 9.0);
    let h = m.hamiltonian(&c, &only_laser1(ts, dt, omega)).unwrap();
    let opts = PropagationOptions { tol: 1e-12, h_max: 0.01, ..Default::default() };
    let out = propagate(&h, &StateVector::ground(m.basis), (0.0, ts + dt), &opts).unwrap();
    let (g, e) = two_level(omega, c.detunings[0], dt);
    let i = m.basis.single(0, Level::I);
    assert!((out.state.amplitudes[0] - g).norm() < 1e-8);
    assert!((out.state.amplitudes[i] - e).norm() < 1e-8);
    assert!(out.norm_drift < 1e-10);
}

#[test]
fn frame_transformations() {
    let c = cfg();
    let atoms = AtomSet::from_parts(vec![[0.1, 0.0, 0.0], [0.4, 0.2, 0.0]], vec![[0.2, 0.0, 0.0], [-0.1, 0.0, 0.0]], 1.0).unwrap();
    let m = model(atoms.clone(), &c);
    let h = m.hamiltonian(&c, &PulseSequence::default()).unwrap();
    let mut psi = StateVector::ground(m.basis);
    for (k, a) in psi.amplitudes.iter_mut().enumerate() {
        *a = C64::new((k as f64).sin(), (k as f64 * 0.7).cos());
    }
    let at0 = to_lab_frame(&psi, &h.drift).unwrap();
    assert_eq!(at0.amplitudes, psi.amplitudes);
    psi.time = 1.3;
    let lab = to_lab_frame(&psi, &h.drift).unwrap();
    assert_eq!(lab.amplitudes[0], psi.amplitudes[0]);
    assert!(matches!(to_lab_frame(&lab, &h.drift), Err(Error::Frame { .. })));
    let back = to_rotating_frame(&lab, &h.drift).unwrap();
    for (a, b) in back.amplitudes.iter().zip(&psi.amplitudes) {
        assert!((a - b).norm() < 1e-12);
    }
    let k = c.wave_numbers();
    let v = atoms.velocities[1][0];
    let sum = (c.detunings[0] - k[0] * v) + (c.detunings[1] - k[1] * v) - (c.detunings[2] - k[2] * v);
    let e = m.basis.single(1, Level::E);
    let expect = psi.amplitudes[e] * C64::from_polar(1.0, -sum * 1.3);
    assert!((lab.amplitudes[e] - expect).norm() < 1e-12);
    assert!((lab.norm_sqr() - psi.norm_sqr()).abs() < 1e-12);
}

fn random_atoms(n: usize, seed: u64) -> AtomSet {
    crate::ensemble::sample_filtered(crate::Distribution::Boltzmann, n, &cfg(), seed, 0.1).unwrap()
}

#[test]
fn hamiltonian_is_hermitian_at_random_times() {
    use rand::{Rng, SeedableRng};
    let c = cfg();
    let m = model(random_atoms(4, 2), &c);
    let h = m.hamiltonian(&c, &PulseSequence::tied(0.9, 1.0, 0.5, [30.0, 25.0, 8.0])).unwrap();
    assert!(h.basis.has_effective());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let t = rng.random::<f64>() * 1.5;
        let d = dense(&h, t);
        for r in 0..h.dim() {
            for col in 0..h.dim() {
                assert!((d[r][col] - d[col][r].conj()).norm() < 1e-12);
            }
        }
    }
    for gates in [[true, true, false], [false, false, true], [true, true, true]] {
        for term in h.power_terms(gates) {
            let mut map = std::collections::HashMap::new();
            for (r, col, v) in term {
                *map.entry((r, col)).or_insert(C64::new(0.0, 0.0)) += v;
            }
            for (&(r, col), v) in &map {
                let partner = map.get(&(col, r)).copied().unwrap_or_default();
                assert!((v - partner.conj()).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn grouped_powers_reproduce_the_operator() {
    let c = cfg();
    let m = model(random_atoms(3, 5), &c);
    let pulses = PulseSequence::tied(1.0, 1.1, 0.4, [30.0, 30.0, 8.0]);
    let h = m.hamiltonian(&c, &pulses).unwrap();
    let t = 0.7;
    let s = (2.0 * t - PULSE_WINDOW.0 - PULSE_WINDOW.1) / (PULSE_WINDOW.1 - PULSE_WINDOW.0);
    let mut grouped = vec![vec![C64::new(0.0, 0.0); h.dim()]; h.dim()];
    for (a, term) in h.power_terms(pulses.gates_at(t)).into_iter().enumerate() {
        for (r, col, v) in term {
            grouped[r][col] += v * s.powi(a as i32);
        }
    }
    let d = dense(&h, t);
    for r in 0..h.dim() {
        for col in 0..h.dim() {
            assert!((grouped[r][col] - d[r][col]).norm() < 1e-9 * (1.0 + d[r][col].norm()));
        }
    }
}

#[test]
fn blockade_suppresses_double_rydberg() {
    let c = cfg();
    let m = model(AtomSet::stationary(vec![[0.5, 0.0, 0.0], [0.5, 0.0, 0.5]]), &c);
    let pulses = PulseSequence::tied(1.0, 1.1, 0.4, [36.0, 36.0, 8.0]);
    let h = m.hamiltonian(&c, &pulses).unwrap();
    let times: Vec<f64> = (0..=150).map(|k| 0.01 * k as f64).collect();
    let opts = PropagationOptions { tol: 1e-9, record_times: times, ..Default::default() };
    let out = propagate(&h, &StateVector::ground(m.basis), (0.0, 1.5), &opts).unwrap();
    assert_eq!(out.samples.len(), 151);
    let rr = m.basis.double(0, Level::R, 1, Level::R);
    let r0 = m.basis.single(0, Level::R);
    let max_rr = out.samples.iter().map(|s| s.amplitudes[rr].norm_sqr()).fold(0.0, f64::max);
    let max_r = out.samples.iter().map(|s| s.amplitudes[r0].norm_sqr()).fold(0.0, f64::max);
    assert!(max_rr < 1e-3, "{max_rr}");
    assert!(max_r > 0.05, "single Rydberg population {max_r} shows the drive is active");
}

#[test]
fn w_target_basics() {
    let c = cfg();
    let p = PulseSequence::default();
    let one = AtomSet::stationary(vec![[0.3, 0.0, 0.0]]);
    let b1 = TruncatedBasis::new(1).unwrap();
    let w = w_state_target(&one, &c, &p, &b1, 2.0, Weighting::Rabi).unwrap();
    assert!((w.amplitudes[b1.single(0, Level::E)].norm() - 1.0).abs() < 1e-14);
    let origin = AtomSet::stationary(vec![[0.0; 3]; 4]);
    let b4 = TruncatedBasis::new(4).unwrap();
    let w = w_state_target(&origin, &c, &p, &b4, 1.0, Weighting::Uniform).unwrap();
    for n in 0..4 {
        assert!((w.amplitudes[b4.single(n, Level::E)] - C64::new(0.5, 0.0)).norm() < 1e-14);
    }
    let empty = AtomSet::stationary(Vec::new());
    assert!(matches!(w_state_target(&empty, &c, &p, &b1, 1.0, Weighting::Uniform), Err(Error::EmptyTarget)));
}

#[test]
fn rabi_weights_match_quadrature() {
    let c = cfg();
    let p = PulseSequence::tied(1.0, 1.2, 0.4, [30.0, 30.0, 8.0]);
    let atoms = AtomSet::from_parts(
        vec![[0.5, 0.0, 0.0], [0.5, 0.4, 0.1]],
        vec![[0.0, 0.0, 0.0], [0.1, -0.2, 0.15]],
        1.0,
    )
    .unwrap();
    let w = w_state_weights(&atoms, &c, &p, Weighting::Rabi).unwrap();
    let oracle = |n: usize| {
        let f12 = integrate_gl(|t| atoms.beam_factor(n, 0, t, &c) * atoms.beam_factor(n, 1, t, &c), 0.0, 1.0, 40, 8);
        let f3 = integrate_gl(|t| atoms.beam_factor(n, 2, t, &c), 1.2, 1.6, 40, 8) / 0.4;
        (f12 / c.doppler_detuning(0, atoms.velocities[n][0])).abs() * f3
    };
    assert!((w[1] / w[0] - oracle(1) / oracle(0)).abs() < 1e-10);
}

#[test]
fn fidelity_and_sectors() {
    let c = cfg();
    let atoms = AtomSet::stationary(vec![[0.0; 3], [0.2, 0.0, 0.0]]);
    let b = TruncatedBasis::new(2).unwrap();
    let w = w_state_target(&atoms, &c, &PulseSequence::default(), &b, 2.0, Weighting::Uniform).unwrap();
    assert!((fidelity(&w, &w).unwrap() - 1.0).abs() < 1e-14);
    let mut g = StateVector::ground(b);
    assert!(matches!(fidelity(&g, &w), Err(Error::Frame { .. })));
    g.frame = Frame::Lab;
    assert_eq!(fidelity(&g, &w).unwrap(), 0.0);
    assert_eq!(sector_populations(&g), SectorPopulations { ground: 1.0, single_e: 0.0, double_ee: 0.0, other: 0.0 });
    let mut half = g.clone();
    half.amplitudes[0] = C64::new(0.5f64.sqrt(), 0.0);
    half.amplitudes[b.single(1, Level::E)] = C64::new(0.0, 0.5f64.sqrt());
    let s = sector_populations(&half);
    assert!((s.ground - 0.5).abs() < 1e-15 && (s.single_e - 0.5).abs() < 1e-15);
}

#[test]
fn zero_pulses_give_zero_fidelity() {
    let c = cfg();
    let m = model(random_atoms(3, 1), &c);
    let pulses = PulseSequence::tied(1.0, 1.1, 0.4, [0.0; 3]);
    let r = m.excite(&c, &pulses, &PropagationOptions::default()).unwrap();
    let w = w_state_target(&m.atoms, &c, &pulses, &m.basis, 2.0, Weighting::Uniform).unwrap();
    assert!(fidelity(&r.state, &w).unwrap() < 1e-20);
    assert!((r.populations.ground - 1.0).abs() < 1e-12);
}

#[test]
fn phase_time_reductions() {
    let mut c = cfg();
    let p = PulseSequence::tied(1.0, 1.2, 0.4, [1.0; 3]);
    c.laser_wavelengths[2] = 1e15;
    assert!((phase_time(&p, &c) - 0.5).abs() < 1e-9);
    let c = cfg();
    // spin-echo delay pushes t_φ beyond the pulse end
    assert!(phase_time(&p, &c) > p.total_duration());
}

#[test]
fn phase_fit_needs_two_velocities() {
    let pts = [PhasePoint { amplitude: C64::new(1.0, 0.0), k_r: 0.0, k_v: 1.0 }; 3];
    assert!(matches!(phase_time_from_points(&pts), Err(Error::Fit { .. })));
}

#[test]
fn single_pulse_phase_time_is_midpoint() {
    // one detuned two-level atom per velocity; k only on laser 1
    let (ts, dt) = (0.4, 0.3);
    let mut c = cfg();
    c.detunings = [3.0, 0.0, 0.0];
    let k1 = c.wave_numbers()[0];
    let mut pts = Vec::new();
    for v in [-0.4, -0.2, 0.0, 0.1, 0.3, 0.5] {
        let atoms = AtomSet::from_parts(vec![[0.2, 0.0, 0.0]], vec![[v, 0.0, 0.0]], 1e9).unwrap();
        let m = model(atoms, &c);
        let h = m.hamiltonian(&c, &only_laser1(ts, dt, 6.0)).unwrap();
        let opts = PropagationOptions { tol: 1e-12, h_max: 0.01, ..Default::default() };
        let prop = propagate(&h, &StateVector::ground(m.basis), (0.0, ts + dt), &opts).unwrap();
        let lab = to_lab_frame(&prop.state, &h.drift).unwrap();
        pts.push(PhasePoint { amplitude: lab.amplitudes[m.basis.single(0, Level::I)], k_r: k1 * 0.2, k_v: k1 * v });
    }
    let t_phi = phase_time_from_points(&pts).unwrap();
    assert!((t_phi - (ts + 0.5 * dt)).abs() < 1e-8, "{t_phi}");
}

#[test]
fn state_csv_has_header() {
    let b = TruncatedBasis::new(2).unwrap();
    let mut buf = Vec::new();
    StateVector::ground(b).write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert!(s.starts_with("label,real,imag\nG,1e0,0e0\n"));
    assert_eq!(s.lines().count(), b.dim() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn propagation_preserves_norm(seed in 0u64..500) {
        let c = cfg();
        let m = model(random_atoms(3, seed), &c);
        let pulses = PulseSequence::tied(0.8, 0.9, 0.5, [30.0, 30.0, 8.0]);
        let tol = 1e-8;
        let r = m.excite(&c, &pulses, &PropagationOptions { tol, ..Default::default() }).unwrap();
        prop_assert!(r.norm_drift <= 10.0 * tol, "drift {}", r.norm_drift);
        let s = r.populations;
        prop_assert!((s.ground + s.single_e + s.double_ee + s.other - 1.0).abs() < 1e-6);
    }
}
