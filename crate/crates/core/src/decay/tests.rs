use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ensemble::AtomSet;
use crate::numerics::{integrate_gl, sinc};

fn cfg() -> PhysicalConfig {
    PhysicalConfig::default()
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_atoms(n: usize, seed: u64, moving: bool) -> AtomSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    let vel = (0..n)
        .map(|_| {
            if moving {
                std::array::from_fn(|_| 0.4 * rng.random::<f64>() - 0.2)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    let mut atoms = AtomSet::from_parts(pos, vel, 1.0).unwrap();
    if !moving {
        atoms.wall_times = vec![f64::INFINITY; n];
    }
    atoms
}

fn random_amplitudes(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let v: Vec<C64> = (0..n).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let norm = v.iter().map(C64::norm_sqr).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

fn opts() -> DecayOptions {
    DecayOptions { tol: 1e-11, ..Default::default() }
}

#[test]
fn single_atom_decays_exponentially() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = AtomSet::stationary(vec![[0.5, 0.0, 0.0]]);
    let traj = decay_single(&[c(0.6, 0.8)], &atoms, &cfg, (1.5, 1.5 + 5.0 / g), &opts()).unwrap();
    for t in traj.uniform_times(1.0) {
        let p = traj.population_at(t).unwrap();
        let exact = (-g * (t - 1.5)).exp();
        assert!((p - exact).abs() <= 1e-8 * exact, "t = {t}: {p} vs {exact}");
    }
    let rate = emission_rate(&traj, &[1.5, 10.0, 40.0]).unwrap();
    for (t, r) in rate.times.iter().zip(&rate.values) {
        assert!((r - (-g * (t - 1.5)).exp()).abs() < 1e-8);
    }
}

#[test]
fn dicke_pair_limits() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = AtomSet::stationary(vec![[0.3, 0.1, 0.0]; 2]);
    let window = (0.0, 2.0 / g);
    let sym = decay_single(&[c(FRAC_1_SQRT_2, 0.0); 2], &atoms, &cfg, window, &opts()).unwrap();
    let anti = decay_single(&[c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)], &atoms, &cfg, window, &opts()).unwrap();
    for t in sym.uniform_times(2.0) {
        let p = sym.population_at(t).unwrap();
        assert!((p - (-2.0 * g * t).exp()).abs() < 1e-8);
        assert!((anti.population_at(t).unwrap() - 1.0).abs() < 1e-10);
    }
    let r = emission_rate(&sym, &[0.0]).unwrap();
    assert!((r.values[0] - 2.0).abs() < 1e-12);
}

#[test]
fn population_is_monotone_for_moving_atoms() {
    let cfg = cfg();
    let atoms = random_atoms(12, 4, true);
    let traj = decay_single(&random_amplitudes(12, 4), &atoms, &cfg, (1.0, 12.0), &opts()).unwrap();
    let mut last = f64::INFINITY;
    for t in traj.uniform_times(0.05) {
        let p = traj.population_at(t).unwrap();
        assert!(p <= last + 1e-12);
        last = p;
    }
}

#[test]
fn wall_hit_freezes_the_amplitude() {
    let cfg = cfg();
    let atoms = AtomSet::from_parts(vec![[0.2, 0.0, 0.0], [0.2, 0.0, 0.0]], vec![[-0.1, 0.0, 0.0], [0.0; 3]], 1.0).unwrap();
    assert!((atoms.wall_times[0] - 2.0).abs() < 1e-12);
    let traj = decay_single(&[c(FRAC_1_SQRT_2, 0.0); 2], &atoms, &cfg, (1.0, 8.0), &opts()).unwrap();
    assert_eq!(traj.breakpoints, vec![1.0, 2.0, 8.0]);
    let at_wall = traj.amplitudes_at(2.0).unwrap()[0];
    let late = traj.amplitudes_at(8.0).unwrap();
    assert!((late[0] - at_wall).norm() < 1e-12);
    let g = cfg.gamma();
    let a1 = traj.amplitudes_at(2.0).unwrap()[1];
    assert!((late[1].norm() - a1.norm() * (-0.5 * g * 6.0).exp()).abs() < 1e-9);
    assert!((traj.lost_to_walls(8.0).unwrap() - at_wall.norm_sqr()).abs() < 1e-12);
    assert_eq!(traj.lost_to_walls(1.5).unwrap(), 0.0);
}

#[test]
fn window_must_be_ordered() {
    let atoms = AtomSet::stationary(vec![[0.0; 3]]);
    assert!(matches!(
        decay_single(&[c(1.0, 0.0)], &atoms, &cfg(), (2.0, 1.0), &opts()),
        Err(Error::Interval { .. })
    ));
    assert!(matches!(
        decay_double(&[c(1.0, 0.0)], &AtomSet::stationary(vec![[0.0; 3]; 3]), &cfg(), (0.0, 1.0), &opts()),
        Err(Error::Index(_))
    ));
}

#[test]
fn far_pair_double_decays_at_twice_gamma() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = AtomSet::stationary(vec![[0.0; 3], [0.0, 400.0, 0.0]]);
    let traj = decay_double(&[c(0.0, 1.0)], &atoms, &cfg, (0.0, 60.0), &opts()).unwrap();
    for t in traj.uniform_times(5.0) {
        assert!((traj.population_at(t).unwrap() - (-2.0 * g * t).exp()).abs() < 1e-8);
    }
}

#[test]
fn coincident_triple_double_decays_at_four_gamma() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = AtomSet::stationary(vec![[0.4, 0.0, 0.0]; 3]);
    let a = 1.0 / 3f64.sqrt();
    let traj = decay_double(&[c(a, 0.0); 3], &atoms, &cfg, (0.0, 30.0), &opts()).unwrap();
    for t in traj.uniform_times(3.0) {
        assert!((traj.population_at(t).unwrap() - (-4.0 * g * t).exp()).abs() < 1e-8);
    }
}

#[test]
fn empty_double_stays_empty() {
    let cfg = cfg();
    let atoms = random_atoms(5, 1, true);
    let traj = decay_double(&[c(0.0, 0.0); 10], &atoms, &cfg, (1.0, 20.0), &opts()).unwrap();
    assert!(traj.final_amplitudes().iter().all(|a| *a == c(0.0, 0.0)));
    let r = second_photon_rate(&traj, &IndependentDecay, &RateOptions::default()).unwrap();
    assert!(r.values.iter().all(|&v| v == 0.0));
}

#[test]
fn kernel_integrates_to_sinc() {
    let k = cfg().k_emission();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (dp, dq) = (4.0 * rng.random::<f64>() - 2.0, 3.0 * rng.random::<f64>());
        let re = integrate_gl(|th| 0.5 * th.sin() * kernel_value(k, dp, dq, th).re, 0.0, PI, 64, 12);
        let im = integrate_gl(|th| 0.5 * th.sin() * kernel_value(k, dp, dq, th).im, 0.0, PI, 64, 12);
        let exact = sinc(k * dp.hypot(dq));
        assert!((re - exact).abs() <= 1e-6 * exact.abs() + 1e-12, "{re} vs {exact}");
        assert!(im.abs() < 1e-12);
    }
}

#[test]
fn single_atom_profile_is_isotropic() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = AtomSet::stationary(vec![[0.5, 0.2, 0.1]]);
    let traj = decay_single(&[c(1.0, 0.0)], &atoms, &cfg, (1.5, 61.5), &opts()).unwrap();
    let prof = angular_density(&traj, &AngularOptions { panel: 0.5, ..Default::default() }).unwrap();
    let emitted = 1.0 - (-g * 60.0).exp();
    for (th, p) in prof.thetas.iter().zip(&prof.density[0]) {
        assert!((p - 0.5 * th.sin() * emitted).abs() < 1e-9);
    }
    assert!((prof.total(0) - emitted).abs() < 1e-8);
    assert!((prof.cone_population(PI).unwrap() - prof.total(0)).abs() < 1e-15);
    let cone = prof.cone_population(PI / 6.0).unwrap();
    let expect = 0.5 * (1.0 - (PI / 6.0).cos()) * emitted;
    assert!((cone - expect).abs() < 1e-6, "{cone} vs {expect}");
    assert!(matches!(prof.cone_population(4.0), Err(Error::Range(_))));
}

#[test]
fn cone_interpolates_between_grid_points() {
    let thetas = theta_grid(91).unwrap();
    let prof = AngularProfile {
        density: vec![thetas.iter().map(|t| 0.5 * t.sin()).collect()],
        thetas,
        times: vec![0.0],
    };
    for deg in [10.0f64, 30.0, 31.3, 90.0, 179.5] {
        let th = deg.to_radians();
        let exact = 0.5 * (1.0 - th.cos());
        assert!((prof.cone(0, th).unwrap() - exact).abs() < 5e-5);
    }
}

#[test]
fn pairwise_and_azimuthal_kernels_agree() {
    let cfg = cfg();
    let atoms = random_atoms(10, 8, true);
    let traj = decay_single(&random_amplitudes(10, 8), &atoms, &cfg, (1.0, 4.0), &opts()).unwrap();
    let base = AngularOptions { n_theta: 61, checkpoints: vec![2.0, 4.0], ..Default::default() };
    let a = angular_density(&traj, &AngularOptions { method: KernelMethod::Pairwise, ..base.clone() }).unwrap();
    let b = angular_density(&traj, &AngularOptions { method: KernelMethod::Azimuthal, ..base }).unwrap();
    assert_eq!(a.times, vec![2.0, 4.0]);
    for (ra, rb) in a.density.iter().zip(&b.density) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn profile_conserves_population() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = random_atoms(8, 21, false);
    let traj = decay_single(&random_amplitudes(8, 21), &atoms, &cfg, (1.5, 1.5 + 3.0 / g), &opts()).unwrap();
    let cps = traj.uniform_times(10.0);
    let prof = angular_density(&traj, &AngularOptions { panel: 0.5, checkpoints: cps.clone(), ..Default::default() }).unwrap();
    for (i, &t) in prof.times.iter().enumerate() {
        let lhs = prof.total(i) + traj.population_at(t).unwrap();
        assert!((lhs - 1.0).abs() < 1e-6, "t = {t}: {lhs}");
        for &p in &prof.density[i] {
            assert!(p >= -1e-9);
        }
    }
}

#[test]
fn rate_matches_profile_derivative() {
    let cfg = cfg();
    let atoms = random_atoms(6, 3, true);
    let traj = decay_single(&random_amplitudes(6, 3), &atoms, &cfg, (1.0, 2.2), &opts()).unwrap();
    let (t, h) = (1.6, 1e-3);
    let prof = angular_density(
        &traj,
        &AngularOptions { n_theta: 401, panel: 0.02, order: 6, checkpoints: vec![t - h, t + h], ..Default::default() },
    )
    .unwrap();
    let deriv = (prof.total(1) - prof.total(0)) / (2.0 * h) / traj.gamma;
    let rate = emission_rate(&traj, &[t]).unwrap().values[0] * traj.initial_population();
    assert!((deriv - rate).abs() < 1e-5 * rate.abs().max(1e-3), "{deriv} vs {rate}");
}

#[test]
fn single_pair_first_photon_is_isotropic() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = AtomSet::stationary(vec![[0.1, 0.0, 0.0], [0.6, 0.3, 0.0]]);
    let traj = decay_double(&[c(1.0, 0.0)], &atoms, &cfg, (0.0, 20.0), &opts()).unwrap();
    let prof = first_photon_density(&traj, &AngularOptions { n_theta: 31, panel: 0.5, ..Default::default() }).unwrap();
    let emitted = 2.0 * 0.5 * (1.0 - (-2.0 * g * 20.0).exp());
    for (th, p) in prof.thetas.iter().zip(&prof.density[0]) {
        assert!((p - 0.5 * th.sin() * emitted).abs() < 1e-9, "{p}");
    }
}

#[test]
fn first_photon_density_respects_budget() {
    let cfg = cfg();
    let atoms = random_atoms(6, 2, false);
    let traj = decay_double(&random_amplitudes(15, 2), &atoms, &cfg, (0.0, 1.0), &opts()).unwrap();
    let err = first_photon_density(&traj, &AngularOptions { budget: Some(1e3), ..Default::default() });
    assert!(matches!(err, Err(Error::ResourceBudget { .. })));
    assert!(first_photon_density(&traj, &AngularOptions { n_theta: 11, budget: Some(1e9), ..Default::default() }).is_ok());
}

#[test]
fn first_photon_population_matches_double_outflow() {
    // ∫p₂ dθ = ∫ Γ A dt with A the outflow of the pair population
    let cfg = cfg();
    let atoms = random_atoms(5, 9, false);
    let traj = decay_double(&random_amplitudes(10, 9), &atoms, &cfg, (0.0, 10.0), &opts()).unwrap();
    let prof = first_photon_density(&traj, &AngularOptions { n_theta: 181, panel: 0.5, ..Default::default() }).unwrap();
    let lost = 1.0 - traj.population_at(10.0).unwrap();
    assert!((prof.total(0) - lost).abs() < 1e-6, "{} vs {lost}", prof.total(0));
}

#[test]
fn far_pair_second_photon_rate() {
    let cfg = cfg();
    let g = cfg.gamma();
    let atoms = AtomSet::stationary(vec![[0.0; 3], [0.0, 500.0, 0.0]]);
    let traj = decay_double(&[c(1.0, 0.0)], &atoms, &cfg, (0.0, 60.0), &opts()).unwrap();
    let r = second_photon_rate(&traj, &IndependentDecay, &RateOptions { panel: 0.1, order: 4 }).unwrap();
    for (t, v) in r.times.iter().zip(&r.values) {
        let exact = 2.0 * (-g * t).exp() * (1.0 - (-g * t).exp());
        assert!((v - exact).abs() < 1e-8, "t = {t}: {v} vs {exact}");
    }
    let (tp, _) = r.refined_peak().unwrap();
    assert!((tp - LN_2 / g).abs() < 1e-3);
}

fn ensemble(n: usize, seed: u64) -> ExcitedEnsemble {
    ExcitedEnsemble { atoms: random_atoms(n, seed, true), amplitudes: random_amplitudes(n, seed) }
}

#[test]
fn grouping() {
    let samples: Vec<ExcitedEnsemble> = (0..100).map(|s| ensemble(10, s)).collect();
    assert_eq!(group_samples(&samples, 1).unwrap(), samples);
    let groups = group_samples(&samples, 10).unwrap();
    assert_eq!(groups.len(), 10);
    for (g, chunk) in groups.iter().zip(samples.chunks(10)) {
        assert_eq!(g.atoms.len(), 100);
        let p: f64 = g.amplitudes.iter().map(C64::norm_sqr).sum();
        let mean: f64 = chunk.iter().map(|s| s.amplitudes.iter().map(C64::norm_sqr).sum::<f64>()).sum::<f64>() / 10.0;
        assert!((p - mean).abs() < 1e-12);
        assert_eq!(g.atoms.positions[10], chunk[1].atoms.positions[0]);
    }
    assert!(matches!(group_samples(&samples, 7), Err(Error::Grouping { samples: 100, group_size: 7 })));
}

#[test]
fn csv_headers() {
    let r = RateSeries { times: vec![0.0, 1.0], values: vec![1.0, 0.5] };
    let mut buf = Vec::new();
    r.write_csv(&mut buf, 3, true).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert!(s.starts_with("time_ns,rate_per_gamma,ensemble_id\n0e0,1e0,3\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn double_population_never_increases(seed in 0u64..1000) {
        let cfg = cfg();
        let atoms = random_atoms(5, seed, true);
        let traj = decay_double(&random_amplitudes(10, seed), &atoms, &cfg, (1.0, 6.0), &opts()).unwrap();
        let mut last = f64::INFINITY;
        for t in traj.uniform_times(0.1) {
            let p = traj.population_at(t).unwrap();
            prop_assert!(p <= last + 1e-12);
            last = p;
        }
    }

    #[test]
    fn conservation_before_walls(seed in 0u64..1000) {
        let cfg = cfg();
        let atoms = random_atoms(6, seed, true);
        let first_wall = atoms.wall_times.iter().copied().fold(f64::INFINITY, f64::min);
        let end = first_wall.min(6.0);
        prop_assume!(end > 1.2);
        let traj = decay_single(&random_amplitudes(6, seed), &atoms, &cfg, (1.0, end), &opts()).unwrap();
        let prof = angular_density(&traj, &AngularOptions { n_theta: 121, panel: 0.05, ..Default::default() }).unwrap();
        let lhs = prof.total(0) + traj.population_at(end).unwrap();
        prop_assert!((lhs - 1.0).abs() < 1e-6, "{}", lhs);
    }
}

#[test]
fn profile_csv_round_trip() {
    let atoms = random_atoms(4, 11, true);
    let amps = vec![c(0.5, 0.0); 4];
    let traj = decay_single(&amps, &atoms, &cfg(), (0.0, 2.0), &DecayOptions::default()).unwrap();
    let opts = AngularOptions { n_theta: 21, checkpoints: vec![1.0, 2.0], ..Default::default() };
    let a = angular_density(&traj, &opts).unwrap();
    let mut buf = Vec::new();
    a.write_csv(&mut buf, 3, true).unwrap();
    a.write_csv(&mut buf, 7, false).unwrap();
    let back = AngularProfile::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!((back[0].0, back[1].0), (3, 7));
    for (_, p) in &back {
        assert_eq!(p.times, a.times);
        assert_eq!(p.thetas.len(), a.thetas.len());
        for (x, y) in p.density.iter().flatten().zip(a.density.iter().flatten()) {
            assert_eq!(x, y);
        }
        assert!((p.total(1) - a.total(1)).abs() < 1e-15);
    }
    assert!(AngularProfile::read_csv("h\n0,0,1,0\n0,0,1,1\n0,0,1,0\n".as_bytes()).is_err());
}
