//! End-to-end runs: excitation of sample sets, grouping, single and double
//! decay, and the derived emission observables. Also the scans over ideal
//! W states.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::config::PhysicalConfig;
use crate::decay::{
    angular_density, decay_double, decay_single, emission_rate, first_photon_density, group_samples,
    second_photon_rate, AngularOptions, AngularProfile, DecayOptions, ExcitedEnsemble, IndependentDecay, RateOptions,
    RateSeries,
};
use crate::ensemble::{sample_filtered, AtomSet, Distribution, FitOrders};
use crate::error::{Error, Result};
use crate::excitation::{
    fidelity, phase_time_from_state, w_state_target, ExcitationModel, PropagationOptions,
    PulseSequence, SectorPopulations, Weighting,
};
use crate::numerics::linspace;
use crate::par::Execution;
use crate::seeds;

/// Stage identifiers for [`seeds::derive`].
pub mod stage {
    pub const SAMPLE: u64 = 1;
    pub const OPTIMIZE: u64 = 2;
    pub const TW_SCAN: u64 = 3;
    pub const SCALING: u64 = 4;
}

/// 30° forward cone.
pub const DEFAULT_CONE: f64 = PI / 6.0;

fn stage_err(stage: &str, e: Error) -> Error {
    Error::Stage { stage: stage.to_string(), source: Box::new(e) }
}

/// Draws `count` filtered samples with seeds derived from `master`.
pub fn draw_samples(
    dist: Distribution,
    count: usize,
    atoms: usize,
    cfg: &PhysicalConfig,
    master: u64,
    stage_id: u64,
    threshold: f64,
    exec: Execution,
) -> Result<Vec<AtomSet>> {
    exec.map_range(count, |i| sample_filtered(dist, atoms, cfg, seeds::derive(master, stage_id, i as u64), threshold))
        .into_iter()
        .collect()
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub distribution: Distribution,
    pub samples: usize,
    pub atoms: usize,
    pub group_size: usize,
    pub seed: u64,
    /// Beam-overlap threshold of the atom filter.
    pub threshold: f64,
    pub pulses: PulseSequence,
    /// W-state time of the fidelity reported per sample (ns).
    pub t_w: f64,
    /// Decay time after the pulses (ns).
    pub decay_time: f64,
    /// Spacing of the emission-rate series (ns).
    pub rate_step: f64,
    pub cone_angle: f64,
    /// Whether the double-excitation sector is decayed as well.
    pub doubles: bool,
    pub angular: AngularOptions,
    pub propagation: PropagationOptions,
    pub decay: DecayOptions,
    pub orders: FitOrders,
    pub exec: Execution,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            distribution: Distribution::Boltzmann,
            samples: 10,
            atoms: 20,
            group_size: 5,
            seed: 1,
            threshold: 0.1,
            pulses: PulseSequence::default(),
            t_w: 2.0,
            decay_time: 10.0,
            rate_step: 0.05,
            cone_angle: DEFAULT_CONE,
            doubles: true,
            angular: AngularOptions::default(),
            propagation: PropagationOptions::default(),
            decay: DecayOptions::default(),
            orders: FitOrders::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub populations: SectorPopulations,
    pub fidelity: f64,
    /// Ensemble phase time; `None` when the fit is undetermined.
    pub phase_time: Option<f64>,
    pub norm_drift: f64,
}

impl SampleRecord {
    pub const CSV_HEADER: &'static str =
        "sample,seed,ground,single_e,double_ee,other,fidelity,phase_time_ns,norm_drift";
}

/// Summary of one decayed ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub id: usize,
    pub n_atoms: usize,
    pub initial: f64,
    /// Emitted population ∫₀^π p dθ at the end of the window.
    pub emitted: f64,
    /// Emitted population inside the forward cone.
    pub cone: f64,
    pub remaining: f64,
    pub lost_to_walls: f64,
    pub peak_time: f64,
    pub peak_rate: f64,
}

impl EnsembleSummary {
    pub const CSV_HEADER: &'static str =
        "ensemble_id,n_atoms,initial,emitted,cone,remaining,lost_to_walls,peak_time_ns,peak_rate_per_gamma";

    fn write_row<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.id,
            self.n_atoms,
            self.initial,
            self.emitted,
            self.cone,
            self.remaining,
            self.lost_to_walls,
            self.peak_time,
            self.peak_rate
        )?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SingleResult {
    pub summary: EnsembleSummary,
    pub profile: AngularProfile,
    pub rate: RateSeries,
}

#[derive(Clone, Debug)]
pub struct DoubleResult {
    pub summary: EnsembleSummary,
    pub profile: AngularProfile,
    pub first_rate: RateSeries,
    pub second_rate: RateSeries,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub t0: f64,
    pub samples: Vec<SampleRecord>,
    pub singles: Vec<SingleResult>,
    pub doubles: Vec<DoubleResult>,
}

struct Excited {
    record: SampleRecord,
    single: ExcitedEnsemble,
    pairs: Vec<C64>,
}

fn excite_sample(
    index: usize,
    atoms: AtomSet,
    cfg: &PhysicalConfig,
    opts: &PipelineOptions,
    inner: Execution,
) -> Result<Excited> {
    let seed = atoms.seed;
    let model = ExcitationModel::new(atoms, cfg, opts.orders, inner)?;
    let prop = PropagationOptions { exec: inner, ..opts.propagation.clone() };
    let res = model.excite(cfg, &opts.pulses, &prop)?;
    let target = w_state_target(&model.atoms, cfg, &opts.pulses, &model.basis, opts.t_w, Weighting::Rabi)?;
    let record = SampleRecord {
        index,
        seed,
        populations: res.populations,
        fidelity: fidelity(&res.state, &target)?,
        phase_time: phase_time_from_state(&res.state, &model.atoms, cfg).ok(),
        norm_drift: res.norm_drift,
    };
    Ok(Excited {
        record,
        single: ExcitedEnsemble { amplitudes: res.state.single_excited(), atoms: model.atoms },
        pairs: res.state.double_excited(),
    })
}

/// Decays one single-excitation ensemble from `window.0` and summarizes the
/// emission.
pub fn summarize_single(
    id: usize,
    atoms: &AtomSet,
    amplitudes: &[C64],
    cfg: &PhysicalConfig,
    window: (f64, f64),
    opts: &PipelineOptions,
    angular: &AngularOptions,
) -> Result<SingleResult> {
    let traj = decay_single(amplitudes, atoms, cfg, window, &opts.decay)?;
    let profile = angular_density(&traj, angular)?;
    let rate = emission_rate(&traj, &traj.uniform_times(opts.rate_step))?;
    let (peak_time, peak_rate) = rate.refined_peak().unwrap_or((window.0, 0.0));
    let last = profile.times.len() - 1;
    let summary = EnsembleSummary {
        id,
        n_atoms: atoms.len(),
        initial: traj.initial_population(),
        emitted: profile.total(last),
        cone: profile.cone(last, opts.cone_angle)?,
        remaining: traj.population_at(window.1)?,
        lost_to_walls: traj.lost_to_walls(window.1)?,
        peak_time,
        peak_rate,
    };
    Ok(SingleResult { summary, profile, rate })
}

/// Decays the pair amplitudes of one ensemble from `window.0` and summarizes
/// the emission of both photons.
pub fn summarize_double(
    id: usize,
    atoms: &AtomSet,
    pairs: &[C64],
    cfg: &PhysicalConfig,
    window: (f64, f64),
    opts: &PipelineOptions,
    angular: &AngularOptions,
) -> Result<DoubleResult> {
    let traj = decay_double(pairs, atoms, cfg, window, &opts.decay)?;
    let profile = first_photon_density(&traj, angular)?;
    let first_rate = emission_rate(&traj, &traj.uniform_times(opts.rate_step))?;
    let second_rate =
        second_photon_rate(&traj, &IndependentDecay, &RateOptions { panel: opts.rate_step, order: 4 })?;
    let (peak_time, peak_rate) = first_rate.refined_peak().unwrap_or((window.0, 0.0));
    let last = profile.times.len() - 1;
    let summary = EnsembleSummary {
        id,
        n_atoms: atoms.len(),
        initial: traj.initial_population(),
        emitted: profile.total(last),
        cone: profile.cone(last, opts.cone_angle)?,
        remaining: traj.population_at(window.1)?,
        lost_to_walls: traj.lost_to_walls(window.1)?,
        peak_time,
        peak_rate,
    };
    Ok(DoubleResult { summary, profile, first_rate, second_rate })
}

/// Excites every sample, groups the single excitations, decays single and
/// double sectors from the end of the pulses and evaluates the emission.
pub fn run_pipeline(cfg: &PhysicalConfig, opts: &PipelineOptions) -> Result<PipelineOutput> {
    opts.pulses.validate()?;
    if opts.samples == 0 || opts.group_size == 0 || !opts.samples.is_multiple_of(opts.group_size) {
        return Err(Error::Grouping { samples: opts.samples, group_size: opts.group_size });
    }
    if !(opts.decay_time > 0.0) || !(opts.rate_step > 0.0) {
        return Err(Error::Config(String::from("decay time and rate step must be positive")));
    }
    let samples = draw_samples(
        opts.distribution,
        opts.samples,
        opts.atoms,
        cfg,
        opts.seed,
        stage::SAMPLE,
        opts.threshold,
        opts.exec,
    )
    .map_err(|e| stage_err("sample", e))?;
    // one level of parallelism: across samples
    let inner = Execution::Sequential;
    let excited = opts
        .exec
        .map_range(samples.len(), |i| excite_sample(i, samples[i].clone(), cfg, opts, inner))
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| stage_err(&format!("excite (sample {i})"), e)))
        .collect::<Result<Vec<_>>>()?;
    let t0 = opts.pulses.total_duration();
    let window = (t0, t0 + opts.decay_time);
    let angular = AngularOptions { exec: inner, ..opts.angular.clone() };
    let singles_in: Vec<ExcitedEnsemble> = excited.iter().map(|e| e.single.clone()).collect();
    let groups = group_samples(&singles_in, opts.group_size)?;
    let singles = opts
        .exec
        .map_range(groups.len(), |g| {
            summarize_single(g, &groups[g].atoms, &groups[g].amplitudes, cfg, window, opts, &angular)
        })
        .into_iter()
        .enumerate()
        .map(|(g, r)| r.map_err(|e| stage_err(&format!("single decay (group {g})"), e)))
        .collect::<Result<Vec<_>>>()?;
    let doubles = if opts.doubles {
        opts.exec
            .map_range(excited.len(), |i| {
                summarize_double(i, &excited[i].single.atoms, &excited[i].pairs, cfg, window, opts, &angular)
            })
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| stage_err(&format!("double decay (sample {i})"), e)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(PipelineOutput { t0, samples: excited.into_iter().map(|e| e.record).collect(), singles, doubles })
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| String::from("nan"), |v| format!("{v:e}"))
}

impl PipelineOutput {
    /// Writes every non-empty table into `dir` and returns the paths in a
    /// fixed order.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if !self.samples.is_empty() {
            let mut w = create(dir, "samples.csv", &mut written)?;
            writeln!(w, "{}", SampleRecord::CSV_HEADER)?;
            for s in &self.samples {
                let p = &s.populations;
                writeln!(
                    w,
                    "{},{},{:e},{:e},{:e},{:e},{:e},{},{:e}",
                    s.index,
                    s.seed,
                    p.ground,
                    p.single_e,
                    p.double_ee,
                    p.other,
                    s.fidelity,
                    fmt_opt(s.phase_time),
                    s.norm_drift
                )?;
            }
            w.flush()?;
        }
        let mut summary = create(dir, "single_summary.csv", &mut written)?;
        let mut profile = create(dir, "single_profile.csv", &mut written)?;
        let mut rate = create(dir, "single_rate.csv", &mut written)?;
        writeln!(summary, "{}", EnsembleSummary::CSV_HEADER)?;
        for (i, s) in self.singles.iter().enumerate() {
            s.summary.write_row(&mut summary)?;
            s.profile.write_csv(&mut profile, s.summary.id, i == 0)?;
            s.rate.write_csv(&mut rate, s.summary.id, i == 0)?;
        }
        for f in [&mut summary, &mut profile, &mut rate] {
            f.flush()?;
        }
        if !self.doubles.is_empty() {
            let mut summary = create(dir, "double_summary.csv", &mut written)?;
            let mut profile = create(dir, "double_profile.csv", &mut written)?;
            let mut first = create(dir, "double_first_rate.csv", &mut written)?;
            let mut second = create(dir, "double_second_rate.csv", &mut written)?;
            writeln!(summary, "{}", EnsembleSummary::CSV_HEADER)?;
            for (i, d) in self.doubles.iter().enumerate() {
                d.summary.write_row(&mut summary)?;
                d.profile.write_csv(&mut profile, d.summary.id, i == 0)?;
                d.first_rate.write_csv(&mut first, d.summary.id, i == 0)?;
                d.second_rate.write_csv(&mut second, d.summary.id, i == 0)?;
            }
            for f in [&mut summary, &mut profile, &mut first, &mut second] {
                f.flush()?;
            }
        }
        Ok(written)
    }
}

/// Single-excitation amplitudes e^{i k₀ x_n(t_W)}/√N of an ideal W state.
pub fn ideal_w_amplitudes(atoms: &AtomSet, cfg: &PhysicalConfig, t_w: f64) -> Result<Vec<C64>> {
    if atoms.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let w = 1.0 / (atoms.len() as f64).sqrt();
    let k0 = cfg.k0();
    Ok((0..atoms.len()).map(|n| C64::from_polar(w, k0 * atoms.position_at(n, t_w)[0])).collect())
}

#[derive(Clone, Debug)]
pub struct TwScanOptions {
    pub distribution: Distribution,
    pub atoms: usize,
    pub seeds: usize,
    pub seed: u64,
    pub threshold: f64,
    pub t_ws: Vec<f64>,
    /// Start of the decay (ns).
    pub t0: f64,
    pub decay_time: f64,
    pub rate_step: f64,
    pub cone_angle: f64,
    /// Quadrature settings; the θ grid always spans the cone.
    pub angular: AngularOptions,
    pub decay: DecayOptions,
    pub exec: Execution,
}

impl Default for TwScanOptions {
    fn default() -> Self {
        TwScanOptions {
            distribution: Distribution::Boltzmann,
            atoms: 100,
            seeds: 5,
            seed: 1,
            threshold: 0.1,
            t_ws: linspace(1.25, 2.75, 7),
            t0: 1.5,
            decay_time: 10.0,
            rate_step: 0.05,
            cone_angle: DEFAULT_CONE,
            angular: AngularOptions { n_theta: 31, ..AngularOptions::default() },
            decay: DecayOptions::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwScanPoint {
    pub t_w: f64,
    pub seed_index: usize,
    pub cone: f64,
    pub emitted: f64,
    pub lost_to_walls: f64,
    pub peak_time: f64,
    pub peak_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwScan {
    pub points: Vec<TwScanPoint>,
}

/// Mean and standard error of the cone population at one t_W.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwScanMean {
    pub t_w: f64,
    pub cone: f64,
    pub cone_sem: f64,
    pub peak_time: f64,
}

impl TwScan {
    pub const CSV_HEADER: &'static str =
        "t_w_ns,seed_index,cone_population,emitted_population,lost_to_walls,peak_time_ns,peak_rate_per_gamma";

    pub fn means(&self) -> Vec<TwScanMean> {
        let mut t_ws: Vec<f64> = self.points.iter().map(|p| p.t_w).collect();
        t_ws.sort_by(f64::total_cmp);
        t_ws.dedup();
        t_ws.into_iter()
            .map(|t_w| {
                let sel: Vec<&TwScanPoint> = self.points.iter().filter(|p| p.t_w == t_w).collect();
                let n = sel.len() as f64;
                let cone = sel.iter().map(|p| p.cone).sum::<f64>() / n;
                let var = if sel.len() > 1 {
                    sel.iter().map(|p| (p.cone - cone).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                let peak_time = sel.iter().map(|p| p.peak_time).sum::<f64>() / n;
                TwScanMean { t_w, cone, cone_sem: (var / n).sqrt(), peak_time }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for p in &self.points {
            writeln!(
                w,
                "{:e},{},{:e},{:e},{:e},{:e},{:e}",
                p.t_w, p.seed_index, p.cone, p.emitted, p.lost_to_walls, p.peak_time, p.peak_rate
            )?;
        }
        Ok(())
    }
}

/// Decay of ideal, uniformly weighted W states prepared for a range of t_W.
pub fn tw_scan(cfg: &PhysicalConfig, opts: &TwScanOptions) -> Result<TwScan> {
    if opts.t_ws.is_empty() || opts.seeds == 0 {
        return Err(Error::Config(String::from("t_W scan needs at least one t_W and one seed")));
    }
    let samples = draw_samples(
        opts.distribution,
        opts.seeds,
        opts.atoms,
        cfg,
        opts.seed,
        stage::TW_SCAN,
        opts.threshold,
        opts.exec,
    )?;
    let window = (opts.t0, opts.t0 + opts.decay_time);
    // only the cone is needed
    let angular = AngularOptions { theta_max: opts.cone_angle, exec: Execution::Sequential, ..opts.angular.clone() };
    let decay = DecayOptions { exec: Execution::Sequential, ..opts.decay };
    let jobs: Vec<(f64, usize)> =
        opts.t_ws.iter().flat_map(|&t| (0..opts.seeds).map(move |s| (t, s))).collect();
    let points = opts
        .exec
        .map_slice(&jobs, |&(t_w, s)| -> Result<TwScanPoint> {
            let atoms = &samples[s];
            let alpha = ideal_w_amplitudes(atoms, cfg, t_w)?;
            let traj = decay_single(&alpha, atoms, cfg, window, &decay)?;
            let profile = angular_density(&traj, &angular)?;
            let rate = emission_rate(&traj, &traj.uniform_times(opts.rate_step))?;
            let (peak_time, peak_rate) = rate.refined_peak().unwrap_or((window.0, 0.0));
            Ok(TwScanPoint {
                t_w,
                seed_index: s,
                cone: profile.cone_population(opts.cone_angle)?,
                emitted: traj.initial_population() - traj.population_at(window.1)?,
                lost_to_walls: traj.lost_to_walls(window.1)?,
                peak_time,
                peak_rate,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(TwScan { points })
}

#[derive(Clone, Debug)]
pub struct ScalingOptions {
    pub distribution: Distribution,
    /// Atoms per sample.
    pub atoms: usize,
    /// Ensemble sizes are `atoms × group_size`.
    pub group_sizes: Vec<usize>,
    /// Samples drawn; every group size must divide it.
    pub samples: usize,
    pub seed: u64,
    pub threshold: f64,
    pub t_w: f64,
    pub t0: f64,
    pub decay_time: f64,
    pub rate_step: f64,
    pub decay: DecayOptions,
    pub exec: Execution,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            distribution: Distribution::Boltzmann,
            atoms: 100,
            group_sizes: vec![2, 4, 8],
            samples: 8,
            seed: 1,
            threshold: 0.1,
            t_w: 2.0,
            t0: 1.5,
            decay_time: 3.0,
            rate_step: 0.02,
            decay: DecayOptions::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n_atoms: usize,
    pub group: usize,
    pub peak_time: f64,
    pub peak_rate: f64,
}

/// Straight line y = slope·x + intercept with its coefficient of
/// determination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), found: y.len() });
    }
    let n = x.len() as f64;
    if x.len() < 2 {
        return Err(Error::Fit { channel: String::from("line"), reason: String::from("fewer than two points") });
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit { channel: String::from("line"), reason: String::from("abscissae coincide") });
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LineFit { slope, intercept: my - slope * mx, r2 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub points: Vec<ScalingPoint>,
}

impl Scaling {
    pub const CSV_HEADER: &'static str = "n_atoms,group,peak_time_ns,peak_rate_per_gamma";

    /// Mean peak rate per ensemble size, in increasing size.
    pub fn means(&self) -> Vec<(usize, f64)> {
        let mut sizes: Vec<usize> = self.points.iter().map(|p| p.n_atoms).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|n| {
                let sel: Vec<f64> = self.points.iter().filter(|p| p.n_atoms == n).map(|p| p.peak_rate).collect();
                (n, sel.iter().sum::<f64>() / sel.len() as f64)
            })
            .collect()
    }

    /// Line through the per-size mean peak rates against atom number.
    pub fn fit(&self) -> Result<LineFit> {
        let m = self.means();
        let x: Vec<f64> = m.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = m.iter().map(|p| p.1).collect();
        fit_line(&x, &y)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for p in &self.points {
            writeln!(w, "{},{},{:e},{:e}", p.n_atoms, p.group, p.peak_time, p.peak_rate)?;
        }
        Ok(())
    }
}

/// Peak emission rate of grouped ideal W states for several ensemble sizes.
pub fn superradiant_scaling(cfg: &PhysicalConfig, opts: &ScalingOptions) -> Result<Scaling> {
    if opts.group_sizes.is_empty() {
        return Err(Error::Config(String::from("scaling needs at least one group size")));
    }
    for &g in &opts.group_sizes {
        if g == 0 || !opts.samples.is_multiple_of(g) {
            return Err(Error::Grouping { samples: opts.samples, group_size: g });
        }
    }
    let samples = draw_samples(
        opts.distribution,
        opts.samples,
        opts.atoms,
        cfg,
        opts.seed,
        stage::SCALING,
        opts.threshold,
        opts.exec,
    )?;
    let excited = samples
        .into_iter()
        .map(|atoms| {
            Ok(ExcitedEnsemble { amplitudes: ideal_w_amplitudes(&atoms, cfg, opts.t_w)?, atoms })
        })
        .collect::<Result<Vec<_>>>()?;
    let window = (opts.t0, opts.t0 + opts.decay_time);
    let decay = DecayOptions { exec: Execution::Sequential, ..opts.decay };
    let mut jobs = Vec::new();
    for &g in &opts.group_sizes {
        for (i, e) in group_samples(&excited, g)?.into_iter().enumerate() {
            jobs.push((i, e));
        }
    }
    let points = opts
        .exec
        .map_slice(&jobs, |(i, e)| -> Result<ScalingPoint> {
            let traj = decay_single(&e.amplitudes, &e.atoms, cfg, window, &decay)?;
            let rate = emission_rate(&traj, &traj.uniform_times(opts.rate_step))?;
            let (peak_time, peak_rate) = rate.refined_peak().unwrap_or((window.0, 0.0));
            Ok(ScalingPoint { n_atoms: e.atoms.len(), group: *i, peak_time, peak_rate })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Scaling { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineOptions {
        PipelineOptions {
            samples: 2,
            atoms: 4,
            group_size: 2,
            decay_time: 2.0,
            angular: AngularOptions { n_theta: 61, ..AngularOptions::default() },
            ..PipelineOptions::default()
        }
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 1.0).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
        assert!(fit_line(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ideal_w_state_is_normalized_with_forward_phases() {
        let cfg = PhysicalConfig::default();
        let atoms = AtomSet::stationary(vec![[0.1, 0.0, 0.0], [0.4, 0.2, 0.0], [0.7, 0.0, 0.1]]);
        let a = ideal_w_amplitudes(&atoms, &cfg, 2.0).unwrap();
        assert!((a.iter().map(|c| c.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-14);
        let dphi = (a[1] * a[0].conj()).arg();
        let expect = cfg.k0() * 0.3;
        assert!((dphi - (expect - 2.0 * PI * (expect / (2.0 * PI)).round())).abs() < 1e-12);
    }

    #[test]
    fn pipeline_rejects_bad_grouping() {
        let cfg = PhysicalConfig::default();
        let opts = PipelineOptions { samples: 3, group_size: 2, ..small() };
        assert!(matches!(run_pipeline(&cfg, &opts), Err(Error::Grouping { .. })));
    }

    #[test]
    fn small_pipeline_conserves_population() {
        let cfg = PhysicalConfig::default();
        let out = run_pipeline(&cfg, &small()).unwrap();
        assert_eq!(out.samples.len(), 2);
        assert_eq!(out.singles.len(), 1);
        assert_eq!(out.doubles.len(), 2);
        let single_e: f64 = out.samples.iter().map(|s| s.populations.single_e).sum::<f64>() / 2.0;
        let s = &out.singles[0].summary;
        assert!((s.initial - single_e).abs() < 1e-12);
        assert!((s.emitted + s.remaining - s.initial).abs() < 1e-5);
        for d in &out.doubles {
            let s = &d.summary;
            assert!((s.emitted + s.remaining - s.initial).abs() < 1e-5 * s.initial.max(1e-3));
        }
    }
}
