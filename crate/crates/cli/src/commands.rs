use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rydsps::decay::{group_samples, AngularOptions, AngularProfile, ExcitedEnsemble};
use rydsps::ensemble::{sample, sample_filtered};
use rydsps::excitation::{
    fidelity, phase_time, phase_time_from_state, propagate, to_lab_frame, w_state_target, ExcitationModel,
    PropagationOptions, StateVector, Weighting,
};
use rydsps::optimizer::{NelderMeadOptions, OptimizationProblem, PulseSpace};
use rydsps::pipeline::{
    draw_samples, run_pipeline, stage, summarize_double, summarize_single, superradiant_scaling, tw_scan,
    PipelineOptions, PipelineOutput, SampleRecord, ScalingOptions, TwScanOptions,
};
use rydsps::{seeds, AtomSet, Distribution, Execution, PhysicalConfig, RunConfig, C64};

use crate::manifest::{Recorder, RunManifest};
use crate::{parse_count, Cli, Command, DistArg};

/// Resolved inputs shared by every command.
struct Ctx {
    cfg: PhysicalConfig,
    run: RunConfig,
    exec: Execution,
    seed: u64,
    budget: f64,
}

pub fn run(cli: &Cli, args: Vec<String>, config: RunConfig, exec: Execution, budget: f64) -> Result<RunManifest> {
    let cfg = config.physical.to_config().context("invalid physical config")?;
    let ctx = Ctx { cfg, run: config.clone(), exec, seed: cli.common.seed, budget };
    if matches!(cli.command, Command::Replay(_)) {
        bail!("replay is handled by the caller");
    }
    let name = cli.command.name();
    let mut rec = Recorder::new(&cli.common.out, name, args, ctx.seed, config, budget)?;
    match &cli.command {
        Command::Sample(a) => cmd_sample(&ctx, a, &mut rec)?,
        Command::Excite(a) => cmd_excite(&ctx, a, &mut rec)?,
        Command::Decay(a) => cmd_decay(&ctx, a, &mut rec)?,
        Command::Analyze(a) => cmd_analyze(a, &mut rec)?,
        Command::Optimize(a) => cmd_optimize(&ctx, a, &mut rec)?,
        Command::Pipeline(a) => cmd_pipeline(&ctx, a, &mut rec)?,
        Command::TwScan(a) => cmd_tw_scan(&ctx, a, &mut rec)?,
        Command::Scaling(a) => cmd_scaling(&ctx, a, &mut rec)?,
        Command::Replay(_) => unreachable!(),
    }
    rec.finish()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes a file through `f` and records it in the manifest.
fn emit(rec: &mut Recorder, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
    let path = rec.path(name);
    let mut w = create(&path)?;
    f(&mut w)?;
    w.flush()?;
    drop(w);
    rec.output(&path)?;
    Ok(path)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| String::from("nan"), |v| format!("{v:e}"))
}

fn angular(n_theta: usize, budget: f64) -> AngularOptions {
    AngularOptions { n_theta, budget: Some(budget), ..AngularOptions::default() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AtomFormat {
    Csv,
    /// Little-endian binary snapshot.
    Snapshot,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long, value_enum, default_value = "liad")]
    pub dist: DistArg,
    /// Atoms per sample.
    #[arg(long, value_parser = parse_count)]
    pub n: usize,
    #[arg(long, value_parser = parse_count, default_value = "1")]
    pub samples: usize,
    /// Keep only atoms whose laser-1 beam factor reaches this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: AtomFormat,
}

/// Survival 1 − exp(−(L/(b t))²) of wall-desorbed atoms crossing a cell of
/// thickness L.
fn liad_survival(cfg: &PhysicalConfig, t: f64) -> f64 {
    1.0 - (-(cfg.cell_thickness / (cfg.liad_b * t)).powi(2)).exp()
}

fn cmd_sample(ctx: &Ctx, a: &SampleArgs, rec: &mut Recorder) -> Result<()> {
    let dist = Distribution::from(a.dist);
    let seeds: Vec<u64> = (0..a.samples).map(|i| seeds::derive(ctx.seed, stage::SAMPLE, i as u64)).collect();
    rec.seeds("sample", seeds.clone());
    let sets = rec.stage("sample", |_| {
        ctx.exec
            .map_slice(&seeds, |&s| match a.threshold {
                Some(th) => sample_filtered(dist, a.n, &ctx.cfg, s, th),
                None => sample(dist, a.n, &ctx.cfg, s),
            })
            .into_iter()
            .collect::<rydsps::Result<Vec<_>>>()
            .map_err(Into::into)
    })?;
    rec.stage("write", |rec| {
        for (i, set) in sets.iter().enumerate() {
            match a.format {
                AtomFormat::Csv => emit(rec, &format!("atoms_{i:03}.csv"), |w| Ok(set.write_csv(w)?))?,
                AtomFormat::Snapshot => emit(rec, &format!("atoms_{i:03}.bin"), |w| Ok(set.write_snapshot(w)?))?,
            };
        }
        let analytic = dist == Distribution::Liad && a.threshold.is_none();
        emit(rec, "survival.csv", |w| {
            writeln!(w, "sample,seed,n_atoms,time_ns,survivor_fraction,analytic_fraction")?;
            for (i, set) in sets.iter().enumerate() {
                for k in 1..=6 {
                    let t = 0.5 * k as f64;
                    let expect = analytic.then(|| liad_survival(&ctx.cfg, t));
                    writeln!(w, "{i},{},{},{t:e},{:e},{}", seeds[i], set.len(), set.survivor_fraction(t), fmt_opt(expect))?;
                }
            }
            Ok(())
        })?;
        Ok(())
    })
}

#[derive(Args, Debug, Clone)]
pub struct ExciteArgs {
    /// Atom CSV files; sampled with --dist/--n/--samples when absent.
    #[arg(long, num_args = 1..)]
    pub atoms: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "boltzmann")]
    pub dist: DistArg,
    #[arg(long, value_parser = parse_count, default_value = "10")]
    pub n: usize,
    #[arg(long, value_parser = parse_count, default_value = "1")]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    /// W-state time of the reported fidelity (ns).
    #[arg(long, default_value_t = 2.0)]
    pub t_w: f64,
    /// Spacing of recorded lab-frame states during the pulses (ns).
    #[arg(long)]
    pub record_step: Option<f64>,
}

fn write_amplitudes<W: Write>(w: &mut W, amps: &[C64]) -> Result<()> {
    writeln!(w, "atom,real,imag")?;
    for (n, a) in amps.iter().enumerate() {
        writeln!(w, "{n},{:e},{:e}", a.re, a.im)?;
    }
    Ok(())
}

fn write_pairs<W: Write>(w: &mut W, n_atoms: usize, amps: &[C64]) -> Result<()> {
    writeln!(w, "first,second,real,imag")?;
    let mut k = 0;
    for n in 0..n_atoms {
        for m in n + 1..n_atoms {
            writeln!(w, "{n},{m},{:e},{:e}", amps[k].re, amps[k].im)?;
            k += 1;
        }
    }
    Ok(())
}

fn read_columns(path: &Path, keys: usize) -> Result<Vec<C64>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != keys + 2 {
            bail!("{}:{}: expected {} columns", path.display(), i + 1, keys + 2);
        }
        let re: f64 = f[keys].parse().with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let im: f64 = f[keys + 1].parse().with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(C64::new(re, im));
    }
    Ok(out)
}

struct Excitation {
    record: SampleRecord,
    state: StateVector,
    trajectory: Vec<StateVector>,
    atoms: AtomSet,
}

fn excite_one(ctx: &Ctx, index: usize, atoms: AtomSet, a: &ExciteArgs, inner: Execution) -> Result<Excitation> {
    let pulses = &ctx.run.pulses;
    let t0 = pulses.total_duration();
    let record_times = match a.record_step {
        Some(h) if h > 0.0 => {
            let steps = (t0 / h).floor() as usize;
            (0..=steps).map(|k| k as f64 * h).collect()
        }
        Some(h) => bail!("record step must be positive, got {h}"),
        None => Vec::new(),
    };
    let seed = atoms.seed;
    let model = ExcitationModel::new(atoms, &ctx.cfg, Default::default(), inner)?;
    let h = model.hamiltonian(&ctx.cfg, pulses)?;
    let opts = PropagationOptions { record_times, exec: inner, ..Default::default() };
    let prop = propagate(&h, &StateVector::ground(model.basis), (0.0, t0), &opts)?;
    let state = to_lab_frame(&prop.state, &h.drift)?;
    let trajectory = prop.samples.iter().map(|s| to_lab_frame(s, &h.drift)).collect::<rydsps::Result<Vec<_>>>()?;
    let target = w_state_target(&model.atoms, &ctx.cfg, pulses, &model.basis, a.t_w, Weighting::Rabi)?;
    let record = SampleRecord {
        index,
        seed,
        populations: rydsps::excitation::sector_populations(&state),
        fidelity: fidelity(&state, &target)?,
        phase_time: phase_time_from_state(&state, &model.atoms, &ctx.cfg).ok(),
        norm_drift: prop.norm_drift,
    };
    Ok(Excitation { record, state, trajectory, atoms: model.atoms })
}

fn cmd_excite(ctx: &Ctx, a: &ExciteArgs, rec: &mut Recorder) -> Result<()> {
    ctx.run.pulses.validate()?;
    let sets = rec.stage("sample", |rec| {
        if a.atoms.is_empty() {
            let seeds: Vec<u64> = (0..a.samples).map(|i| seeds::derive(ctx.seed, stage::SAMPLE, i as u64)).collect();
            rec.seeds("sample", seeds);
            Ok(draw_samples(a.dist.into(), a.samples, a.n, &ctx.cfg, ctx.seed, stage::SAMPLE, a.threshold, ctx.exec)?)
        } else {
            a.atoms
                .iter()
                .map(|p| AtomSet::read_csv(open(p)?, Distribution::Manual, 0).with_context(|| format!("reading {}", p.display())))
                .collect()
        }
    })?;
    let results = rec.stage("excite", |_| {
        ctx.exec
            .map_range(sets.len(), |i| excite_one(ctx, i, sets[i].clone(), a, Execution::Sequential))
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.with_context(|| format!("sample {i}")))
            .collect::<Result<Vec<_>>>()
    })?;
    rec.stage("write", |rec| {
        for (i, r) in results.iter().enumerate() {
            let dir = format!("sample_{i:03}");
            emit(rec, &format!("{dir}/atoms.csv"), |w| Ok(r.atoms.write_csv(w)?))?;
            emit(rec, &format!("{dir}/state.csv"), |w| Ok(r.state.write_csv(w)?))?;
            emit(rec, &format!("{dir}/singles.csv"), |w| write_amplitudes(w, &r.state.single_excited()))?;
            emit(rec, &format!("{dir}/doubles.csv"), |w| write_pairs(w, r.atoms.len(), &r.state.double_excited()))?;
            if !r.trajectory.is_empty() {
                emit(rec, &format!("{dir}/trajectory.csv"), |w| {
                    writeln!(w, "time_ns,label,real,imag")?;
                    for s in &r.trajectory {
                        for (k, amp) in s.amplitudes.iter().enumerate() {
                            let label = s.basis.label(k).map(|b| b.label()).unwrap_or_default();
                            writeln!(w, "{:e},{label},{:e},{:e}", s.time, amp.re, amp.im)?;
                        }
                    }
                    Ok(())
                })?;
            }
        }
        emit(rec, "excitation.csv", |w| {
            writeln!(w, "{}", SampleRecord::CSV_HEADER)?;
            for r in &results {
                let (s, p) = (&r.record, &r.record.populations);
                writeln!(
                    w,
                    "{},{},{:e},{:e},{:e},{:e},{:e},{},{:e}",
                    s.index, s.seed, p.ground, p.single_e, p.double_ee, p.other, s.fidelity, fmt_opt(s.phase_time), s.norm_drift
                )?;
            }
            Ok(())
        })?;
        Ok(())
    })
}

#[derive(Args, Debug, Clone)]
pub struct DecayArgs {
    /// Sample directories written by `excite`.
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Consecutive inputs merged into one ensemble.
    #[arg(long, value_parser = parse_count, default_value = "1")]
    pub group: usize,
    /// Start of the decay (ns); the end of the configured pulses by default.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Length of the decay window (ns).
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, value_parser = parse_count, default_value = "181")]
    pub n_theta: usize,
    #[arg(long, default_value_t = 0.05)]
    pub rate_step: f64,
    #[arg(long, default_value_t = 30.0)]
    pub cone_deg: f64,
    /// Skip the double-excitation sector.
    #[arg(long)]
    pub no_doubles: bool,
}

fn cmd_decay(ctx: &Ctx, a: &DecayArgs, rec: &mut Recorder) -> Result<()> {
    let t0 = a.t0.unwrap_or_else(|| ctx.run.pulses.total_duration());
    if !(a.duration > 0.0) || !(a.rate_step > 0.0) || !(t0 >= 0.0) {
        bail!("t0 must be non-negative and duration and rate step positive");
    }
    let window = (t0, t0 + a.duration);
    let opts = PipelineOptions {
        decay_time: a.duration,
        rate_step: a.rate_step,
        cone_angle: a.cone_deg.to_radians(),
        angular: angular(a.n_theta, ctx.budget),
        exec: ctx.exec,
        ..PipelineOptions::default()
    };
    let inputs = rec.stage("read", |_| {
        a.input
            .iter()
            .map(|dir| {
                let atoms = AtomSet::read_csv(open(&dir.join("atoms.csv"))?, Distribution::Manual, 0)?;
                let singles = read_columns(&dir.join("singles.csv"), 1)?;
                let pairs = if a.no_doubles { Vec::new() } else { read_columns(&dir.join("doubles.csv"), 2)? };
                Ok((ExcitedEnsemble { atoms, amplitudes: singles }, pairs))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let singles_in: Vec<ExcitedEnsemble> = inputs.iter().map(|i| i.0.clone()).collect();
    let groups = group_samples(&singles_in, a.group)?;
    let seq = AngularOptions { exec: Execution::Sequential, ..opts.angular.clone() };
    let singles = rec.stage("single decay", |_| {
        ctx.exec
            .map_range(groups.len(), |g| summarize_single(g, &groups[g].atoms, &groups[g].amplitudes, &ctx.cfg, window, &opts, &seq))
            .into_iter()
            .collect::<rydsps::Result<Vec<_>>>()
            .map_err(Into::into)
    })?;
    let doubles = if a.no_doubles {
        Vec::new()
    } else {
        rec.stage("double decay", |_| {
            ctx.exec
                .map_range(inputs.len(), |i| summarize_double(i, &inputs[i].0.atoms, &inputs[i].1, &ctx.cfg, window, &opts, &seq))
                .into_iter()
                .collect::<rydsps::Result<Vec<_>>>()
                .map_err(Into::into)
        })?
    };
    let out = PipelineOutput { t0, samples: Vec::new(), singles, doubles };
    rec.stage("write", |rec| {
        let paths = out.write_csvs(&rec.out.clone())?;
        rec.outputs(&paths)
    })
}

#[derive(Args, Debug, Clone)]
pub struct AnalyzeArgs {
    /// Angular profile CSV written by `decay` or `pipeline`.
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub cone_deg: f64,
}

fn cmd_analyze(a: &AnalyzeArgs, rec: &mut Recorder) -> Result<()> {
    let profiles = rec.stage("read", |_| {
        AngularProfile::read_csv(open(&a.profile)?).with_context(|| format!("reading {}", a.profile.display()))
    })?;
    let cone = a.cone_deg.to_radians();
    let rows = rec.stage("integrate", |_| {
        let mut rows = Vec::new();
        for (id, p) in &profiles {
            for (i, &t) in p.times.iter().enumerate() {
                rows.push((*id, t, p.total(i), p.cone(i, cone)?));
            }
        }
        Ok(rows)
    })?;
    rec.stage("write", |rec| {
        emit(rec, "analysis.csv", |w| {
            writeln!(w, "ensemble_id,time_ns,emitted_population,cone_population")?;
            for (id, t, total, c) in &rows {
                writeln!(w, "{id},{t:e},{total:e},{c:e}")?;
            }
            Ok(())
        })?;
        Ok(())
    })
}

#[derive(Args, Debug, Clone)]
pub struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "boltzmann")]
    pub dist: DistArg,
    #[arg(long, value_parser = parse_count, default_value = "10")]
    pub samples: usize,
    #[arg(long, value_parser = parse_count, default_value = "10")]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t_w: f64,
    #[arg(long, value_parser = parse_count, default_value = "300")]
    pub max_evals: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub xtol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub ftol: f64,
    #[arg(long, default_value_t = 0.05)]
    pub initial_step: f64,
    /// Optimize lasers 1 and 2 independently.
    #[arg(long)]
    pub untied: bool,
}

fn cmd_optimize(ctx: &Ctx, a: &OptimizeArgs, rec: &mut Recorder) -> Result<()> {
    let master = seeds::derive(ctx.seed, stage::OPTIMIZE, 0);
    rec.seeds("optimize", (0..a.samples).map(|i| seeds::derive(master, stage::SAMPLE, i as u64)).collect());
    let samples = rec.stage("sample", |_| {
        Ok(draw_samples(a.dist.into(), a.samples, a.n, &ctx.cfg, master, stage::SAMPLE, a.threshold, ctx.exec)?)
    })?;
    let space = if a.untied { PulseSpace::untied() } else { PulseSpace::tied() };
    let names = space.names();
    let outcome = rec.stage("optimize", |_| {
        let mut problem = OptimizationProblem::new(samples, ctx.cfg.clone(), space, ctx.exec)?;
        problem.t_w = a.t_w;
        let opts = NelderMeadOptions {
            max_evals: a.max_evals,
            xtol: a.xtol,
            ftol: a.ftol,
            initial_step: a.initial_step,
            ..NelderMeadOptions::default()
        };
        Ok(problem.optimize(&ctx.run.pulses, &opts)?)
    })?;
    rec.stage("write", |rec| {
        let best = RunConfig { physical: ctx.run.physical.clone(), pulses: outcome.pulses };
        let text = best.to_toml()?;
        emit(rec, "best.toml", |w| Ok(w.write_all(text.as_bytes())?))?;
        emit(rec, "trace.csv", |w| Ok(outcome.trace.write_csv(w, &names)?))?;
        let t0 = outcome.pulses.total_duration();
        let t_phi = phase_time(&outcome.pulses, &ctx.cfg);
        let termination = outcome
            .trace
            .termination
            .map_or_else(|| String::from("none"), |t| serde_json::to_value(t).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default());
        emit(rec, "optimize_summary.csv", |w| {
            writeln!(w, "initial_fidelity,mean_fidelity,evaluations,termination,t0_ns,phase_time_ns,phase_delay_ns")?;
            writeln!(
                w,
                "{:e},{:e},{},{termination},{t0:e},{t_phi:e},{:e}",
                outcome.initial_fidelity,
                outcome.mean_fidelity,
                outcome.trace.evaluations,
                t_phi - t0
            )?;
            Ok(())
        })?;
        Ok(())
    })
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    #[arg(long, value_enum, default_value = "boltzmann")]
    pub dist: DistArg,
    #[arg(long, value_parser = parse_count, default_value = "10")]
    pub samples: usize,
    /// Atoms per sample.
    #[arg(long, value_parser = parse_count, default_value = "20")]
    pub n: usize,
    /// Samples merged into one single-excitation ensemble.
    #[arg(long, value_parser = parse_count, default_value = "5")]
    pub group: usize,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t_w: f64,
    #[arg(long, default_value_t = 10.0)]
    pub decay_time: f64,
    #[arg(long, default_value_t = 0.05)]
    pub rate_step: f64,
    #[arg(long, value_parser = parse_count, default_value = "181")]
    pub n_theta: usize,
    #[arg(long, default_value_t = 30.0)]
    pub cone_deg: f64,
    /// Start laser 3 as lasers 1 and 2 switch off.
    #[arg(long)]
    pub no_delay: bool,
    /// Skip the double-excitation sector.
    #[arg(long)]
    pub no_doubles: bool,
}

fn cmd_pipeline(ctx: &Ctx, a: &PipelineArgs, rec: &mut Recorder) -> Result<()> {
    let mut pulses = ctx.run.pulses;
    if a.no_delay {
        pulses.laser3.start = pulses.laser1.end().max(pulses.laser2.end());
    }
    let opts = PipelineOptions {
        distribution: a.dist.into(),
        samples: a.samples,
        atoms: a.n,
        group_size: a.group,
        seed: ctx.seed,
        threshold: a.threshold,
        pulses,
        t_w: a.t_w,
        decay_time: a.decay_time,
        rate_step: a.rate_step,
        cone_angle: a.cone_deg.to_radians(),
        doubles: !a.no_doubles,
        angular: angular(a.n_theta, ctx.budget),
        exec: ctx.exec,
        ..PipelineOptions::default()
    };
    rec.seeds("sample", (0..a.samples).map(|i| seeds::derive(ctx.seed, stage::SAMPLE, i as u64)).collect());
    let out = rec.stage("pipeline", |_| Ok(run_pipeline(&ctx.cfg, &opts)?))?;
    rec.stage("write", |rec| {
        let paths = out.write_csvs(&rec.out.clone())?;
        rec.outputs(&paths)
    })
}

fn parse_times(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| e.to_string()).and_then(|t| if t >= 0.0 { Ok(t) } else { Err(String::from("must be non-negative")) })
}

#[derive(Args, Debug, Clone)]
pub struct TwScanArgs {
    #[arg(long, value_enum, default_value = "boltzmann")]
    pub dist: DistArg,
    #[arg(long, value_parser = parse_count, default_value = "100")]
    pub n: usize,
    /// Atom samples per t_W.
    #[arg(long, value_parser = parse_count, default_value = "5")]
    pub seeds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    /// Comma-separated W-state times (ns).
    #[arg(long, value_delimiter = ',', value_parser = parse_times, default_value = "1.25,1.5,1.75,2,2.25,2.5,2.75")]
    pub tw: Vec<f64>,
    /// Start of the decay (ns).
    #[arg(long, default_value_t = 1.5)]
    pub t0: f64,
    #[arg(long, default_value_t = 10.0)]
    pub decay_time: f64,
    #[arg(long, default_value_t = 0.05)]
    pub rate_step: f64,
    /// θ points inside the cone.
    #[arg(long, value_parser = parse_count, default_value = "31")]
    pub n_theta: usize,
    #[arg(long, default_value_t = 30.0)]
    pub cone_deg: f64,
}

fn cmd_tw_scan(ctx: &Ctx, a: &TwScanArgs, rec: &mut Recorder) -> Result<()> {
    let opts = TwScanOptions {
        distribution: a.dist.into(),
        atoms: a.n,
        seeds: a.seeds,
        seed: ctx.seed,
        threshold: a.threshold,
        t_ws: a.tw.clone(),
        t0: a.t0,
        decay_time: a.decay_time,
        rate_step: a.rate_step,
        cone_angle: a.cone_deg.to_radians(),
        angular: angular(a.n_theta, ctx.budget),
        exec: ctx.exec,
        ..TwScanOptions::default()
    };
    rec.seeds("tw-scan", (0..a.seeds).map(|i| seeds::derive(ctx.seed, stage::TW_SCAN, i as u64)).collect());
    let scan = rec.stage("tw-scan", |_| Ok(tw_scan(&ctx.cfg, &opts)?))?;
    rec.stage("write", |rec| {
        emit(rec, "tw_scan.csv", |w| Ok(scan.write_csv(w)?))?;
        emit(rec, "tw_scan_mean.csv", |w| {
            writeln!(w, "t_w_ns,cone_population,cone_sem,peak_time_ns")?;
            for m in scan.means() {
                writeln!(w, "{:e},{:e},{:e},{:e}", m.t_w, m.cone, m.cone_sem, m.peak_time)?;
            }
            Ok(())
        })?;
        Ok(())
    })
}

#[derive(Args, Debug, Clone)]
pub struct ScalingArgs {
    #[arg(long, value_enum, default_value = "boltzmann")]
    pub dist: DistArg,
    /// Atoms per sample.
    #[arg(long, value_parser = parse_count, default_value = "100")]
    pub n: usize,
    /// Comma-separated numbers of samples per ensemble.
    #[arg(long, value_delimiter = ',', value_parser = parse_count, default_value = "2,4,8")]
    pub groups: Vec<usize>,
    #[arg(long, value_parser = parse_count, default_value = "8")]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t_w: f64,
    #[arg(long, default_value_t = 1.5)]
    pub t0: f64,
    #[arg(long, default_value_t = 3.0)]
    pub decay_time: f64,
    #[arg(long, default_value_t = 0.02)]
    pub rate_step: f64,
}

fn cmd_scaling(ctx: &Ctx, a: &ScalingArgs, rec: &mut Recorder) -> Result<()> {
    let opts = ScalingOptions {
        distribution: a.dist.into(),
        atoms: a.n,
        group_sizes: a.groups.clone(),
        samples: a.samples,
        seed: ctx.seed,
        threshold: a.threshold,
        t_w: a.t_w,
        t0: a.t0,
        decay_time: a.decay_time,
        rate_step: a.rate_step,
        exec: ctx.exec,
        ..ScalingOptions::default()
    };
    rec.seeds("scaling", (0..a.samples).map(|i| seeds::derive(ctx.seed, stage::SCALING, i as u64)).collect());
    let scaling = rec.stage("scaling", |_| Ok(superradiant_scaling(&ctx.cfg, &opts)?))?;
    rec.stage("write", |rec| {
        emit(rec, "scaling.csv", |w| Ok(scaling.write_csv(w)?))?;
        emit(rec, "scaling_fit.csv", |w| {
            writeln!(w, "slope_per_gamma_per_atom,intercept_per_gamma,r2")?;
            match scaling.fit() {
                Ok(f) => writeln!(w, "{:e},{:e},{:e}", f.slope, f.intercept, f.r2)?,
                Err(_) => writeln!(w, "nan,nan,nan")?,
            }
            Ok(())
        })?;
        Ok(())
    })
}
