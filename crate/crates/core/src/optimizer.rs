//! Nelder–Mead maximization of the mean W-state fidelity over pulse
//! parameters.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::PhysicalConfig;
use crate::ensemble::{AtomSet, FitOrders};
use crate::error::{Error, Result};
use crate::excitation::{
    fidelity, w_state_target, ExcitationModel, LaserPulse, PropagationOptions, PulseSequence, Weighting,
};
use crate::par::Execution;

/// Maps an arbitrary parameter vector onto the feasible set.
pub trait Constraint {
    fn repair(&self, x: &mut [f64]);
    /// Per-coordinate scale used for initial steps and the simplex size.
    fn scale(&self, i: usize, x0: f64) -> f64;
}

/// Closed per-coordinate intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension { expected: lower.len(), found: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config(String::from("every lower bound must not exceed its upper bound")));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Bounds { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }
}

impl Constraint for Bounds {
    fn repair(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    fn scale(&self, i: usize, x0: f64) -> f64 {
        let w = self.upper[i] - self.lower[i];
        if w.is_finite() && w > 0.0 {
            w
        } else if x0 != 0.0 {
            x0.abs()
        } else {
            0.005
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    SimplexSize,
    FunctionSpread,
    EvaluationBudget,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Simplex size, relative to each coordinate's scale.
    pub xtol: f64,
    /// Spread of objective values across the simplex.
    pub ftol: f64,
    /// Initial step as a fraction of each coordinate's scale.
    pub initial_step: f64,
    pub maximize: bool,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 2000, xtol: 1e-6, ftol: 1e-10, initial_step: 0.05, maximize: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub evaluations: usize,
    /// Objective values of the best and worst vertices.
    pub best: f64,
    pub worst: f64,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Objective value at the starting point.
    pub initial: Option<f64>,
    pub records: Vec<IterationRecord>,
    pub evaluations: usize,
    pub termination: Option<Termination>,
}

impl OptimizationTrace {
    pub fn write_csv<W: Write>(&self, mut w: W, names: &[&str]) -> Result<()> {
        write!(w, "iteration,evaluations,best,worst")?;
        for n in names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(w, "{},{},{:e},{:e}", r.iteration, r.evaluations, r.best, r.worst)?;
            for p in &r.params {
                write!(w, ",{p:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Simplex search with reflection 1, expansion 2, contraction ½ and shrink ½.
/// Every evaluated point is first repaired by `constraint`. Returns the best
/// point, its objective value and the iteration trace.
pub fn nelder_mead<F>(
    mut objective: F,
    x0: &[f64],
    constraint: &dyn Constraint,
    opts: &NelderMeadOptions,
) -> Result<(Vec<f64>, f64, OptimizationTrace)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let dim = x0.len();
    let sign = if opts.maximize { -1.0 } else { 1.0 };
    let mut trace = OptimizationTrace::default();
    let scales: Vec<f64> = (0..dim).map(|i| constraint.scale(i, x0[i])).collect();

    let mut eval = |x: &mut Vec<f64>, trace: &mut OptimizationTrace| -> Result<f64> {
        constraint.repair(x);
        let v = objective(x)?;
        trace.evaluations += 1;
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective { trace: Box::new(trace.clone()) });
        }
        Ok(sign * v)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut start = x0.to_vec();
    let f0 = eval(&mut start, &mut trace)?;
    trace.initial = Some(sign * f0);
    simplex.push((start.clone(), f0));
    for i in 0..dim {
        let mut x = start.clone();
        let step = opts.initial_step * scales[i];
        x[i] += step;
        constraint.repair(&mut x);
        if (x[i] - start[i]).abs() < 0.5 * step {
            x[i] = start[i] - step;
        }
        let f = eval(&mut x, &mut trace)?;
        simplex.push((x, f));
    }

    let mut iteration = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[dim].1);
        trace.records.push(IterationRecord {
            iteration,
            evaluations: trace.evaluations,
            best: sign * best,
            worst: sign * worst,
            params: simplex[0].0.clone(),
        });
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).zip(&scales).map(|((a, b), s)| (a - b).abs() / s))
            .fold(0.0, f64::max);
        if size <= opts.xtol {
            trace.termination = Some(Termination::SimplexSize);
            break;
        }
        if (worst - best).abs() <= opts.ftol {
            trace.termination = Some(Termination::FunctionSpread);
            break;
        }
        if trace.evaluations >= opts.max_evals {
            trace.termination = Some(Termination::EvaluationBudget);
            break;
        }
        iteration += 1;

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + coef * (c - w)).collect()
        };
        let mut xr = along(1.0);
        let fr = eval(&mut xr, &mut trace)?;
        if fr < simplex[0].1 {
            let mut xe = along(2.0);
            let fe = eval(&mut xe, &mut trace)?;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (mut xc, outside) = if fr < simplex[dim].1 { (along(0.5), true) } else { (along(-0.5), false) };
        let fc = eval(&mut xc, &mut trace)?;
        if (outside && fc <= fr) || (!outside && fc < simplex[dim].1) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = x_best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            let f = eval(&mut x, &mut trace)?;
            *v = (x, f);
        }
    }
    let (x, f) = simplex.swap_remove(0);
    Ok((x, sign * f, trace))
}

/// Parameterization of a [`PulseSequence`] with bounds on every entry and on
/// the total duration t₀.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSpace {
    /// Lasers 1 and 2 share one window [0, Δt₁₂].
    pub tied: bool,
    pub bounds: Bounds,
    pub total_duration: (f64, f64),
}

impl PulseSpace {
    /// Layout [Δt₁₂, t_{s,3}, Δt₃, Ω₁, Ω₂, Ω₃].
    pub fn tied() -> Self {
        PulseSpace {
            tied: true,
            bounds: Bounds {
                lower: vec![0.1, 0.0, 0.05, 0.0, 0.0, 0.0],
                upper: vec![1.75, 1.7, 1.0, 300.0, 300.0, 300.0],
            },
            total_duration: (1.25, 1.75),
        }
    }

    /// Layout [t_{s,1..3}, Δt_{1..3}, Ω_{1..3}].
    pub fn untied() -> Self {
        PulseSpace {
            tied: false,
            bounds: Bounds {
                lower: vec![0.0, 0.0, 0.0, 0.05, 0.05, 0.05, 0.0, 0.0, 0.0],
                upper: vec![1.7, 1.7, 1.7, 1.75, 1.75, 1.0, 300.0, 300.0, 300.0],
            },
            total_duration: (1.25, 1.75),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        if self.tied {
            vec!["gap12_ns", "start3_ns", "duration3_ns", "rabi1_rad_per_ns", "rabi2_rad_per_ns", "rabi3_rad_per_ns"]
        } else {
            vec![
                "start1_ns",
                "start2_ns",
                "start3_ns",
                "duration1_ns",
                "duration2_ns",
                "duration3_ns",
                "rabi1_rad_per_ns",
                "rabi2_rad_per_ns",
                "rabi3_rad_per_ns",
            ]
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn to_pulses(&self, x: &[f64]) -> PulseSequence {
        if self.tied {
            PulseSequence::tied(x[0], x[1], x[2], [x[3], x[4], x[5]])
        } else {
            let l = |j: usize| LaserPulse { start: x[j], duration: x[3 + j], rabi: x[6 + j] };
            PulseSequence { laser1: l(0), laser2: l(1), laser3: l(2) }
        }
    }

    pub fn from_pulses(&self, p: &PulseSequence) -> Vec<f64> {
        if self.tied {
            vec![p.gap12(), p.laser3.start, p.laser3.duration, p.laser1.rabi, p.laser2.rabi, p.laser3.rabi]
        } else {
            let l = p.lasers();
            vec![
                l[0].start, l[1].start, l[2].start, l[0].duration, l[1].duration, l[2].duration, l[0].rabi, l[1].rabi,
                l[2].rabi,
            ]
        }
    }

    /// True when `x` satisfies every bound including the t₀ interval.
    pub fn feasible(&self, x: &[f64]) -> bool {
        let t0 = self.to_pulses(x).total_duration();
        self.bounds.contains(x) && t0 >= self.total_duration.0 - 1e-12 && t0 <= self.total_duration.1 + 1e-12
    }

    fn laser3_slots(&self) -> (usize, usize) {
        if self.tied { (1, 2) } else { (2, 5) }
    }
}

impl Constraint for PulseSpace {
    /// Clamps to the box, then shortens pulses ending after the largest t₀
    /// and stretches (or delays) laser 3 when t₀ is too short.
    fn repair(&self, x: &mut [f64]) {
        self.bounds.repair(x);
        let (lo, hi) = self.total_duration;
        let ends: Vec<(usize, usize)> = if self.tied { vec![(usize::MAX, 0), (1, 2)] } else { vec![(0, 3), (1, 4), (2, 5)] };
        for &(s, d) in &ends {
            let start = if s == usize::MAX { 0.0 } else { x[s] };
            if start + x[d] > hi {
                x[d] = (hi - start).max(self.bounds.lower[d]);
                if s != usize::MAX && x[s] + x[d] > hi {
                    x[s] = (hi - x[d]).max(self.bounds.lower[s]);
                }
            }
        }
        if self.to_pulses(x).total_duration() < lo {
            let (s, d) = self.laser3_slots();
            x[d] = (lo - x[s]).clamp(self.bounds.lower[d], self.bounds.upper[d]);
            if x[s] + x[d] < lo {
                x[s] = (lo - x[d]).clamp(self.bounds.lower[s], self.bounds.upper[s]);
            }
        }
    }

    fn scale(&self, i: usize, x0: f64) -> f64 {
        self.bounds.scale(i, x0)
    }
}

/// Mean W-state fidelity over a fixed sample set as a function of the pulse
/// parameters.
#[derive(Clone, Debug)]
pub struct OptimizationProblem {
    pub cfg: PhysicalConfig,
    pub models: Vec<ExcitationModel>,
    pub space: PulseSpace,
    pub t_w: f64,
    pub weighting: Weighting,
    /// Propagation settings for each sample; sample-level parallelism is set
    /// by `exec`.
    pub propagation: PropagationOptions,
    pub exec: Execution,
}

#[derive(Clone, Debug)]
pub struct OptimizationOutcome {
    pub params: Vec<f64>,
    pub pulses: PulseSequence,
    pub mean_fidelity: f64,
    pub initial_fidelity: f64,
    pub trace: OptimizationTrace,
}

impl OptimizationProblem {
    pub fn new(samples: Vec<AtomSet>, cfg: PhysicalConfig, space: PulseSpace, exec: Execution) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config(String::from("optimization needs at least one sample")));
        }
        let models = exec
            .map_slice(&samples, |a| ExcitationModel::new(a.clone(), &cfg, FitOrders::default(), Execution::Sequential))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(OptimizationProblem {
            cfg,
            models,
            space,
            t_w: 2.0,
            weighting: Weighting::Rabi,
            propagation: PropagationOptions { exec: Execution::Sequential, ..Default::default() },
            exec,
        })
    }

    /// Per-sample fidelities for `pulses`, in sample order.
    pub fn fidelities(&self, pulses: &PulseSequence) -> Result<Vec<f64>> {
        let results = self.exec.map_range(self.models.len(), |i| {
            let m = &self.models[i];
            let run = || -> Result<f64> {
                let out = m.excite(&self.cfg, pulses, &self.propagation)?;
                let target = w_state_target(&m.atoms, &self.cfg, pulses, &m.basis, self.t_w, self.weighting)?;
                fidelity(&out.state, &target)
            };
            run().map_err(|e| Error::Objective { sample: i, source: Box::new(e) })
        });
        results.into_iter().collect()
    }

    /// Mean fidelity F_W for the parameter vector `x` (repaired first).
    pub fn objective_fw(&self, x: &[f64]) -> Result<f64> {
        let mut x = x.to_vec();
        self.space.repair(&mut x);
        let f = self.fidelities(&self.space.to_pulses(&x))?;
        Ok(f.iter().sum::<f64>() / f.len() as f64)
    }

    pub fn optimize(&self, start: &PulseSequence, opts: &NelderMeadOptions) -> Result<OptimizationOutcome> {
        let mut x0 = self.space.from_pulses(start);
        self.space.repair(&mut x0);
        let opts = NelderMeadOptions { maximize: true, ..*opts };
        let (params, best, trace) = nelder_mead(|x| self.objective_fw(x), &x0, &self.space, &opts)?;
        Ok(OptimizationOutcome {
            pulses: self.space.to_pulses(&params),
            params,
            mean_fidelity: best,
            initial_fidelity: trace.initial.unwrap_or(best),
            trace,
        })
    }
}
