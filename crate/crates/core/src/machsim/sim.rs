use std::collections::HashSet;

use serde::Serialize;

use super::power::power_unchecked;
use super::schedule::{Charge, PhaseSchedule, PhaseTarget};
use super::{ghz_to_mhz, ns_to_ps, Cache, ConfigError, MachineConfig};
use crate::daegen::PhasePlan;
use crate::dir::{validate_program, ExecError, Exit, Frame, Lowered, Memory, NullObserver, Observer, Program};
use crate::profiler::Workload;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("schedule needs a phase plan for {0:?} runs")]
    MissingPlan(PhaseTarget),
    #[error("run {run}: frequency {ghz} GHz is outside [f_min, f_max] or not whole MHz")]
    Frequency { run: usize, ghz: f64 },
    #[error("run {run}: frequency change and DVFS charge disagree")]
    DvfsMismatch { run: usize },
    #[error("run {run}: {message}")]
    Schedule { run: usize, message: String },
    #[error("execute phase did not finish by the end of the schedule")]
    Unfinished,
    #[error("reports are for different programs or inputs")]
    Mismatch,
    #[error("baseline has zero time or energy")]
    ZeroBaseline,
}

/// Cycles, time, energy, and work of one category or run. Time is in ps
/// and energy in pJ (normalised watts times ps), both exact integers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Totals {
    pub cycles: u64,
    pub wall_ps: u64,
    pub energy_pj: u64,
    pub instructions: u64,
    pub ipc: f64,
}

impl Totals {
    fn add(&mut self, o: &Totals) {
        self.cycles += o.cycles;
        self.wall_ps += o.wall_ps;
        self.energy_pj += o.energy_pj;
        self.instructions += o.instructions;
        self.ipc = if self.cycles == 0 { 0.0 } else { self.instructions as f64 / self.cycles as f64 };
    }

    pub fn wall_ns(&self) -> f64 {
        self.wall_ps as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub target: PhaseTarget,
    pub slice_index: Option<u64>,
    pub frequency_mhz: u64,
    pub run: Totals,
    /// Charges attached to this run; counted in the overhead category.
    pub overhead: Totals,
    pub demand_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub program_digest: String,
    pub input_seed: u64,
    pub output: Vec<i64>,
    pub memory_digest: String,
    pub runs: Vec<RunRecord>,
    pub access: Totals,
    pub execute: Totals,
    pub overhead: Totals,
    pub total: Totals,
    pub normalized_time: Option<f64>,
    pub normalized_energy: Option<f64>,
    /// Lines brought in by a prefetch and evicted before any demand access.
    pub prefetched_evicted_unused: u64,
}

#[derive(Debug, Clone, Copy)]
struct Mshr {
    line: u64,
    done: u64,
    seq: u64,
}

/// Cache and MSHR state shared by all phases of one simulation.
struct Machine {
    cache: Cache,
    mshrs: Vec<Mshr>,
    capacity: usize,
    seq: u64,
    pending: HashSet<u64>,
    evicted_unused: u64,
}

impl Machine {
    fn install(&mut self, line: u64, prefetched: bool) {
        if let Some(old) = self.cache.insert(line) {
            if self.pending.remove(&old) {
                self.evicted_unused += 1;
            }
        }
        if prefetched {
            self.pending.insert(line);
        }
    }

    /// Installs, in completion order, every fill that has arrived by `t`.
    fn complete_until(&mut self, t: u64) {
        if !self.mshrs.iter().any(|m| m.done <= t) {
            return;
        }
        let mut done: Vec<Mshr> = self.mshrs.iter().copied().filter(|m| m.done <= t).collect();
        self.mshrs.retain(|m| m.done > t);
        done.sort_by_key(|m| (m.done, m.seq));
        for m in done {
            self.install(m.line, true);
        }
    }
}

struct Timing<'a> {
    mach: &'a mut Machine,
    now: u64,
    hit: u64,
    latency: u64,
    retired: u64,
    misses: u64,
}

impl Timing<'_> {
    fn drain(&mut self) {
        if let Some(last) = self.mach.mshrs.iter().map(|m| m.done).max() {
            self.now = self.now.max(last);
            self.mach.complete_until(self.now);
        }
    }
}

impl Observer for Timing<'_> {
    fn retire(&mut self) {
        self.now += 1;
        self.retired += 1;
    }

    fn load(&mut self, _idx: u32, addr: u64) {
        let line = self.mach.cache.line_of(addr);
        self.mach.complete_until(self.now);
        if self.mach.cache.touch(line) {
            self.now += self.hit;
        } else if let Some(k) = self.mach.mshrs.iter().position(|m| m.line == line) {
            let m = self.mach.mshrs.remove(k);
            self.now += (m.done - self.now).max(self.hit);
            self.mach.install(line, true);
        } else {
            self.now += self.latency;
            self.misses += 1;
            self.mach.install(line, false);
        }
        self.mach.pending.remove(&line);
    }

    fn store(&mut self, _idx: u32, addr: u64) {
        let line = self.mach.cache.line_of(addr);
        self.mach.complete_until(self.now);
        if !self.mach.cache.touch(line) {
            self.mach.install(line, false);
        }
        self.mach.pending.remove(&line);
    }

    fn prefetch(&mut self, _idx: u32, addr: Option<u64>) {
        let Some(addr) = addr else { return };
        let line = self.mach.cache.line_of(addr);
        self.mach.complete_until(self.now);
        if self.mach.cache.touch(line) || self.mach.mshrs.iter().any(|m| m.line == line) {
            return;
        }
        if self.mach.mshrs.len() >= self.mach.capacity {
            let earliest = self.mach.mshrs.iter().map(|m| m.done).min().expect("full");
            self.now = self.now.max(earliest);
            self.mach.complete_until(self.now);
        }
        self.mach.seq += 1;
        let seq = self.mach.seq;
        self.mach.mshrs.push(Mshr { line, done: self.now + self.latency, seq });
    }
}

fn wall_ps(cycles: u64, mhz: u64) -> u64 {
    ((cycles as u128 * 1_000_000 + mhz as u128 / 2) / mhz as u128) as u64
}

fn energy_pj(watts: f64, ps: u64) -> u64 {
    (watts * ps as f64).round() as u64
}

/// Runs a schedule on the machine model. The cache starts cold and keeps
/// its contents across runs; outstanding prefetches are drained at the end
/// of every run.
pub fn simulate(
    p: &Program,
    plan: Option<&PhasePlan>,
    sched: &PhaseSchedule,
    m: &MachineConfig,
    w: &Workload,
) -> Result<SimReport, SimError> {
    m.validate()?;
    let full = plan.map_or_else(|| p.clone(), |pl| pl.program(p));
    let diags = validate_program(&full);
    if !diags.is_empty() {
        return Err(ExecError::Invalid(diags).into());
    }
    let entry = p.entry_function().ok_or_else(|| ExecError::MissingFunction(p.entry.clone()))?;
    let original = Lowered::new(entry);
    let execute = plan.map(|pl| Lowered::new(&pl.execute));
    let access = plan.map(|pl| Lowered::new(&pl.access));
    let slice_entry = plan.and_then(|pl| pl.execute.block_index(&pl.slice_entry)).map(|i| i as u32);

    let mut mem = Memory::for_program(p, w.mem_size, w.input_seed)?;
    let mut output = Vec::new();
    let mut fuel = w.fuel;
    let mut mach = Machine {
        cache: Cache::from_config(&m.l1),
        mshrs: Vec::new(),
        capacity: m.mshr_count as usize,
        seq: 0,
        pending: HashSet::new(),
        evicted_unused: 0,
    };
    let mut exec_frame: Option<Frame> = None;
    let mut at_slice_entry = false;
    let mut current_mhz = m.f_max_mhz();
    let (lo, hi) = (m.f_min_mhz(), m.f_max_mhz());
    let switch_ps = ns_to_ps(m.dvfs_switch_ns);
    let base_size =
        plan.map(|pl| pl.base_access.as_ref().unwrap_or(&pl.access).static_instruction_count()).unwrap_or(0) as f64;
    let jit_ps = (m.jit_ns_per_instr * 1000.0 * base_size).round() as u64;

    let mut report = SimReport {
        program_digest: p.digest(),
        input_seed: w.input_seed,
        output: Vec::new(),
        memory_digest: String::new(),
        runs: Vec::new(),
        access: Totals::default(),
        execute: Totals::default(),
        overhead: Totals::default(),
        total: Totals::default(),
        normalized_time: None,
        normalized_energy: None,
        prefetched_evicted_unused: 0,
    };

    for (k, run) in sched.runs.iter().enumerate() {
        let mhz = ghz_to_mhz(run.frequency)
            .filter(|f| (lo..=hi).contains(f))
            .ok_or(SimError::Frequency { run: k, ghz: run.frequency })?;
        let charged = run.charges.iter().any(|c| matches!(c, Charge::DvfsSwitch));
        if charged != (mhz != current_mhz) {
            return Err(SimError::DvfsMismatch { run: k });
        }
        current_mhz = mhz;

        let mut t = Timing {
            mach: &mut mach,
            now: 0,
            hit: m.l1.hit_cycles,
            latency: m.mem_latency_cycles(mhz),
            retired: 0,
            misses: 0,
        };
        let sched_err = |message: &str| SimError::Schedule { run: k, message: message.to_string() };
        match run.target {
            PhaseTarget::Original => {
                let mut frame = Frame::new(&original, &[]);
                frame.run(&mut mem, &mut output, &mut t, &mut fuel, None)?;
            }
            PhaseTarget::Execute => {
                let lowered = execute.as_ref().ok_or(SimError::MissingPlan(PhaseTarget::Execute))?;
                let frame = exec_frame.get_or_insert_with(|| Frame::new(lowered, &[]));
                if frame.finished().is_some() {
                    return Err(sched_err("execute phase has already returned"));
                }
                let exit = frame.run(&mut mem, &mut output, &mut t, &mut fuel, slice_entry)?;
                at_slice_entry = exit == Exit::Yield;
            }
            PhaseTarget::Access => {
                let lowered = access.as_ref().ok_or(SimError::MissingPlan(PhaseTarget::Access))?;
                let frame = exec_frame.as_ref().filter(|_| at_slice_entry);
                let Some(exec) = frame else {
                    return Err(sched_err("access run while execute is not at a slice entry"));
                };
                let f = &plan.expect("access implies plan").access;
                let args = f
                    .params
                    .iter()
                    .map(|r| exec.reg(r).ok_or_else(|| ExecError::MissingArgument(r.clone())))
                    .collect::<Result<Vec<i64>, _>>()?;
                let mut frame = Frame::new(lowered, &args);
                let mut scratch = Vec::new();
                frame.run(&mut mem, &mut scratch, &mut t, &mut fuel, None)?;
            }
        }
        t.drain();

        let cycles = t.now;
        let instructions = t.retired;
        let misses = t.misses;
        let ipc = if cycles == 0 { 0.0 } else { instructions as f64 / cycles as f64 };
        let ps = wall_ps(cycles, mhz);
        let ghz = mhz as f64 / 1000.0;
        let watts = power_unchecked(ghz, ipc.min(m.ipc_max), m);
        let record = Totals { cycles, wall_ps: ps, energy_pj: energy_pj(watts, ps), instructions, ipc };

        let mut overhead = Totals::default();
        for c in &run.charges {
            let (extra_ps, w) = match *c {
                Charge::DvfsSwitch => (switch_ps, power_unchecked(m.f_max, 0.0, m)),
                Charge::Jit => (jit_ps, power_unchecked(m.f_max, m.ipc_max, m)),
                Charge::Profiling(frac) => ((frac.max(0.0) * ps as f64).round() as u64, watts),
            };
            overhead.wall_ps += extra_ps;
            overhead.energy_pj += energy_pj(w, extra_ps);
        }

        let bucket = match run.target {
            PhaseTarget::Access => &mut report.access,
            PhaseTarget::Execute | PhaseTarget::Original => &mut report.execute,
        };
        bucket.add(&record);
        report.overhead.add(&overhead);
        report.runs.push(RunRecord {
            target: run.target,
            slice_index: run.slice_index,
            frequency_mhz: mhz,
            run: record,
            overhead,
            demand_misses: misses,
        });
    }

    if let Some(f) = &exec_frame {
        if f.finished().is_none() {
            return Err(SimError::Unfinished);
        }
    }
    for part in [report.access, report.execute, report.overhead] {
        report.total.add(&part);
    }
    report.output = output;
    report.memory_digest = mem.digest();
    report.prefetched_evicted_unused = mach.evicted_unused;
    Ok(report)
}

/// Fills in the normalised fields relative to `baseline`.
pub fn normalize(report: &SimReport, baseline: &SimReport) -> Result<SimReport, SimError> {
    if report.program_digest != baseline.program_digest || report.input_seed != baseline.input_seed {
        return Err(SimError::Mismatch);
    }
    if baseline.total.wall_ps == 0 || baseline.total.energy_pj == 0 {
        return Err(SimError::ZeroBaseline);
    }
    let mut out = report.clone();
    out.normalized_time = Some(report.total.wall_ps as f64 / baseline.total.wall_ps as f64);
    out.normalized_energy = Some(report.total.energy_pj as f64 / baseline.total.energy_pj as f64);
    Ok(out)
}

/// How many times the execute function of `plan` reaches its slice entry
/// on this workload, found by a plain run.
pub fn count_slices(p: &Program, plan: &PhasePlan, w: &Workload) -> Result<u64, ExecError> {
    let lowered = Lowered::new(&plan.execute);
    let stop = plan.execute.block_index(&plan.slice_entry).map(|i| i as u32);
    let mut mem = Memory::for_program(p, w.mem_size, w.input_seed)?;
    let mut frame = Frame::new(&lowered, &[]);
    let (mut out, mut fuel, mut n) = (Vec::new(), w.fuel, 0);
    while frame.run(&mut mem, &mut out, &mut NullObserver, &mut fuel, stop)? == Exit::Yield {
        n += 1;
    }
    Ok(n)
}
