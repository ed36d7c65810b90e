//! Offline load profiling under a blocking-load cache model, and the
//! critical-load classification that drives access-phase generation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfg::find_loops;
use crate::dir::{
    validate_program, ExecError, ExecTrace, Frame, InstrId, Lowered, Memory, Observer, Program, DEFAULT_FUEL,
};
use crate::machsim::{Cache, MachineConfig};

pub const PROFILE_VERSION: u32 = 1;

/// Iterations per footprint window.
pub const FOOTPRINT_WINDOW: u64 = 256;

/// Inputs that fix one execution: memory size, input seed, and fuel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workload {
    pub mem_size: u64,
    pub input_seed: u64,
    pub fuel: u64,
}

impl Workload {
    pub fn for_program(p: &Program, input_seed: u64) -> Self {
        Workload { mem_size: p.required_memory(), input_seed, fuel: DEFAULT_FUEL }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStats {
    pub id: InstrId,
    pub exec: u64,
    pub miss: u64,
    pub stall: u64,
    pub lines: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopFootprint {
    pub header: String,
    pub bytes_per_iter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileReport {
    pub version: u32,
    pub program_digest: String,
    pub machine_digest: String,
    pub total_stall_cycles: u64,
    /// Every executed static load, ordered by id.
    pub loads: Vec<LoadStats>,
    pub loops: Vec<LoopFootprint>,
}

impl ProfileReport {
    pub fn load(&self, id: InstrId) -> Option<&LoadStats> {
        self.loads.iter().find(|l| l.id == id)
    }

    pub fn bytes_per_iter(&self, header: &str) -> Option<f64> {
        self.loops.iter().find(|l| l.header == header).map(|l| l.bytes_per_iter)
    }

    /// Fraction of all stall cycles caused by `id`; zero when nothing stalls.
    pub fn stall_share(&self, id: InstrId) -> f64 {
        match (self.load(id), self.total_stall_cycles) {
            (Some(s), t) if t > 0 => s.stall as f64 / t as f64,
            _ => 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let r: ProfileReport = serde_json::from_str(text).map_err(|e| ProfileError::Malformed {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        if r.version != PROFILE_VERSION {
            return Err(ProfileError::Version(r.version));
        }
        Ok(r)
    }

    /// Errors when the report was recorded for a different program, unless
    /// `allow_stale` is set.
    pub fn check_program(&self, p: &Program, allow_stale: bool) -> Result<(), ProfileError> {
        let digest = p.digest();
        if !allow_stale && digest != self.program_digest {
            return Err(ProfileError::DigestMismatch { expected: digest, found: self.program_digest.clone() });
        }
        Ok(())
    }
}

/// Converts serde_json's one-based line and column (column 0 meaning the
/// start of the line) to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed profile at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unsupported profile version {0}")]
    Version(u32),
    #[error("profile is stale: program digest is {expected} but profile records {found}")]
    DigestMismatch { expected: String, found: String },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

pub fn write_profile(r: &ProfileReport, path: &Path) -> Result<(), ProfileError> {
    std::fs::write(path, r.to_json())?;
    Ok(())
}

/// Reads a report; pass the program to reject stale profiles.
pub fn read_profile(path: &Path, program: Option<&Program>, allow_stale: bool) -> Result<ProfileReport, ProfileError> {
    let r = ProfileReport::from_json(&std::fs::read_to_string(path)?)?;
    if let Some(p) = program {
        r.check_program(p, allow_stale)?;
    }
    Ok(r)
}

/// Loads whose stall share reaches the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSet {
    pub load_ids: BTreeSet<InstrId>,
    pub threshold: f64,
}

impl CriticalSet {
    pub fn contains(&self, id: InstrId) -> bool {
        self.load_ids.contains(&id)
    }
}

/// A load is critical when it missed at least once and its share of total
/// stall cycles is at least `theta`.
pub fn classify_critical(r: &ProfileReport, theta: f64) -> CriticalSet {
    let load_ids = r
        .loads
        .iter()
        .filter(|l| l.miss > 0 && r.total_stall_cycles > 0)
        .filter(|l| l.stall as f64 / r.total_stall_cycles as f64 >= theta)
        .map(|l| l.id)
        .collect();
    CriticalSet { load_ids, threshold: theta }
}

#[derive(Default)]
struct LoadAcc {
    exec: u64,
    miss: u64,
    lines: HashSet<u64>,
}

struct LoopAcc {
    header: u32,
    latch: u32,
    iterations: u64,
    window_start: u64,
    window: HashSet<u64>,
    distinct: u64,
}

struct Profiler {
    cache: Cache,
    stall_per_miss: u64,
    loads: HashMap<u32, LoadAcc>,
    loops: Vec<LoopAcc>,
    /// For each block, the loops (indices into `loops`) containing it.
    block_loops: Vec<Vec<usize>>,
    prev_block: Option<u32>,
    cur_block: u32,
}

impl Profiler {
    fn touch_footprint(&mut self, line: u64) {
        for &k in &self.block_loops[self.cur_block as usize] {
            self.loops[k].window.insert(line);
        }
    }
}

impl Observer for Profiler {
    fn enter_block(&mut self, block: u32) {
        let prev = self.prev_block.replace(block);
        self.cur_block = block;
        for l in &mut self.loops {
            if l.header == block && prev == Some(l.latch) {
                l.iterations += 1;
                if l.iterations - l.window_start >= FOOTPRINT_WINDOW {
                    l.distinct += l.window.len() as u64;
                    l.window.clear();
                    l.window_start = l.iterations;
                }
            }
        }
    }

    fn load(&mut self, idx: u32, addr: u64) {
        let line = self.cache.line_of(addr);
        let hit = self.cache.access(line);
        let acc = self.loads.entry(idx).or_default();
        acc.exec += 1;
        acc.miss += u64::from(!hit);
        acc.lines.insert(line);
        self.touch_footprint(line);
    }

    fn store(&mut self, _idx: u32, addr: u64) {
        let line = self.cache.line_of(addr);
        self.cache.access(line);
        self.touch_footprint(line);
    }

    fn prefetch(&mut self, _idx: u32, addr: Option<u64>) {
        if let Some(a) = addr {
            let line = self.cache.line_of(a);
            self.cache.insert(line);
        }
    }
}

/// Profiles the entry function at `f_max` with blocking loads.
pub fn profile_run(p: &Program, m: &MachineConfig, w: &Workload) -> Result<ProfileReport, ExecError> {
    profile_traced(p, m, w).map(|(r, _)| r)
}

/// As [`profile_run`], also returning the execution trace.
pub fn profile_traced(p: &Program, m: &MachineConfig, w: &Workload) -> Result<(ProfileReport, ExecTrace), ExecError> {
    let diags = validate_program(p);
    if !diags.is_empty() {
        return Err(ExecError::Invalid(diags));
    }
    let f = p.entry_function().ok_or_else(|| ExecError::MissingFunction(p.entry.clone()))?;
    let lowered = Lowered::new(f);
    let scan = find_loops(f);
    let mut block_loops = vec![Vec::new(); f.blocks.len()];
    let mut loops = Vec::new();
    for (k, l) in scan.loops.iter().enumerate() {
        for b in &l.body {
            block_loops[f.block_index(b).expect("loop block")].push(k);
        }
        loops.push(LoopAcc {
            header: f.block_index(&l.header).unwrap() as u32,
            latch: f.block_index(&l.latch).unwrap() as u32,
            iterations: 0,
            window_start: 0,
            window: HashSet::new(),
            distinct: 0,
        });
    }
    let mut prof = Profiler {
        cache: Cache::from_config(&m.l1),
        stall_per_miss: m.mem_latency_cycles(m.f_max_mhz()),
        loads: HashMap::new(),
        loops,
        block_loops,
        prev_block: None,
        cur_block: 0,
    };

    let mut mem = Memory::for_program(p, w.mem_size, w.input_seed)?;
    let mut frame = Frame::new(&lowered, &[]);
    let mut output = Vec::new();
    let mut fuel = w.fuel;
    frame.run(&mut mem, &mut output, &mut prof, &mut fuel, None).map_err(|e| match e {
        ExecError::FuelExhausted(_) => ExecError::FuelExhausted(w.fuel),
        other => other,
    })?;

    let by_id: BTreeMap<InstrId, &LoadAcc> =
        prof.loads.iter().map(|(&idx, acc)| (lowered.ids[idx as usize], acc)).collect();
    let loads: Vec<LoadStats> = by_id
        .into_iter()
        .map(|(id, a)| LoadStats {
            id,
            exec: a.exec,
            miss: a.miss,
            stall: a.miss * prof.stall_per_miss,
            lines: a.lines.len() as u64,
        })
        .collect();
    let line = m.l1.line as f64;
    let loop_stats = scan
        .loops
        .iter()
        .zip(&prof.loops)
        .map(|(info, acc)| {
            let distinct = acc.distinct + acc.window.len() as u64;
            let bytes_per_iter = if acc.iterations == 0 { 0.0 } else { distinct as f64 * line / acc.iterations as f64 };
            LoopFootprint { header: info.header.clone(), bytes_per_iter }
        })
        .collect();
    let report = ProfileReport {
        version: PROFILE_VERSION,
        program_digest: p.digest(),
        machine_digest: m.digest(),
        total_stall_cycles: loads.iter().map(|l| l.stall).sum(),
        loads,
        loops: loop_stats,
    };
    let trace = ExecTrace { output, memory_digest: mem.digest(), retired_by_static_id: frame.retired_by_id() };
    Ok((report, trace))
}

/// The `k` loads with the most stall cycles, largest first.
pub fn top_stalls(r: &ProfileReport, k: usize) -> Vec<&LoadStats> {
    let mut v: Vec<&LoadStats> = r.loads.iter().collect();
    v.sort_by(|a, b| b.stall.cmp(&a.stall).then(a.id.cmp(&b.id)));
    v.truncate(k);
    v
}
