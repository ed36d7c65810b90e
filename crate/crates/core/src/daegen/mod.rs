//! Decoupled access/execute generation: strip-mining, access-phase
//! construction, base-access generation, and specialization against a set of
//! critical loads.

mod access;
mod strip;

use std::collections::{BTreeMap, BTreeSet};

pub use access::{access_from_strip_mined, prefetch_tags, renumber, specialize_access};
pub use strip::{strip_mine, strip_mine_layout, StripMined};

use crate::cfg::{LoopInfo, SkippedLoop};
use crate::dir::{validate_program, Diagnostic, Function, FunctionKind, IdGen, InstrId, OriginTag, Program};
use crate::machsim::MachineConfig;
use crate::profiler::ProfileReport;

pub const S_MIN: u64 = 8;
pub const S_MAX: u64 = 4096;
pub const S_DEFAULT: u64 = 256;
pub const RHO_DEFAULT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DaeError {
    #[error("loop at `{0}` is not in canonical counted form")]
    NonCanonical(String),
    #[error("slice size {0} is not usable")]
    InvalidSlice(u64),
    #[error("instruction [{0}] is not a load")]
    NotALoad(InstrId),
    #[error("load [{0}] is outside the loop")]
    OutsideLoop(InstrId),
    #[error("prefetch [{0}] has no origin tag")]
    UntaggedPrefetch(InstrId),
    #[error("loop at `{0}` stores to memory and its access phase needs real loads")]
    StoreHazard(String),
    #[error("no qualifying loop{}", skipped_list(.0))]
    NoQualifyingLoop(Vec<SkippedLoop>),
    #[error("generated program is invalid: {}", diag_list(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("program has no entry function")]
    NoEntry,
}

fn skipped_list(s: &[SkippedLoop]) -> String {
    s.iter().map(|l| format!("\n  {}: {}", l.header, l.reason)).collect()
}

fn diag_list(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// The chosen slice size and what it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceParams {
    pub slice_size: u64,
    pub footprint_per_iter: Option<f64>,
    pub cache_capacity: u64,
    pub rho: f64,
}

/// Largest slice whose footprint fits in a `rho` share of L1, clamped to
/// `[S_MIN, S_MAX]`; `s_default` when the loop touches no memory or was
/// never profiled.
pub fn choose_slice_size(r: &ProfileReport, lp: &LoopInfo, m: &MachineConfig, rho: f64, s_default: u64) -> SliceParams {
    let footprint = r.bytes_per_iter(&lp.header);
    let slice_size = match footprint {
        Some(b) if b > 0.0 => {
            let raw = (rho * m.l1.capacity as f64 / b).floor();
            (raw.max(0.0) as u64).clamp(S_MIN, S_MAX)
        }
        _ => s_default,
    };
    SliceParams { slice_size, footprint_per_iter: footprint, cache_capacity: m.l1.capacity, rho }
}

fn check_targets(f: &Function, lp: &LoopInfo, targets: &BTreeSet<InstrId>) -> Result<(), DaeError> {
    let loads: BTreeSet<InstrId> = lp.loads(f).into_iter().collect();
    for &t in targets {
        if loads.contains(&t) {
            continue;
        }
        return Err(match f.instruction(t) {
            Some(i) if i.op.is_load() => DaeError::OutsideLoop(t),
            _ => DaeError::NotALoad(t),
        });
    }
    Ok(())
}

/// Access phase of one slice of `lp` that prefetches `targets`.
pub fn make_access_phase(
    f: &Function,
    lp: &LoopInfo,
    s: u64,
    targets: &BTreeSet<InstrId>,
    ids: &mut IdGen,
) -> Result<Function, DaeError> {
    check_targets(f, lp, targets)?;
    let sm = strip_mine_layout(f, lp, s, ids)?;
    Ok(access_from_strip_mined(&sm, &lp.body, targets, format!("{}.access", f.name), ids))
}

/// Access phase that prefetches every load of the loop.
pub fn make_base_access(f: &Function, lp: &LoopInfo, s: u64, ids: &mut IdGen) -> Result<Function, DaeError> {
    let sm = strip_mine_layout(f, lp, s, ids)?;
    let all: BTreeSet<InstrId> = lp.loads(f).into_iter().collect();
    Ok(access_from_strip_mined(&sm, &lp.body, &all, format!("{}.base_access", f.name), ids))
}

/// The execute version: the strip-mined function with fresh ids and loads
/// tagged with their original ids.
pub fn make_execute(sm: &StripMined, original_name: &str, ids: &mut IdGen) -> Function {
    let mut g = sm.func.clone();
    g.name = format!("{original_name}.execute");
    g.kind = FunctionKind::Execute;
    for b in &mut g.blocks {
        for p in &mut b.phis {
            p.id = ids.fresh();
        }
        for i in &mut b.body {
            if i.op.is_load() && i.origin.is_none() {
                i.origin = Some(OriginTag { origin_load_id: i.id });
            }
            i.id = ids.fresh();
        }
    }
    g
}

/// Everything needed to run one loop in decoupled form.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    pub original: Function,
    pub loop_info: LoopInfo,
    pub slice_size: u64,
    pub execute: Function,
    /// Label in `execute` where each slice starts; the simulator runs the
    /// access phase whenever control reaches it.
    pub slice_entry: String,
    pub access: Function,
    pub base_access: Option<Function>,
    /// Prefetch id to origin tag, for `access`.
    pub tags: BTreeMap<InstrId, OriginTag>,
    /// Loads the access phase targets.
    pub targets: BTreeSet<InstrId>,
}

impl PhasePlan {
    /// `p` extended with the generated functions.
    pub fn program(&self, p: &Program) -> Program {
        let mut q = p.clone();
        q.functions.push(self.execute.clone());
        q.functions.push(self.access.clone());
        if let Some(b) = &self.base_access {
            q.functions.push(b.clone());
        }
        q
    }
}

/// Builds the full plan for `lp` in the entry function of `p`. With
/// `via_base`, the access phase is produced by specializing a base access
/// phase (which is kept in the plan); otherwise it is generated directly.
pub fn plan_loop(
    p: &Program,
    lp: &LoopInfo,
    s: u64,
    critical: &BTreeSet<InstrId>,
    via_base: bool,
) -> Result<PhasePlan, DaeError> {
    let f = p.entry_function().ok_or(DaeError::NoEntry)?;
    let loads: BTreeSet<InstrId> = lp.loads(f).into_iter().collect();
    let targets: BTreeSet<InstrId> = critical.intersection(&loads).copied().collect();
    let mut ids = IdGen::after_program(p);
    let sm = strip_mine_layout(f, lp, s, &mut ids)?;
    let (access, base_access) = if via_base {
        let base = access_from_strip_mined(&sm, &lp.body, &loads, format!("{}.base_access", f.name), &mut ids);
        let spec = renumber(&specialize_access(&base, &targets)?, &mut ids);
        (spec, Some(base))
    } else {
        (access_from_strip_mined(&sm, &lp.body, &targets, format!("{}.access", f.name), &mut ids), None)
    };
    if lp.has_stores(f) && access.instructions().any(|i| i.op.is_load()) {
        return Err(DaeError::StoreHazard(lp.header.clone()));
    }
    let execute = make_execute(&sm, &f.name, &mut ids);
    let plan = PhasePlan {
        original: f.clone(),
        loop_info: lp.clone(),
        slice_size: s,
        execute,
        slice_entry: sm.slice_pre.clone(),
        tags: prefetch_tags(&access),
        access,
        base_access,
        targets,
    };
    let diags = validate_program(&plan.program(p));
    if !diags.is_empty() {
        return Err(DaeError::Invalid(diags));
    }
    Ok(plan)
}
