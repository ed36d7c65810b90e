use std::collections::{BTreeMap, BTreeSet};

use super::strip::{fresh_name, StripMined};
use super::DaeError;
use crate::cfg::{dce, simplify_cfg};
use crate::dir::{Block, Function, FunctionKind, IdGen, InstrId, Op, OriginTag, Reg, Terminator};

/// Clones the slice preheader and the loop into a standalone function whose
/// parameters are the registers it reads but does not define. Every load
/// and prefetch carries an origin tag.
fn clone_slice(sm: &StripMined, lp_body: &BTreeSet<String>, name: String, ids: &mut IdGen) -> Function {
    let mut labels: BTreeSet<String> = sm.func.blocks.iter().map(|b| b.label.clone()).collect();
    let exit = fresh_name("slice.exit", &mut labels);
    let mut blocks: Vec<Block> =
        sm.func.blocks.iter().filter(|b| b.label == sm.slice_pre || lp_body.contains(&b.label)).cloned().collect();
    for b in &mut blocks {
        b.term.retarget(&sm.slice_latch, &exit);
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
    blocks.push(Block::new(exit, Terminator::Ret(None)));

    let mut f = Function { name, params: Vec::new(), kind: FunctionKind::Access, blocks };
    let defined: BTreeSet<&Reg> = f.def_sites().into_keys().collect();
    let free: BTreeSet<Reg> = f.used_regs().into_iter().filter(|r| !defined.contains(r)).cloned().collect();
    f.params = free.into_iter().collect();
    f
}

/// Drops everything the roots and the control flow do not need, turns
/// unused root loads into prefetches, and cleans up the CFG, until stable.
pub(crate) fn finalize(mut f: Function, roots: &BTreeSet<InstrId>) -> Function {
    loop {
        let mut g = dce(&f, roots);
        let unused: BTreeSet<InstrId> = crate::cfg::unused_loads(&g).into_iter().collect();
        for b in &mut g.blocks {
            for i in &mut b.body {
                if roots.contains(&i.id) && unused.contains(&i.id) {
                    if let Op::Load { base, offset, .. } = &i.op {
                        i.op = Op::Prefetch { base: base.clone(), offset: *offset };
                    }
                }
            }
        }
        let mut g = simplify_cfg(&g);
        let used: BTreeSet<Reg> = g.used_regs().into_iter().cloned().collect();
        g.params.retain(|r| used.contains(r));
        if g == f {
            return f;
        }
        f = g;
    }
}

fn tagged_with(f: &Function, set: &BTreeSet<InstrId>) -> BTreeSet<InstrId> {
    f.instructions().filter(|i| i.origin.is_some_and(|t| set.contains(&t.origin_load_id))).map(|i| i.id).collect()
}

/// Access phase for one slice of a strip-mined loop, prefetching `targets`
/// (ids of loads in the original loop).
pub fn access_from_strip_mined(
    sm: &StripMined,
    lp_body: &BTreeSet<String>,
    targets: &BTreeSet<InstrId>,
    name: String,
    ids: &mut IdGen,
) -> Function {
    let f = clone_slice(sm, lp_body, name, ids);
    let roots = tagged_with(&f, targets);
    finalize(f, &roots)
}

/// Removes prefetches of non-critical loads from a base access phase and
/// cleans up what no longer feeds a surviving load, prefetch, or branch.
/// Instruction ids are kept.
pub fn specialize_access(base: &Function, critical: &BTreeSet<InstrId>) -> Result<Function, DaeError> {
    let mut f = base.clone();
    if let Some(stem) = f.name.strip_suffix(".base_access") {
        f.name = format!("{stem}.access");
    }
    for b in &mut f.blocks {
        for i in &b.body {
            if i.op.is_prefetch() && i.origin.is_none() {
                return Err(DaeError::UntaggedPrefetch(i.id));
            }
        }
        b.body.retain(|i| !i.op.is_prefetch() || i.origin.is_some_and(|t| critical.contains(&t.origin_load_id)));
    }
    let roots = tagged_with(&f, critical);
    Ok(finalize(f, &roots))
}

/// Map from prefetch id to origin tag.
pub fn prefetch_tags(f: &Function) -> BTreeMap<InstrId, OriginTag> {
    f.instructions().filter(|i| i.op.is_prefetch()).filter_map(|i| i.origin.map(|t| (i.id, t))).collect()
}

/// Gives every phi and instruction a fresh id.
pub fn renumber(f: &Function, ids: &mut IdGen) -> Function {
    let mut g = f.clone();
    for b in &mut g.blocks {
        for p in &mut b.phis {
            p.id = ids.fresh();
        }
        for i in &mut b.body {
            i.id = ids.fresh();
        }
    }
    g
}
