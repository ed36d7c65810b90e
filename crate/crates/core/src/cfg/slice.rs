use std::collections::{BTreeMap, BTreeSet};

use crate::dir::{Function, InstrId, Op, Reg};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SliceError {
    #[error("instruction [{0}] is not in function")]
    UnknownInstruction(InstrId),
}

/// A set of instruction ids produced by slicing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceSet {
    pub ids: BTreeSet<InstrId>,
}

impl SliceSet {
    pub fn contains(&self, id: InstrId) -> bool {
        self.ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

struct Node<'a> {
    uses: Vec<&'a Reg>,
    side_effect: bool,
}

fn nodes(f: &Function) -> BTreeMap<InstrId, Node<'_>> {
    let mut out = BTreeMap::new();
    for b in &f.blocks {
        for p in &b.phis {
            let uses = p.incoming.iter().map(|(r, _)| r).collect();
            out.insert(p.id, Node { uses, side_effect: false });
        }
        for i in &b.body {
            out.insert(i.id, Node { uses: i.op.uses().collect(), side_effect: i.op.has_side_effect() });
        }
    }
    out
}

/// Everything the seeds transitively depend on through register def-use
/// chains, seeds included. Phis depend on all their incoming values. Stores
/// and `out` never appear in the result, though their operands are followed.
pub fn backward_slice(f: &Function, seeds: &[InstrId]) -> Result<SliceSet, SliceError> {
    let nodes = nodes(f);
    let defs = f.def_sites();
    let mut seen: BTreeSet<InstrId> = BTreeSet::new();
    let mut work = Vec::new();
    for &s in seeds {
        if !nodes.contains_key(&s) {
            return Err(SliceError::UnknownInstruction(s));
        }
        if seen.insert(s) {
            work.push(s);
        }
    }
    while let Some(id) = work.pop() {
        for r in &nodes[&id].uses {
            if let Some(&d) = defs.get(r) {
                if seen.insert(d) {
                    work.push(d);
                }
            }
        }
    }
    seen.retain(|id| !nodes[id].side_effect);
    Ok(SliceSet { ids: seen })
}

/// Keeps the roots, everything they depend on, and everything the
/// terminators depend on. All other phis and instructions are removed.
/// Roots not present in `f` are ignored.
pub fn dce(f: &Function, roots: &BTreeSet<InstrId>) -> Function {
    let defs = f.def_sites();
    let present: BTreeSet<InstrId> = f.all_ids().collect();
    let mut seeds: Vec<InstrId> = roots.iter().copied().filter(|r| present.contains(r)).collect();
    for b in &f.blocks {
        if let Some(r) = b.term.uses() {
            if let Some(&d) = defs.get(r) {
                seeds.push(d);
            }
        }
    }
    let slice = backward_slice(f, &seeds).expect("seeds filtered to present ids");
    let keep = |id: InstrId| slice.contains(id) || roots.contains(&id);
    let mut out = f.clone();
    for b in &mut out.blocks {
        b.phis.retain(|p| keep(p.id));
        b.body.retain(|i| keep(i.id));
    }
    out
}

/// Ids of every load in `f` whose result is never read.
pub fn unused_loads(f: &Function) -> Vec<InstrId> {
    let used: BTreeSet<&Reg> = f.used_regs().into_iter().collect();
    f.instructions().filter(|i| matches!(&i.op, Op::Load { dst, .. } if !used.contains(dst))).map(|i| i.id).collect()
}
