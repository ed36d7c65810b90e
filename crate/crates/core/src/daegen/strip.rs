use std::collections::{BTreeMap, BTreeSet};

use super::DaeError;
use crate::cfg::{find_loops, LoopInfo};
use crate::dir::{BinOp, Block, Function, IdGen, Instruction, Op, Phi, Reg, Terminator};

/// A strip-mined function plus the labels of the blocks strip-mining added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripMined {
    pub func: Function,
    /// Outer-loop test: is there another slice to run?
    pub slice_head: String,
    /// Sets up one slice; every slice enters the inner loop from here.
    pub slice_pre: String,
    /// Back edge of the outer loop.
    pub slice_latch: String,
    /// Inner-loop header (the original header).
    pub header: String,
}

pub(crate) fn fresh_name(base: &str, taken: &mut BTreeSet<String>) -> String {
    let mut name = base.to_string();
    let mut k = 1;
    while taken.contains(&name) {
        name = format!("{base}.{k}");
        k += 1;
    }
    taken.insert(name.clone());
    name
}

pub(crate) fn register_names(f: &Function) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = f.params.iter().map(|r| r.0.clone()).collect();
    names.extend(f.def_sites().keys().map(|r| r.0.clone()));
    names.extend(f.used_regs().into_iter().map(|r| r.0.clone()));
    names
}

/// Restructures the loop as an outer loop over slices of at most `s`
/// iterations each, wrapped around the original loop.
pub fn strip_mine(f: &Function, lp: &LoopInfo, s: u64, ids: &mut IdGen) -> Result<Function, DaeError> {
    strip_mine_layout(f, lp, s, ids).map(|sm| sm.func)
}

pub fn strip_mine_layout(f: &Function, lp: &LoopInfo, s: u64, ids: &mut IdGen) -> Result<StripMined, DaeError> {
    if s == 0 {
        return Err(DaeError::InvalidSlice(s));
    }
    if !find_loops(f).loops.contains(lp) {
        return Err(DaeError::NonCanonical(lp.header.clone()));
    }
    let ind = &lp.induction;
    let span = i64::try_from(s).ok().and_then(|s| s.checked_mul(ind.step)).ok_or(DaeError::InvalidSlice(s))?;
    ids.reserve_function(f);

    let mut g = f.clone();
    let mut regs = register_names(f);
    let mut labels: BTreeSet<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
    let sh = fresh_name("slice.head", &mut labels);
    let sp = fresh_name("slice.pre", &mut labels);
    let sl = fresh_name("slice.latch", &mut labels);

    let header = g.block(&lp.header).expect("loop header").clone();
    let mut slice_of: BTreeMap<Reg, Reg> = BTreeMap::new();
    let mut sh_phis = Vec::new();
    for phi in &header.phis {
        let r = Reg(fresh_name(&format!("{}.slice", phi.dst.0), &mut regs));
        let init = phi.value_from(&lp.preheader).expect("preheader entry").clone();
        sh_phis.push(Phi {
            id: ids.fresh(),
            dst: r.clone(),
            incoming: vec![(init, lp.preheader.clone()), (phi.dst.clone(), sl.clone())],
        });
        slice_of.insert(phi.dst.clone(), r);
    }
    let ind_slice = slice_of[&ind.reg].clone();

    let more = Reg(fresh_name("slice.more", &mut regs));
    let mut sh_block = Block::new(
        sh.clone(),
        Terminator::BrCond { cond: more.clone(), on_true: sp.clone(), on_false: lp.exit.clone() },
    );
    sh_block.phis = sh_phis;
    sh_block.body.push(Instruction::new(
        ids.fresh(),
        Op::Bin { dst: more, op: ind.cmp.binop(), lhs: ind_slice.clone(), rhs: ind.bound.clone() },
    ));

    let span_reg = Reg(fresh_name("slice.span", &mut regs));
    let end = Reg(fresh_name("slice.end", &mut regs));
    let mut sp_block = Block::new(sp.clone(), Terminator::Br(lp.header.clone()));
    sp_block.body.push(Instruction::new(ids.fresh(), Op::Const { dst: span_reg.clone(), value: span }));
    sp_block.body.push(Instruction::new(
        ids.fresh(),
        Op::Bin { dst: end.clone(), op: BinOp::Add, lhs: ind_slice, rhs: span_reg },
    ));

    // Inner-loop header: enter from the slice preheader, stop at slice end.
    let lt = Reg(fresh_name("slice.lt", &mut regs));
    let go = Reg(fresh_name("slice.go", &mut regs));
    {
        let h = g.block_mut(&lp.header).expect("loop header");
        for phi in &mut h.phis {
            let slice_reg = slice_of[&phi.dst].clone();
            for (v, l) in &mut phi.incoming {
                if *l == lp.preheader {
                    *v = slice_reg.clone();
                    *l = sp.clone();
                }
            }
        }
        let Terminator::BrCond { on_true, .. } = h.term.clone() else {
            return Err(DaeError::NonCanonical(lp.header.clone()));
        };
        h.body.push(Instruction::new(
            ids.fresh(),
            Op::Bin { dst: lt.clone(), op: BinOp::Slt, lhs: ind.reg.clone(), rhs: end },
        ));
        h.body.push(Instruction::new(
            ids.fresh(),
            Op::Bin { dst: go.clone(), op: BinOp::And, lhs: ind.cond.clone(), rhs: lt },
        ));
        h.term = Terminator::BrCond { cond: go, on_true, on_false: sl.clone() };
    }

    g.block_mut(&lp.preheader).expect("preheader").term.retarget(&lp.header, &sh);

    // The exit is now reached from the slice head, with header values
    // replaced by their slice-level copies.
    for b in g.blocks.iter_mut().filter(|b| !lp.contains(&b.label)) {
        for phi in &mut b.phis {
            for (v, l) in &mut phi.incoming {
                if b.label == lp.exit && *l == lp.header {
                    *l = sh.clone();
                }
                if let Some(r) = slice_of.get(v) {
                    *v = r.clone();
                }
            }
        }
        for i in &mut b.body {
            for u in i.op.uses_mut() {
                if let Some(r) = slice_of.get(u) {
                    *u = r.clone();
                }
            }
        }
        if let Some(u) = b.term.uses_mut() {
            if let Some(r) = slice_of.get(u) {
                *u = r.clone();
            }
        }
    }

    let hi = g.block_index(&lp.header).expect("loop header");
    let last =
        g.blocks.iter().enumerate().filter(|(_, b)| lp.contains(&b.label)).map(|(k, _)| k).max().expect("loop body");
    g.blocks.insert(last + 1, Block::new(sl.clone(), Terminator::Br(sh.clone())));
    g.blocks.insert(hi, sp_block);
    g.blocks.insert(hi, sh_block);

    Ok(StripMined { func: g, slice_head: sh, slice_pre: sp, slice_latch: sl, header: lp.header.clone() })
}
