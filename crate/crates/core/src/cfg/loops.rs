use std::collections::{BTreeMap, BTreeSet};

use super::graph::{build_cfg, dominators, natural_loops, NaturalLoop};
use crate::dir::{BinOp, Function, InstrId, Op, Reg};

/// Comparison used by the loop test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopCmp {
    Slt,
    Sle,
}

impl LoopCmp {
    pub fn binop(self) -> BinOp {
        match self {
            LoopCmp::Slt => BinOp::Slt,
            LoopCmp::Sle => BinOp::Sle,
        }
    }
}

/// The counted induction variable that controls a canonical loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Induction {
    /// Header phi holding the induction value.
    pub reg: Reg,
    pub phi_id: InstrId,
    /// Value flowing in from the preheader.
    pub init: Reg,
    /// Known when `init` is defined by a `const`.
    pub init_const: Option<i64>,
    pub step: i64,
    pub step_reg: Reg,
    pub next: Reg,
    pub next_id: InstrId,
    pub bound: Reg,
    pub bound_const: Option<i64>,
    pub cmp: LoopCmp,
    /// The header's branch condition.
    pub cond: Reg,
    pub cond_id: InstrId,
}

impl Induction {
    /// Number of times the body runs for given start and bound values.
    pub fn trip_count(&self, init: i64, bound: i64) -> u64 {
        trip_count(self.cmp, init, bound, self.step)
    }
}

/// Trip count of `for (i = init; i cmp bound; i += step)` with `step > 0`.
pub fn trip_count(cmp: LoopCmp, init: i64, bound: i64, step: i64) -> u64 {
    assert!(step > 0, "step must be positive");
    let (i, b, s) = (init as i128, bound as i128, step as i128);
    let n = match cmp {
        LoopCmp::Slt if i < b => (b - i + s - 1) / s,
        LoopCmp::Sle if i <= b => (b - i) / s + 1,
        _ => 0,
    };
    n as u64
}

/// A loop in the canonical shape the decoupling transforms accept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopInfo {
    pub header: String,
    pub latch: String,
    pub preheader: String,
    pub exit: String,
    pub body: BTreeSet<String>,
    pub induction: Induction,
}

impl LoopInfo {
    pub fn contains(&self, label: &str) -> bool {
        self.body.contains(label)
    }

    /// Ids of all loads inside the loop, in block order.
    pub fn loads(&self, f: &Function) -> Vec<InstrId> {
        f.blocks
            .iter()
            .filter(|b| self.contains(&b.label))
            .flat_map(|b| b.body.iter())
            .filter(|i| i.op.is_load())
            .map(|i| i.id)
            .collect()
    }

    pub fn has_stores(&self, f: &Function) -> bool {
        f.blocks
            .iter()
            .filter(|b| self.contains(&b.label))
            .flat_map(|b| b.body.iter())
            .any(|i| matches!(i.op, Op::Store { .. }))
    }
}

/// A loop that was found but not accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLoop {
    pub header: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopScan {
    pub loops: Vec<LoopInfo>,
    pub skipped: Vec<SkippedLoop>,
}

/// Finds every innermost natural loop of `f` and checks it against the
/// canonical counted-loop shape. Loops in block order of their header.
pub fn find_loops(f: &Function) -> LoopScan {
    let cfg = build_cfg(f);
    let dom = dominators(&cfg);
    let all = natural_loops(&cfg, &dom);
    let mut scan = LoopScan::default();
    for l in &all {
        let nested = all.iter().any(|o| o.header != l.header && l.body.contains(&o.header));
        let result = if nested { Err("not an innermost loop".to_string()) } else { canonical(f, l) };
        match result {
            Ok(info) => scan.loops.push(info),
            Err(reason) => scan.skipped.push(SkippedLoop { header: l.header.clone(), reason }),
        }
    }
    scan
}

fn canonical(f: &Function, l: &NaturalLoop) -> Result<LoopInfo, String> {
    if l.latches.len() != 1 {
        return Err(format!("{} latches; need exactly one", l.latches.len()));
    }
    let latch = l.latches.iter().next().unwrap().clone();
    let preds = f.predecessors();
    let header_preds = &preds[l.header.as_str()];
    let outside: Vec<&str> = header_preds.iter().copied().filter(|p| !l.body.contains(*p)).collect();
    if header_preds.len() != 2 || outside.len() != 1 {
        return Err("header needs exactly one preheader and one latch".into());
    }
    let preheader = outside[0].to_string();

    let header = f.block(&l.header).expect("header exists");
    let crate::dir::Terminator::BrCond { cond, on_true, on_false } = &header.term else {
        return Err("header does not end in a conditional branch".into());
    };
    if !l.body.contains(on_true) || l.body.contains(on_false) {
        return Err("header branch must stay in the loop when true and leave when false".into());
    }
    for b in f.blocks.iter().filter(|b| l.body.contains(&b.label) && b.label != l.header) {
        if b.term.successors().iter().any(|s| !l.body.contains(*s)) {
            return Err(format!("block {} leaves the loop; only the header may exit", b.label));
        }
    }
    if header.body.iter().any(|i| i.op.has_side_effect()) {
        return Err("header contains a store or out".into());
    }

    // Where each register is defined: block label and op (None for phis).
    let mut defs: BTreeMap<&Reg, (&str, Option<&crate::dir::Instruction>)> = BTreeMap::new();
    for b in &f.blocks {
        for p in &b.phis {
            defs.insert(&p.dst, (&b.label, None));
        }
        for i in &b.body {
            if let Some(d) = i.op.dst() {
                defs.insert(d, (&b.label, Some(i)));
            }
        }
    }
    let const_of = |r: &Reg| match defs.get(r) {
        Some((_, Some(i))) => match i.op {
            Op::Const { value, .. } => Some(value),
            _ => None,
        },
        _ => None,
    };
    let in_loop = |r: &Reg| defs.get(r).is_some_and(|(b, _)| l.body.contains(*b));

    let cond_instr = header.body.iter().find(|i| i.op.dst() == Some(cond));
    let Some(cond_instr) = cond_instr else {
        return Err("loop test is not computed in the header".into());
    };
    let (cmp, ind_reg, bound) = match &cond_instr.op {
        Op::Bin { op: BinOp::Slt, lhs, rhs, .. } => (LoopCmp::Slt, lhs, rhs),
        Op::Bin { op: BinOp::Sle, lhs, rhs, .. } => (LoopCmp::Sle, lhs, rhs),
        _ => return Err("loop test must be slt or sle".into()),
    };
    let Some(phi) = header.phis.iter().find(|p| &p.dst == ind_reg) else {
        return Err("non-canonical induction: compared value is not a header phi".into());
    };
    let (Some(init), Some(next)) = (phi.value_from(&preheader), phi.value_from(&latch)) else {
        return Err("non-canonical induction: phi lacks preheader or latch entry".into());
    };
    let next_instr = match defs.get(next) {
        Some((b, Some(i))) if l.body.contains(*b) => *i,
        _ => return Err("non-canonical induction: update is not in the loop".into()),
    };
    let step_reg = match &next_instr.op {
        Op::Bin { op: BinOp::Add, lhs, rhs, .. } if lhs == ind_reg => rhs,
        Op::Bin { op: BinOp::Add, lhs, rhs, .. } if rhs == ind_reg => lhs,
        _ => return Err("non-canonical induction: update is not an add of the phi".into()),
    };
    let Some(step) = const_of(step_reg) else {
        return Err("non-canonical induction: step is not a constant".into());
    };
    if step <= 0 {
        return Err("non-canonical induction: step must be positive".into());
    }
    if in_loop(bound) {
        return Err("loop bound is not loop-invariant".into());
    }

    // Non-phi values computed in the header must not escape the loop.
    let header_defs: BTreeSet<&Reg> = header.body.iter().filter_map(|i| i.op.dst()).collect();
    for b in f.blocks.iter().filter(|b| !l.body.contains(&b.label)) {
        let mut uses: Vec<&Reg> = b.phis.iter().flat_map(|p| p.incoming.iter().map(|(r, _)| r)).collect();
        uses.extend(b.body.iter().flat_map(|i| i.op.uses()));
        uses.extend(b.term.uses());
        if let Some(r) = uses.into_iter().find(|r| header_defs.contains(r)) {
            return Err(format!("header value {r} is used after the loop"));
        }
    }

    Ok(LoopInfo {
        header: l.header.clone(),
        latch,
        preheader,
        exit: on_false.clone(),
        body: l.body.clone(),
        induction: Induction {
            reg: ind_reg.clone(),
            phi_id: phi.id,
            init: init.clone(),
            init_const: const_of(init),
            step,
            step_reg: step_reg.clone(),
            next: next.clone(),
            next_id: next_instr.id,
            bound: bound.clone(),
            bound_const: const_of(bound),
            cmp,
            cond: cond.clone(),
            cond_id: cond_instr.id,
        },
    })
}
