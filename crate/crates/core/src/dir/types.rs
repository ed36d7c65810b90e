use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

/// Program-wide unique instruction identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct InstrId(pub u32);

impl fmt::Display for InstrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A virtual register name, printed with a leading `%`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(pub String);

impl Reg {
    pub fn new(name: impl Into<String>) -> Self {
        Reg(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionKind {
    Original,
    Access,
    Execute,
}

impl FunctionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FunctionKind::Original => "original",
            FunctionKind::Access => "access",
            FunctionKind::Execute => "execute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Slt,
    Sle,
    Seq,
}

impl BinOp {
    pub const ALL: [BinOp; 13] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::Slt,
        BinOp::Sle,
        BinOp::Seq,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::Slt => "slt",
            BinOp::Sle => "sle",
            BinOp::Seq => "seq",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    /// Evaluates the operator. `None` signals division or remainder by zero.
    ///
    /// Arithmetic wraps; shift amounts are taken modulo 64 and `shr` is a
    /// logical shift.
    pub fn eval(self, a: i64, b: i64) -> Option<i64> {
        Some(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return None;
                }
                a.wrapping_rem(b)
            }
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => a.wrapping_shl((b & 63) as u32),
            BinOp::Shr => ((a as u64) >> (b & 63)) as i64,
            BinOp::Slt => (a < b) as i64,
            BinOp::Sle => (a <= b) as i64,
            BinOp::Seq => (a == b) as i64,
        })
    }
}

/// Access width in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    W1,
    W2,
    W4,
    W8,
}

impl Width {
    pub fn bytes(self) -> u64 {
        match self {
            Width::W1 => 1,
            Width::W2 => 2,
            Width::W4 => 4,
            Width::W8 => 8,
        }
    }

    pub fn from_bytes(n: i64) -> Option<Width> {
        match n {
            1 => Some(Width::W1),
            2 => Some(Width::W2),
            4 => Some(Width::W4),
            8 => Some(Width::W8),
            _ => None,
        }
    }
}

/// Links a prefetch or cloned load back to the load of the original loop it
/// was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OriginTag {
    pub origin_load_id: InstrId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Const { dst: Reg, value: i64 },
    Bin { dst: Reg, op: BinOp, lhs: Reg, rhs: Reg },
    Load { dst: Reg, base: Reg, offset: i64, width: Width },
    Store { base: Reg, offset: i64, src: Reg, width: Width },
    Prefetch { base: Reg, offset: i64 },
    Out { src: Reg },
}

impl Op {
    pub fn dst(&self) -> Option<&Reg> {
        match self {
            Op::Const { dst, .. } | Op::Bin { dst, .. } | Op::Load { dst, .. } => Some(dst),
            Op::Store { .. } | Op::Prefetch { .. } | Op::Out { .. } => None,
        }
    }

    pub fn uses(&self) -> impl Iterator<Item = &Reg> {
        let (a, b) = match self {
            Op::Const { .. } => (None, None),
            Op::Bin { lhs, rhs, .. } => (Some(lhs), Some(rhs)),
            Op::Load { base, .. } | Op::Prefetch { base, .. } => (Some(base), None),
            Op::Store { base, src, .. } => (Some(base), Some(src)),
            Op::Out { src } => (Some(src), None),
        };
        a.into_iter().chain(b)
    }

    pub fn uses_mut(&mut self) -> impl Iterator<Item = &mut Reg> {
        let (a, b) = match self {
            Op::Const { .. } => (None, None),
            Op::Bin { lhs, rhs, .. } => (Some(lhs), Some(rhs)),
            Op::Load { base, .. } | Op::Prefetch { base, .. } => (Some(base), None),
            Op::Store { base, src, .. } => (Some(base), Some(src)),
            Op::Out { src } => (Some(src), None),
        };
        a.into_iter().chain(b)
    }

    pub fn is_load(&self) -> bool {
        matches!(self, Op::Load { .. })
    }

    pub fn is_prefetch(&self) -> bool {
        matches!(self, Op::Prefetch { .. })
    }

    /// Stores and `out` are the only instructions with architectural effects.
    pub fn has_side_effect(&self) -> bool {
        matches!(self, Op::Store { .. } | Op::Out { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub id: InstrId,
    pub op: Op,
    pub origin: Option<OriginTag>,
}

impl Instruction {
    pub fn new(id: InstrId, op: Op) -> Self {
        Instruction { id, op, origin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phi {
    pub id: InstrId,
    pub dst: Reg,
    /// `(value, predecessor label)` pairs.
    pub incoming: Vec<(Reg, String)>,
}

impl Phi {
    pub fn value_from(&self, pred: &str) -> Option<&Reg> {
        self.incoming.iter().find(|(_, p)| p == pred).map(|(r, _)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Terminator {
    Br(String),
    BrCond { cond: Reg, on_true: String, on_false: String },
    Ret(Option<Reg>),
}

impl Terminator {
    pub fn successors(&self) -> Vec<&str> {
        match self {
            Terminator::Br(t) => vec![t.as_str()],
            Terminator::BrCond { on_true, on_false, .. } => {
                if on_true == on_false {
                    vec![on_true.as_str()]
                } else {
                    vec![on_true.as_str(), on_false.as_str()]
                }
            }
            Terminator::Ret(_) => Vec::new(),
        }
    }

    pub fn uses(&self) -> Option<&Reg> {
        match self {
            Terminator::BrCond { cond, .. } => Some(cond),
            Terminator::Ret(r) => r.as_ref(),
            Terminator::Br(_) => None,
        }
    }

    pub fn uses_mut(&mut self) -> Option<&mut Reg> {
        match self {
            Terminator::BrCond { cond, .. } => Some(cond),
            Terminator::Ret(r) => r.as_mut(),
            Terminator::Br(_) => None,
        }
    }

    pub fn retarget(&mut self, from: &str, to: &str) {
        match self {
            Terminator::Br(t) => {
                if t == from {
                    *t = to.to_string();
                }
            }
            Terminator::BrCond { on_true, on_false, .. } => {
                if on_true == from {
                    *on_true = to.to_string();
                }
                if on_false == from {
                    *on_false = to.to_string();
                }
            }
            Terminator::Ret(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub label: String,
    pub phis: Vec<Phi>,
    pub body: Vec<Instruction>,
    pub term: Terminator,
}

impl Block {
    pub fn new(label: impl Into<String>, term: Terminator) -> Self {
        Block { label: label.into(), phis: Vec::new(), body: Vec::new(), term }
    }

    pub fn is_empty(&self) -> bool {
        self.phis.is_empty() && self.body.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Function {
    pub name: String,
    pub params: Vec<Reg>,
    pub kind: FunctionKind,
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn entry_label(&self) -> Option<&str> {
        self.blocks.first().map(|b| b.label.as_str())
    }

    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_mut(&mut self, label: &str) -> Option<&mut Block> {
        self.blocks.iter_mut().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.body.iter())
    }

    pub fn instruction(&self, id: InstrId) -> Option<&Instruction> {
        self.instructions().find(|i| i.id == id)
    }

    /// Ids of every phi and body instruction.
    pub fn all_ids(&self) -> impl Iterator<Item = InstrId> + '_ {
        self.blocks.iter().flat_map(|b| b.phis.iter().map(|p| p.id).chain(b.body.iter().map(|i| i.id)))
    }

    pub fn max_id(&self) -> Option<InstrId> {
        self.all_ids().max()
    }

    /// Phis, body instructions, and terminators.
    pub fn static_instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.phis.len() + b.body.len() + 1).sum()
    }

    /// Map from each defined register to the id of its defining phi or
    /// instruction. Parameters have no entry.
    pub fn def_sites(&self) -> BTreeMap<&Reg, InstrId> {
        let mut defs = BTreeMap::new();
        for b in &self.blocks {
            for p in &b.phis {
                defs.insert(&p.dst, p.id);
            }
            for i in &b.body {
                if let Some(d) = i.op.dst() {
                    defs.insert(d, i.id);
                }
            }
        }
        defs
    }

    /// Labels of the predecessors of each block, in block order.
    pub fn predecessors(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut preds: BTreeMap<&str, Vec<&str>> = self.blocks.iter().map(|b| (b.label.as_str(), Vec::new())).collect();
        for b in &self.blocks {
            for s in b.term.successors() {
                if let Some(v) = preds.get_mut(s) {
                    if !v.contains(&b.label.as_str()) {
                        v.push(b.label.as_str());
                    }
                }
            }
        }
        preds
    }

    /// Every register read anywhere in the function.
    pub fn used_regs(&self) -> Vec<&Reg> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for p in &b.phis {
                out.extend(p.incoming.iter().map(|(r, _)| r));
            }
            for i in &b.body {
                out.extend(i.op.uses());
            }
            out.extend(b.term.uses());
        }
        out
    }

    /// Renames every use of `from` to `to` (definitions are untouched).
    pub fn replace_uses(&mut self, from: &Reg, to: &Reg) {
        for b in &mut self.blocks {
            for p in &mut b.phis {
                for (r, _) in &mut p.incoming {
                    if r == from {
                        *r = to.clone();
                    }
                }
            }
            for i in &mut b.body {
                for r in i.op.uses_mut() {
                    if r == from {
                        *r = to.clone();
                    }
                }
            }
            if let Some(r) = b.term.uses_mut() {
                if r == from {
                    *r = to.clone();
                }
            }
        }
    }
}

/// How a data segment is initialised.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SegmentInit {
    Zero { len: u64 },
    Prng { seed: u64, len: u64 },
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataSegment {
    pub base: u64,
    pub init: SegmentInit,
}

impl DataSegment {
    pub fn len(&self) -> u64 {
        match &self.init {
            SegmentInit::Zero { len } | SegmentInit::Prng { len, .. } => *len,
            SegmentInit::Bytes(b) => b.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> u64 {
        self.base.saturating_add(self.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    pub functions: Vec<Function>,
    pub data: Vec<DataSegment>,
    pub entry: String,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn entry_function(&self) -> Option<&Function> {
        self.function(&self.entry)
    }

    pub fn max_id(&self) -> Option<InstrId> {
        self.functions.iter().filter_map(Function::max_id).max()
    }

    /// Smallest memory size that covers every data segment, rounded up to
    /// 4 KiB (and at least 4 KiB).
    pub fn required_memory(&self) -> u64 {
        let end = self.data.iter().map(DataSegment::end).max().unwrap_or(0);
        end.max(1).div_ceil(4096) * 4096
    }

    /// Hex SHA-256 of the canonical printed form.
    pub fn digest(&self) -> String {
        let text = super::print_program(self);
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Allocates fresh instruction ids above everything already in use.
#[derive(Debug, Clone)]
pub struct IdGen {
    next: u32,
}

impl IdGen {
    pub fn starting_at(next: u32) -> Self {
        IdGen { next }
    }

    pub fn after_program(p: &Program) -> Self {
        IdGen { next: p.max_id().map_or(0, |m| m.0 + 1) }
    }

    pub fn after_function(f: &Function) -> Self {
        IdGen { next: f.max_id().map_or(0, |m| m.0 + 1) }
    }

    pub fn fresh(&mut self) -> InstrId {
        let id = InstrId(self.next);
        self.next += 1;
        id
    }

    /// Makes sure later ids are above every id in `f`.
    pub fn reserve_function(&mut self, f: &Function) {
        if let Some(m) = f.max_id() {
            self.next = self.next.max(m.0 + 1);
        }
    }
}

/// Compares two functions ignoring instruction ids and the function name.
pub fn structurally_equal(a: &Function, b: &Function) -> bool {
    if a.kind != b.kind || a.params != b.params || a.blocks.len() != b.blocks.len() {
        return false;
    }
    a.blocks.iter().zip(&b.blocks).all(|(x, y)| {
        x.label == y.label
            && x.term == y.term
            && x.phis.len() == y.phis.len()
            && x.body.len() == y.body.len()
            && x.phis.iter().zip(&y.phis).all(|(p, q)| p.dst == q.dst && p.incoming == q.incoming)
            && x.body.iter().zip(&y.body).all(|(i, j)| i.op == j.op && i.origin == j.origin)
    })
}
