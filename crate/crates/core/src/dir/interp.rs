//! Reference interpreter.
//!
//! Functions are lowered to a slot-indexed form once, then executed by a
//! resumable [`Frame`]. Timing models hook in through [`Observer`]; the plain
//! interpreter uses a no-op observer, so the semantics of every execution
//! mode are defined by this one loop.

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::types::*;
use super::validate::{validate_program, Diagnostic};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("program is invalid: {}", .0.first().map(ToString::to_string).unwrap_or_default())]
    Invalid(Vec<Diagnostic>),
    #[error("no function named `@{0}`")]
    MissingFunction(String),
    #[error("data segment at {base} (+{len} bytes) does not fit in {mem_size} bytes of memory")]
    SegmentOutOfRange { base: u64, len: u64, mem_size: u64 },
    #[error("division by zero at [{id}]")]
    DivisionByZero { id: InstrId },
    #[error("address {addr} out of range at [{id}]")]
    AddressOutOfRange { id: InstrId, addr: i64 },
    #[error("fuel exhausted after {0} instructions")]
    FuelExhausted(u64),
    #[error("missing argument {0}")]
    MissingArgument(Reg),
}

/// Result of a complete functional execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecTrace {
    pub output: Vec<i64>,
    pub memory_digest: String,
    pub retired_by_static_id: BTreeMap<InstrId, u64>,
}

/// Flat byte-addressed memory. Reads of never-written bytes return zero.
#[derive(Debug, Clone)]
pub struct Memory {
    bytes: Vec<u8>,
}

/// Mixes a run-level input seed into a segment seed. Seed 0 leaves the
/// segment as written.
pub fn mix_seed(segment_seed: u64, input_seed: u64) -> u64 {
    segment_seed.wrapping_add(input_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Bytes of a PRNG-filled segment.
pub fn prng_bytes(seed: u64, len: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u8; len as usize];
    rng.fill_bytes(&mut buf);
    buf
}

impl Memory {
    pub fn zeroed(size: u64) -> Self {
        Memory { bytes: vec![0; size as usize] }
    }

    /// Builds the initial memory image of `p`.
    pub fn for_program(p: &Program, size: u64, input_seed: u64) -> Result<Self, ExecError> {
        let mut m = Memory::zeroed(size);
        for seg in &p.data {
            if seg.end() > size || seg.base.checked_add(seg.len()).is_none() {
                return Err(ExecError::SegmentOutOfRange { base: seg.base, len: seg.len(), mem_size: size });
            }
            let range = seg.base as usize..seg.end() as usize;
            match &seg.init {
                SegmentInit::Zero { .. } => {}
                SegmentInit::Prng { seed, len } => {
                    m.bytes[range].copy_from_slice(&prng_bytes(mix_seed(*seed, input_seed), *len))
                }
                SegmentInit::Bytes(b) => m.bytes[range].copy_from_slice(b),
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn check(&self, addr: i64, width: u64) -> Option<usize> {
        if addr < 0 {
            return None;
        }
        let a = addr as u64;
        (a.checked_add(width)? <= self.size()).then_some(a as usize)
    }

    /// Little-endian, zero-extended read.
    pub fn read(&self, addr: i64, width: u64) -> Option<i64> {
        let a = self.check(addr, width)?;
        let mut buf = [0u8; 8];
        buf[..width as usize].copy_from_slice(&self.bytes[a..a + width as usize]);
        Some(i64::from_le_bytes(buf))
    }

    pub fn write(&mut self, addr: i64, width: u64, value: i64) -> Option<()> {
        let a = self.check(addr, width)?;
        self.bytes[a..a + width as usize].copy_from_slice(&value.to_le_bytes()[..width as usize]);
        Some(())
    }

    /// Hex SHA-256 of the full image.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum LOp {
    Const { dst: u32, value: i64 },
    Bin { dst: u32, op: BinOp, a: u32, b: u32 },
    Load { dst: u32, base: u32, offset: i64, width: u64 },
    Store { base: u32, offset: i64, src: u32, width: u64 },
    Prefetch { base: u32, offset: i64 },
    Out { src: u32 },
}

#[derive(Debug, Clone)]
pub(crate) struct Edge {
    pub target: u32,
    /// Phi moves on this edge, applied as a parallel copy.
    pub copies: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub(crate) enum LTerm {
    Br(Edge),
    BrCond(u32, Edge, Edge),
    Ret(Option<u32>),
}

#[derive(Debug, Clone)]
pub(crate) struct LBlock {
    /// Index of the first body instruction in the function-wide numbering.
    pub first: u32,
    pub body: Vec<LOp>,
    pub term: LTerm,
}

/// A function lowered to register slots and block indices.
#[derive(Debug, Clone)]
pub struct Lowered {
    pub(crate) name: String,
    pub(crate) reg_index: HashMap<Reg, u32>,
    pub(crate) params: Vec<u32>,
    pub(crate) blocks: Vec<LBlock>,
    /// Instruction id per function-wide instruction index.
    pub(crate) ids: Vec<InstrId>,
    nregs: usize,
}

impl Lowered {
    /// Lowers a validated function.
    pub fn new(f: &Function) -> Lowered {
        let mut reg_index: HashMap<Reg, u32> = HashMap::new();
        let slot = |r: &Reg, map: &mut HashMap<Reg, u32>| -> u32 {
            let n = map.len() as u32;
            *map.entry(r.clone()).or_insert(n)
        };
        let params: Vec<u32> = f.params.iter().map(|r| slot(r, &mut reg_index)).collect();
        for b in &f.blocks {
            for p in &b.phis {
                slot(&p.dst, &mut reg_index);
            }
            for i in &b.body {
                if let Some(d) = i.op.dst() {
                    slot(d, &mut reg_index);
                }
            }
        }
        let block_idx: HashMap<&str, u32> =
            f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i as u32)).collect();

        let r = |reg: &Reg, map: &mut HashMap<Reg, u32>| slot(reg, map);
        let mut ids = Vec::new();
        let mut blocks = Vec::with_capacity(f.blocks.len());
        for b in &f.blocks {
            let first = ids.len() as u32;
            let mut body = Vec::with_capacity(b.body.len());
            for i in &b.body {
                ids.push(i.id);
                body.push(match &i.op {
                    Op::Const { dst, value } => LOp::Const { dst: r(dst, &mut reg_index), value: *value },
                    Op::Bin { dst, op, lhs, rhs } => LOp::Bin {
                        dst: r(dst, &mut reg_index),
                        op: *op,
                        a: r(lhs, &mut reg_index),
                        b: r(rhs, &mut reg_index),
                    },
                    Op::Load { dst, base, offset, width } => LOp::Load {
                        dst: r(dst, &mut reg_index),
                        base: r(base, &mut reg_index),
                        offset: *offset,
                        width: width.bytes(),
                    },
                    Op::Store { base, offset, src, width } => LOp::Store {
                        base: r(base, &mut reg_index),
                        offset: *offset,
                        src: r(src, &mut reg_index),
                        width: width.bytes(),
                    },
                    Op::Prefetch { base, offset } => LOp::Prefetch { base: r(base, &mut reg_index), offset: *offset },
                    Op::Out { src } => LOp::Out { src: r(src, &mut reg_index) },
                });
            }
            let edge = |target: &str, map: &mut HashMap<Reg, u32>| {
                let t = block_idx[target];
                let copies = f.blocks[t as usize]
                    .phis
                    .iter()
                    .filter_map(|p| p.value_from(&b.label).map(|v| (r(&p.dst, map), r(v, map))))
                    .collect();
                Edge { target: t, copies }
            };
            let term = match &b.term {
                Terminator::Br(t) => LTerm::Br(edge(t, &mut reg_index)),
                Terminator::BrCond { cond, on_true, on_false } => {
                    let c = r(cond, &mut reg_index);
                    LTerm::BrCond(c, edge(on_true, &mut reg_index), edge(on_false, &mut reg_index))
                }
                Terminator::Ret(v) => LTerm::Ret(v.as_ref().map(|v| r(v, &mut reg_index))),
            };
            blocks.push(LBlock { first, body, term });
        }
        let nregs = reg_index.len();
        Lowered { name: f.name.clone(), reg_index, params, blocks, ids, nregs }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn instruction_count(&self) -> usize {
        self.ids.len()
    }
}

/// Event hooks for timing and profiling models.
pub(crate) trait Observer {
    /// Called once per retired body instruction or terminator, before any
    /// memory hook for that instruction.
    fn retire(&mut self) {}
    fn enter_block(&mut self, _block: u32) {}
    fn load(&mut self, _idx: u32, _addr: u64) {}
    fn store(&mut self, _idx: u32, _addr: u64) {}
    /// `addr` is `None` when the prefetch address falls outside memory; such
    /// prefetches are dropped.
    fn prefetch(&mut self, _idx: u32, _addr: Option<u64>) {}
}

pub(crate) struct NullObserver;
impl Observer for NullObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Exit {
    Returned(Option<i64>),
    /// Control is about to enter the requested stop block.
    Yield,
}

/// Execution state of one function activation. Can be paused at a block
/// boundary and resumed.
pub(crate) struct Frame<'f> {
    pub func: &'f Lowered,
    pub regs: Vec<i64>,
    pub counts: Vec<u64>,
    block: u32,
    pc: usize,
    started: bool,
    finished: Option<Option<i64>>,
    scratch: Vec<i64>,
}

impl<'f> Frame<'f> {
    pub fn new(func: &'f Lowered, args: &[i64]) -> Self {
        let mut regs = vec![0i64; func.nregs];
        for (slot, v) in func.params.iter().zip(args) {
            regs[*slot as usize] = *v;
        }
        Frame {
            func,
            regs,
            counts: vec![0; func.ids.len()],
            block: 0,
            pc: 0,
            started: false,
            finished: None,
            scratch: Vec::new(),
        }
    }

    pub fn finished(&self) -> Option<Option<i64>> {
        self.finished
    }

    pub fn reg(&self, r: &Reg) -> Option<i64> {
        self.func.reg_index.get(r).map(|&s| self.regs[s as usize])
    }

    fn take_edge<O: Observer>(&mut self, e: &Edge, obs: &mut O) {
        if !e.copies.is_empty() {
            self.scratch.clear();
            self.scratch.extend(e.copies.iter().map(|&(_, s)| self.regs[s as usize]));
            for (k, &(d, _)) in e.copies.iter().enumerate() {
                self.regs[d as usize] = self.scratch[k];
            }
        }
        self.block = e.target;
        self.pc = 0;
        obs.enter_block(e.target);
    }

    /// Runs until the function returns or control is about to enter
    /// `stop_at` through an edge.
    pub fn run<O: Observer>(
        &mut self,
        mem: &mut Memory,
        output: &mut Vec<i64>,
        obs: &mut O,
        fuel: &mut u64,
        stop_at: Option<u32>,
    ) -> Result<Exit, ExecError> {
        if let Some(v) = self.finished {
            return Ok(Exit::Returned(v));
        }
        let func = self.func;
        if !self.started {
            self.started = true;
            obs.enter_block(0);
        }
        loop {
            let block = &func.blocks[self.block as usize];
            while self.pc < block.body.len() {
                if *fuel == 0 {
                    return Err(ExecError::FuelExhausted(0));
                }
                *fuel -= 1;
                let idx = block.first + self.pc as u32;
                self.counts[idx as usize] += 1;
                obs.retire();
                match block.body[self.pc] {
                    LOp::Const { dst, value } => self.regs[dst as usize] = value,
                    LOp::Bin { dst, op, a, b } => {
                        let v = op
                            .eval(self.regs[a as usize], self.regs[b as usize])
                            .ok_or(ExecError::DivisionByZero { id: func.ids[idx as usize] })?;
                        self.regs[dst as usize] = v;
                    }
                    LOp::Load { dst, base, offset, width } => {
                        let addr = self.regs[base as usize].wrapping_add(offset);
                        let v = mem
                            .read(addr, width)
                            .ok_or(ExecError::AddressOutOfRange { id: func.ids[idx as usize], addr })?;
                        obs.load(idx, addr as u64);
                        self.regs[dst as usize] = v;
                    }
                    LOp::Store { base, offset, src, width } => {
                        let addr = self.regs[base as usize].wrapping_add(offset);
                        mem.write(addr, width, self.regs[src as usize])
                            .ok_or(ExecError::AddressOutOfRange { id: func.ids[idx as usize], addr })?;
                        obs.store(idx, addr as u64);
                    }
                    LOp::Prefetch { base, offset } => {
                        let addr = self.regs[base as usize].wrapping_add(offset);
                        let ok = addr >= 0 && (addr as u64) < mem.size();
                        obs.prefetch(idx, ok.then_some(addr as u64));
                    }
                    LOp::Out { src } => output.push(self.regs[src as usize]),
                }
                self.pc += 1;
            }

            if *fuel == 0 {
                return Err(ExecError::FuelExhausted(0));
            }
            *fuel -= 1;
            obs.retire();
            let edge = match &block.term {
                LTerm::Ret(v) => {
                    let v = v.map(|s| self.regs[s as usize]);
                    self.finished = Some(v);
                    return Ok(Exit::Returned(v));
                }
                LTerm::Br(e) => e,
                LTerm::BrCond(c, t, f) => {
                    if self.regs[*c as usize] != 0 {
                        t
                    } else {
                        f
                    }
                }
            };
            self.take_edge(edge, obs);
            if Some(edge.target) == stop_at {
                return Ok(Exit::Yield);
            }
        }
    }

    pub fn retired_by_id(&self) -> BTreeMap<InstrId, u64> {
        self.func.ids.iter().copied().zip(self.counts.iter().copied()).collect()
    }
}

pub const DEFAULT_FUEL: u64 = 10_000_000_000;

/// Runs the entry function of `p` with memory initialised as written.
pub fn interpret(p: &Program, mem_size: u64, fuel: u64) -> Result<ExecTrace, ExecError> {
    interpret_seeded(p, mem_size, fuel, 0)
}

/// As [`interpret`], mixing `input_seed` into every PRNG data segment.
/// Entry-function parameters start at zero.
pub fn interpret_seeded(p: &Program, mem_size: u64, fuel: u64, input_seed: u64) -> Result<ExecTrace, ExecError> {
    let diags = validate_program(p);
    if !diags.is_empty() {
        return Err(ExecError::Invalid(diags));
    }
    let f = p.entry_function().ok_or_else(|| ExecError::MissingFunction(p.entry.clone()))?;
    let lowered = Lowered::new(f);
    let mut mem = Memory::for_program(p, mem_size, input_seed)?;
    let mut frame = Frame::new(&lowered, &[]);
    let mut output = Vec::new();
    let mut budget = fuel;
    frame.run(&mut mem, &mut output, &mut NullObserver, &mut budget, None).map_err(|e| match e {
        ExecError::FuelExhausted(_) => ExecError::FuelExhausted(fuel),
        other => other,
    })?;
    Ok(ExecTrace { output, memory_digest: mem.digest(), retired_by_static_id: frame.retired_by_id() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dir::parse_program;

    const SUM_TO_TEN: &str = "\
func @main() kind=original {
entry:
  %zero = const 0
  %one = const 1
  %n = const 10
  br head
head:
  %i = phi [%one, entry], [%i2, body]
  %acc = phi [%zero, entry], [%acc2, body]
  %c = sle %i, %n
  brcond %c, body, done
body:
  %acc2 = add %acc, %i
  %i2 = add %i, %one
  br head
done:
  out %acc
  ret
}
";

    #[test]
    fn sums_one_to_ten() {
        let p = parse_program(SUM_TO_TEN).unwrap();
        let t = interpret(&p, 4096, 1000).unwrap();
        assert_eq!(t.output, vec![55]);
        let acc2 = p.functions[0].block("body").unwrap().body[0].id;
        assert_eq!(t.retired_by_static_id[&acc2], 10);
    }

    #[test]
    fn store_then_load() {
        let src = "\
func @main() kind=original {
e:
  %a = const 128
  %v = const -81985529216486896
  store %a, 0, %v, 8
  %w = load %a, 0, 8
  out %w
  ret
}
";
        let p = parse_program(src).unwrap();
        let t = interpret(&p, 4096, 100).unwrap();
        assert_eq!(t.output, vec![-81985529216486896]);
        assert_ne!(t.memory_digest, Memory::zeroed(4096).digest());
    }

    #[test]
    fn prefetch_has_no_architectural_effect() {
        let src = "\
data @base=0 prng(seed=5, len=256)
func @main() kind=original {
e:
  %a = const 64
  %v = load %a, 0, 8
  prefetch %a, 0 !origin=1
  prefetch %a, 100000 !origin=1
  ret
}
";
        let p = parse_program(src).unwrap();
        let t = interpret(&p, 4096, 100).unwrap();
        let init = Memory::for_program(&p, 4096, 0).unwrap();
        assert_eq!(t.memory_digest, init.digest());
        assert!(t.output.is_empty());
    }

    #[test]
    fn narrow_loads_zero_extend() {
        let src = "\
data @base=0 bytes=ff80
func @main() kind=original {
e:
  %a = const 0
  %x = load %a, 0, 1
  %y = load %a, 0, 2
  out %x
  out %y
  ret
}
";
        let t = interpret(&parse_program(src).unwrap(), 64, 100).unwrap();
        assert_eq!(t.output, vec![0xff, 0x80ff]);
    }

    #[test]
    fn errors() {
        let div = "func @main() kind=original {\ne:\n  %a = const 1\n  %z = const 0\n  %q = div %a, %z\n  ret\n}\n";
        assert!(matches!(interpret(&parse_program(div).unwrap(), 64, 100), Err(ExecError::DivisionByZero { .. })));
        let oob = "func @main() kind=original {\ne:\n  %a = const 60\n  %v = load %a, 0, 8\n  ret\n}\n";
        assert!(matches!(
            interpret(&parse_program(oob).unwrap(), 64, 100),
            Err(ExecError::AddressOutOfRange { addr: 60, .. })
        ));
        let spin = "func @main() kind=original {\ne:\n  br l\nl:\n  br l\n}\n";
        assert_eq!(interpret(&parse_program(spin).unwrap(), 64, 1000), Err(ExecError::FuelExhausted(1000)));
        let seg = "data @base=100 zero=10\nfunc @main() kind=original {\ne:\n  ret\n}\n";
        assert!(matches!(interpret(&parse_program(seg).unwrap(), 64, 10), Err(ExecError::SegmentOutOfRange { .. })));
    }

    #[test]
    fn input_seed_changes_prng_data() {
        let src = "data @base=0 prng(seed=1, len=64)\nfunc @main() kind=original {\ne:\n  %a = const 0\n  %v = load %a, 0, 8\n  out %v\n  ret\n}\n";
        let p = parse_program(src).unwrap();
        let a = interpret_seeded(&p, 64, 100, 0).unwrap();
        let b = interpret_seeded(&p, 64, 100, 0).unwrap();
        let c = interpret_seeded(&p, 64, 100, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.output, c.output);
    }
}
