//! Shared generators and brute-force oracles for the integration tests.
//!
//! Every generator is driven by a seeded ChaCha8 stream so a failing case
//! can be replayed from its seed alone.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use daef::cfg::Cfg;
use daef::dir::{parse_program, Function, InstrId, Op, Program, Terminator};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random graphs

/// An arbitrary directed graph on 1..=max_nodes nodes. Node 0 is the entry;
/// edges into it are allowed, as are self-loops and unreachable nodes.
pub fn random_graph(r: &mut ChaCha8Rng, max_nodes: usize) -> Cfg {
    let n = r.gen_range(1..=max_nodes);
    let density = r.gen_range(0.05..0.45);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if r.gen_bool(density) {
                edges.push((a, b));
            }
        }
    }
    let labels = (0..n).map(|k| format!("n{k}")).collect();
    Cfg::from_edges(labels, &edges, 0)
}

fn reachable_without(c: &Cfg, removed: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; c.len()];
    if removed == Some(c.entry) {
        return seen;
    }
    let mut q = VecDeque::from([c.entry]);
    seen[c.entry] = true;
    while let Some(x) = q.pop_front() {
        for &y in &c.succs[x] {
            if Some(y) != removed && !seen[y] {
                seen[y] = true;
                q.push_back(y);
            }
        }
    }
    seen
}

/// `dom[b]` is the set of nodes dominating `b`, by the definition: `a`
/// dominates `b` when every path from the entry to `b` passes through `a`.
/// Unreachable nodes get `None`.
pub fn oracle_dominator_sets(c: &Cfg) -> Vec<Option<BTreeSet<usize>>> {
    let reach = reachable_without(c, None);
    let mut dom: Vec<Option<BTreeSet<usize>>> = (0..c.len()).map(|b| reach[b].then(BTreeSet::new)).collect();
    for a in 0..c.len() {
        if !reach[a] {
            continue;
        }
        let without = reachable_without(c, Some(a));
        for b in 0..c.len() {
            if reach[b] && (a == b || !without[b]) {
                dom[b].as_mut().unwrap().insert(a);
            }
        }
    }
    dom
}

/// Immediate dominator labels, keyed by label, with `idom[entry] = entry`.
pub fn oracle_idoms(c: &Cfg) -> BTreeMap<String, String> {
    let dom = oracle_dominator_sets(c);
    let mut out = BTreeMap::new();
    for (b, set) in dom.iter().enumerate() {
        let Some(set) = set else { continue };
        if b == c.entry {
            out.insert(c.labels[b].clone(), c.labels[b].clone());
            continue;
        }
        let strict: Vec<usize> = set.iter().copied().filter(|&d| d != b).collect();
        // The immediate dominator is the strict dominator dominated by all others.
        let idom = strict
            .iter()
            .copied()
            .find(|&d| strict.iter().all(|&e| dom[d].as_ref().unwrap().contains(&e)))
            .expect("reachable non-entry node has a strict dominator");
        out.insert(c.labels[b].clone(), c.labels[idom].clone());
    }
    out
}

/// Natural loops as `(header, latches, body)`, one per header, ordered by
/// header index. The body is every node that reaches a latch without going
/// through the header, plus the header itself.
pub fn oracle_loops(c: &Cfg) -> Vec<(String, BTreeSet<String>, BTreeSet<String>)> {
    let dom = oracle_dominator_sets(c);
    let mut by_header: BTreeMap<usize, (BTreeSet<usize>, BTreeSet<usize>)> = BTreeMap::new();
    for t in 0..c.len() {
        let Some(dt) = &dom[t] else { continue };
        for &h in &c.succs[t] {
            if !dt.contains(&h) {
                continue;
            }
            let e = by_header.entry(h).or_default();
            e.0.insert(t);
            e.1.insert(h);
            for x in 0..c.len() {
                if dom[x].is_some() && x != h && reaches_avoiding(c, x, t, h) {
                    e.1.insert(x);
                }
            }
        }
    }
    by_header
        .into_iter()
        .map(|(h, (latches, body))| {
            let name = |v: BTreeSet<usize>| v.into_iter().map(|k| c.labels[k].clone()).collect();
            (c.labels[h].clone(), name(latches), name(body))
        })
        .collect()
}

fn reaches_avoiding(c: &Cfg, from: usize, to: usize, avoid: usize) -> bool {
    let mut seen = vec![false; c.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(x) = stack.pop() {
        if x == to {
            return true;
        }
        for &y in &c.succs[x] {
            if y != avoid && !seen[y] {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Random executable CFGs

/// A terminating program whose entry function has at most `max_blocks`
/// blocks, including the entry. Any block with a backward edge increments a
/// counter in memory and only takes that edge while the counter is below a
/// limit, so every run ends. Forwarders, constant branches, branches with
/// identical targets, unreachable blocks, and phis all occur.
pub fn random_cfg_program(r: &mut ChaCha8Rng, max_blocks: usize) -> Program {
    let n = r.gen_range(1..max_blocks.max(2));
    let limit = r.gen_range(1..40);
    let mut s = String::from("entry @main\n\nfunc @main() kind=original {\nentry:\n");
    let _ = writeln!(
        s,
        "  %ctr = const 64\n  %one = const 1\n  %limit = const {limit}\n  %t = const 1\n  %f = const 0\n  %seed = const {}",
        r.gen_range(0..1000)
    );
    s.push_str("  br b0\n");

    let mut succs: Vec<Vec<usize>> = Vec::new();
    let mut bodies: Vec<String> = Vec::new();
    let mut terms: Vec<String> = Vec::new();
    let exit = n - 1;
    for k in 0..n {
        let mut body = String::new();
        let term;
        let mut out = Vec::new();
        if k == exit {
            if r.gen_bool(0.5) {
                body.push_str("  %fin = load %ctr, 0, 8\n  out %fin\n");
            }
            term = "ret".to_string();
        } else {
            let fwd = |r: &mut ChaCha8Rng| r.gen_range(k + 1..n);
            match r.gen_range(0..5) {
                0 => {
                    let j = fwd(r);
                    out.push(j);
                    term = format!("br b{j}");
                }
                1 => {
                    let (a, b) = (fwd(r), fwd(r));
                    out.extend([a, b]);
                    let c = if r.gen_bool(0.5) { "%t" } else { "%f" };
                    term = format!("brcond {c}, b{a}, b{b}");
                }
                2 => {
                    let (a, b) = (fwd(r), fwd(r));
                    out.extend([a, b]);
                    let _ = writeln!(
                        body,
                        "  %v{k} = load %ctr, 0, 8\n  %x{k} = xor %v{k}, %seed\n  %m{k} = and %x{k}, %one"
                    );
                    if r.gen_bool(0.5) {
                        let _ = writeln!(body, "  out %x{k}");
                    }
                    term = format!("brcond %m{k}, b{a}, b{b}");
                }
                _ => {
                    let back = r.gen_range(0..=k);
                    let a = fwd(r);
                    out.extend([back, a]);
                    let _ = writeln!(
                        body,
                        "  %v{k} = load %ctr, 0, 8\n  %d{k} = add %v{k}, %one\n  store %ctr, 0, %d{k}, 8\n  %l{k} = slt %d{k}, %limit\n  %x{k} = xor %d{k}, %seed\n  %y{k} = or %x{k}, %l{k}\n  %g{k} = and %l{k}, %y{k}"
                    );
                    if r.gen_bool(0.3) {
                        let _ = writeln!(body, "  out %d{k}");
                    }
                    term = format!("brcond %g{k}, b{back}, b{a}");
                }
            }
        }
        succs.push(out);
        bodies.push(body);
        terms.push(term);
    }

    let mut preds: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n];
    preds[0].insert("entry".into());
    for (k, out) in succs.iter().enumerate() {
        for &j in out {
            preds[j].insert(format!("b{k}"));
        }
    }
    for k in 0..n {
        let _ = writeln!(s, "b{k}:");
        if !preds[k].is_empty() && r.gen_bool(0.4) {
            let inc: Vec<String> = preds[k]
                .iter()
                .map(|p| {
                    let v = ["%t", "%f", "%one", "%limit"].choose(r).unwrap();
                    format!("[{v}, {p}]")
                })
                .collect();
            let _ = writeln!(s, "  %p{k} = phi {}\n  out %p{k}", inc.join(", "));
        }
        s.push_str(&bodies[k]);
        let _ = writeln!(s, "  {}", terms[k]);
    }
    s.push_str("}\n");
    parse_program(&s).unwrap_or_else(|e| panic!("generated CFG program does not parse: {e}\n{s}"))
}

// ---------------------------------------------------------------------------
// Random loop kernels

/// Knobs for [`random_kernel`].
#[derive(Debug, Clone, Copy)]
pub struct KernelShape {
    pub max_trip: i64,
    pub allow_stores: bool,
    pub max_instructions: usize,
}

impl Default for KernelShape {
    fn default() -> Self {
        KernelShape { max_trip: 40, allow_stores: true, max_instructions: 50 }
    }
}

const TABLE_BASE: u64 = 4096;
const TABLE_WORDS: u64 = 1024;

/// A program whose entry function is one canonical counted loop with a
/// random body of arithmetic, loads from a PRNG table, optional stores into
/// it, and optional `out`s. Returns the DIR text.
pub fn random_kernel_text(r: &mut ChaCha8Rng, shape: KernelShape) -> String {
    let init = r.gen_range(-3..=3);
    let bound = init + r.gen_range(0..=shape.max_trip);
    let step = r.gen_range(1..=3);
    let cmp = if r.gen_bool(0.5) { "slt" } else { "sle" };
    let mut s = String::new();
    let _ = writeln!(s, "data @base={TABLE_BASE} prng(seed={}, len={})", r.gen_range(1..1000), TABLE_WORDS * 8 + 64);
    s.push_str("entry @main\n\nfunc @main() kind=original {\nentry:\n");
    let _ = writeln!(
        s,
        "  %zero = const 0\n  %init = const {init}\n  %step = const {step}\n  %n = const {bound}\n  %base = const {TABLE_BASE}\n  %mask = const {}\n  %three = const 3\n  %seven = const 7\n  %k0 = const {}",
        TABLE_WORDS - 1,
        r.gen_range(-50..50)
    );
    let _ = writeln!(
        s,
        "  br loop\nloop:\n  %i = phi [%init, entry], [%i.next, body]\n  %acc = phi [%zero, entry], [%acc.next, body]\n  %more = {cmp} %i, %n\n  brcond %more, body, done\nbody:"
    );
    // 9 entry constants, 3 header instructions, 2 loop tails, 1 out, and
    // 4 terminators.
    let mut budget = shape.max_instructions.saturating_sub(19);
    let mut pool: Vec<String> = vec!["i".into(), "acc".into(), "k0".into(), "init".into()];
    let mut v = 0;
    let safe = ["add", "sub", "mul", "and", "or", "xor", "shl", "shr", "slt", "sle", "seq"];
    while budget > 0 {
        let pick = |r: &mut ChaCha8Rng, pool: &Vec<String>| pool.choose(r).unwrap().clone();
        match r.gen_range(0..10) {
            0..=3 if budget >= 4 => {
                let x = pick(r, &pool);
                let width = [1, 2, 4, 8].choose(r).unwrap();
                let off = [0, 8, 16].choose(r).unwrap();
                let _ = writeln!(
                    s,
                    "  %a{v} = and %{x}, %mask\n  %o{v} = shl %a{v}, %three\n  %p{v} = add %base, %o{v}\n  %v{v} = load %p{v}, {off}, {width}"
                );
                pool.push(format!("v{v}"));
                budget -= 4;
            }
            4 if shape.allow_stores && budget >= 4 => {
                let (x, y) = (pick(r, &pool), pick(r, &pool));
                let _ = writeln!(
                    s,
                    "  %a{v} = and %{x}, %mask\n  %o{v} = shl %a{v}, %three\n  %p{v} = add %base, %o{v}\n  store %p{v}, 0, %{y}, 8"
                );
                budget -= 4;
            }
            5 => {
                let x = pick(r, &pool);
                let op = if r.gen_bool(0.5) { "div" } else { "rem" };
                let _ = writeln!(s, "  %v{v} = {op} %{x}, %seven");
                pool.push(format!("v{v}"));
                budget -= 1;
            }
            6 if budget >= 1 && r.gen_bool(0.3) => {
                let x = pick(r, &pool);
                let _ = writeln!(s, "  out %{x}");
                budget -= 1;
            }
            _ => {
                let (x, y) = (pick(r, &pool), pick(r, &pool));
                let op = safe.choose(r).unwrap();
                let _ = writeln!(s, "  %v{v} = {op} %{x}, %{y}");
                pool.push(format!("v{v}"));
                budget -= 1;
            }
        }
        v += 1;
        if r.gen_bool(0.15) {
            break;
        }
    }
    let last = pool.last().unwrap();
    let _ = writeln!(
        s,
        "  %acc.next = add %acc, %{last}\n  %i.next = add %i, %step\n  br loop\ndone:\n  out %acc\n  ret\n}}"
    );
    s
}

pub fn random_kernel(r: &mut ChaCha8Rng, shape: KernelShape) -> Program {
    let text = random_kernel_text(r, shape);
    parse_program(&text).unwrap_or_else(|e| panic!("generated kernel does not parse: {e}\n{text}"))
}

// ---------------------------------------------------------------------------
// Slicing oracle

/// Every `(id, used registers, defined register, side effect)` in `f`.
fn facts(f: &Function) -> Vec<(InstrId, Vec<String>, Option<String>, bool)> {
    let mut out = Vec::new();
    for b in &f.blocks {
        for p in &b.phis {
            let uses = p.incoming.iter().map(|(r, _)| r.0.clone()).collect();
            out.push((p.id, uses, Some(p.dst.0.clone()), false));
        }
        for i in &b.body {
            let uses = i.op.uses().map(|r| r.0.clone()).collect();
            let side = matches!(i.op, Op::Store { .. } | Op::Out { .. });
            out.push((i.id, uses, i.op.dst().map(|r| r.0.clone()), side));
        }
    }
    out
}

/// Transitive closure of the data-dependence relation by naive fixpoint:
/// keep adding the definer of any register read by something already in the
/// set until nothing changes. Stores and outs are dropped at the end.
pub fn oracle_slice(f: &Function, seeds: &[InstrId]) -> BTreeSet<InstrId> {
    let facts = facts(f);
    let mut set: BTreeSet<InstrId> = seeds.iter().copied().collect();
    loop {
        let mut grew = false;
        for (id, uses, _, _) in &facts {
            if !set.contains(id) {
                continue;
            }
            for u in uses {
                for (d, _, def, _) in &facts {
                    if def.as_deref() == Some(u.as_str()) && set.insert(*d) {
                        grew = true;
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }
    set.retain(|id| !facts.iter().any(|(i, _, _, side)| i == id && *side));
    set
}

/// The ids dead-code elimination should keep for `roots`: the roots that
/// exist, plus the closure of those roots and of every register a
/// terminator reads.
pub fn oracle_dce_keep(f: &Function, roots: &BTreeSet<InstrId>) -> BTreeSet<InstrId> {
    let facts = facts(f);
    let present: BTreeSet<InstrId> = facts.iter().map(|x| x.0).collect();
    let mut seeds: Vec<InstrId> = roots.intersection(&present).copied().collect();
    for b in &f.blocks {
        let used = match &b.term {
            Terminator::BrCond { cond, .. } => Some(cond),
            Terminator::Ret(r) => r.as_ref(),
            Terminator::Br(_) => None,
        };
        if let Some(u) = used {
            seeds.extend(facts.iter().filter(|x| x.2.as_deref() == Some(u.0.as_str())).map(|x| x.0));
        }
    }
    let mut keep = oracle_slice(f, &seeds);
    keep.extend(roots.intersection(&present));
    keep
}

/// Ids of `f` in program order.
pub fn ids_in_order(f: &Function) -> Vec<InstrId> {
    f.blocks.iter().flat_map(|b| b.phis.iter().map(|p| p.id).chain(b.body.iter().map(|i| i.id))).collect()
}
