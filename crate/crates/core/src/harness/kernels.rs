//! Builtin benchmark kernels, generated as DIR text, each with a reference
//! implementation in plain Rust.

use std::fmt::Write;

use crate::dir::{mix_seed, parse_program, prng_bytes, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Characterization {
    ComputeBound,
    Streaming,
    IndirectGather,
    LinkedChase,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Horner evaluation of a fixed polynomial at each `i`; no memory.
    ComputePoly { iters: u64, degree: u64 },
    /// Sum of an array of i64, one cache line per iteration.
    StreamSum { elems: u64 },
    /// Sum of `table[perm[i] & mask]` with 4-byte `perm` entries.
    GatherSum { iters: u64, table: u64 },
    /// Walks 16-byte nodes `{link, val}`; the next node index is
    /// `(link ^ i) & mask`.
    ChaseSum { nodes: u64, steps: u64 },
    /// `out[i] = in[i] + in[i+1] + in[i+2]`, also summing the results.
    Stencil3 { n: u64 },
}

const DATA_BASE: u64 = 4096;
const STREAM_SEED: u64 = 11;
const PERM_SEED: u64 = 21;
const TABLE_SEED: u64 = 22;
const NODE_SEED: u64 = 31;
const STENCIL_SEED: u64 = 41;

#[derive(Debug, Clone)]
pub struct BenchmarkKernel {
    pub name: String,
    pub kind: KernelKind,
    pub source: String,
}

impl BenchmarkKernel {
    pub fn new(name: &str, kind: KernelKind) -> Self {
        let source = match kind {
            KernelKind::ComputePoly { iters, degree } => compute_poly_src(iters, degree),
            KernelKind::StreamSum { elems } => stream_sum_src(elems),
            KernelKind::GatherSum { iters, table } => gather_sum_src(iters, table),
            KernelKind::ChaseSum { nodes, steps } => chase_sum_src(nodes, steps),
            KernelKind::Stencil3 { n } => stencil3_src(n),
        };
        BenchmarkKernel { name: name.to_string(), kind, source }
    }

    pub fn program(&self) -> Program {
        parse_program(&self.source).expect("builtin kernels parse")
    }

    pub fn characterization(&self) -> Characterization {
        match self.kind {
            KernelKind::ComputePoly { .. } => Characterization::ComputeBound,
            KernelKind::StreamSum { .. } => Characterization::Streaming,
            KernelKind::GatherSum { .. } => Characterization::IndirectGather,
            KernelKind::ChaseSum { .. } => Characterization::LinkedChase,
            KernelKind::Stencil3 { .. } => Characterization::Mixed,
        }
    }

    /// Bytes of data the kernel reads or writes.
    pub fn working_set_bytes(&self) -> u64 {
        match self.kind {
            KernelKind::ComputePoly { .. } => 0,
            KernelKind::StreamSum { elems } => elems * 8,
            KernelKind::GatherSum { iters, table } => iters * 4 + table * 8,
            KernelKind::ChaseSum { nodes, .. } => nodes * 16,
            KernelKind::Stencil3 { n } => (n + 2) * 8 + n * 8,
        }
    }

    /// Expected `out` stream for a given input seed.
    pub fn reference_output(&self, seed: u64) -> Vec<i64> {
        match self.kind {
            KernelKind::ComputePoly { iters, degree } => {
                let c = poly_coefficients(degree);
                let mut acc = 0i64;
                for i in 0..iters as i64 {
                    let mut y = c[degree as usize];
                    for k in (0..degree as usize).rev() {
                        y = y.wrapping_mul(i).wrapping_add(c[k]);
                    }
                    acc = acc.wrapping_add(y);
                }
                vec![acc]
            }
            KernelKind::StreamSum { elems } => {
                let a = words8(&prng_bytes(mix_seed(STREAM_SEED, seed), elems * 8));
                vec![a.iter().fold(0i64, |s, &v| s.wrapping_add(v))]
            }
            KernelKind::GatherSum { iters, table } => {
                let perm = prng_bytes(mix_seed(PERM_SEED, seed), iters * 4);
                let t = words8(&prng_bytes(mix_seed(TABLE_SEED, seed), table * 8));
                let mut acc = 0i64;
                for ch in perm.chunks_exact(4) {
                    let raw = u32::from_le_bytes(ch.try_into().unwrap()) as u64;
                    acc = acc.wrapping_add(t[(raw & (table - 1)) as usize]);
                }
                vec![acc]
            }
            KernelKind::ChaseSum { nodes, steps } => {
                let w = words8(&prng_bytes(mix_seed(NODE_SEED, seed), nodes * 16));
                let (mut cur, mut acc) = (0usize, 0i64);
                for i in 0..steps as i64 {
                    let link = w[2 * cur];
                    acc = acc.wrapping_add(w[2 * cur + 1]);
                    cur = ((link ^ i) as u64 & (nodes - 1)) as usize;
                }
                vec![acc]
            }
            KernelKind::Stencil3 { n } => {
                let a = words8(&prng_bytes(mix_seed(STENCIL_SEED, seed), (n + 2) * 8));
                let acc = (0..n as usize)
                    .fold(0i64, |s, i| s.wrapping_add(a[i].wrapping_add(a[i + 1]).wrapping_add(a[i + 2])));
                vec![acc]
            }
        }
    }
}

fn words8(b: &[u8]) -> Vec<i64> {
    b.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Small signed coefficients from a fixed multiplicative hash.
pub fn poly_coefficients(degree: u64) -> Vec<i64> {
    (0..=degree).map(|k| ((k.wrapping_mul(2_654_435_761) >> 7) % 2001) as i64 - 1000).collect()
}

pub const COMPUTE_POLY: KernelKind = KernelKind::ComputePoly { iters: 1024, degree: 768 };
pub const STREAM_SUM: KernelKind = KernelKind::StreamSum { elems: 1 << 18 };
pub const GATHER_SUM: KernelKind = KernelKind::GatherSum { iters: 1 << 15, table: 1 << 17 };
pub const CHASE_SUM: KernelKind = KernelKind::ChaseSum { nodes: 1 << 16, steps: 1 << 15 };
pub const STENCIL3: KernelKind = KernelKind::Stencil3 { n: 1 << 16 };

pub fn builtin_kernels() -> Vec<BenchmarkKernel> {
    vec![
        BenchmarkKernel::new("compute_poly", COMPUTE_POLY),
        BenchmarkKernel::new("stream_sum", STREAM_SUM),
        BenchmarkKernel::new("gather_sum", GATHER_SUM),
        BenchmarkKernel::new("chase_sum", CHASE_SUM),
        BenchmarkKernel::new("stencil3", STENCIL3),
    ]
}

pub fn builtin_kernel(name: &str) -> Option<BenchmarkKernel> {
    builtin_kernels().into_iter().find(|k| k.name == name)
}

/// A builtin kernel with non-default size.
pub fn kernel_sized(name: &str, kind: KernelKind) -> BenchmarkKernel {
    BenchmarkKernel::new(name, kind)
}

fn header(out: &mut String) {
    out.push_str("entry @main\n\nfunc @main() kind=original {\nentry:\n");
}

fn counted_loop_head(out: &mut String, extra_phis: &[(&str, &str)]) {
    out.push_str("  br loop\nloop:\n  %i = phi [%zero, entry], [%i.next, body]\n");
    for (name, init) in extra_phis {
        let _ = writeln!(out, "  %{name} = phi [%{init}, entry], [%{name}.next, body]");
    }
    out.push_str("  %more = slt %i, %n\n  brcond %more, body, done\nbody:\n");
}

fn footer(out: &mut String) {
    out.push_str("  br loop\ndone:\n  out %acc\n  ret\n}\n");
}

fn compute_poly_src(iters: u64, degree: u64) -> String {
    let c = poly_coefficients(degree);
    let mut s = String::from("# Horner evaluation; no memory traffic.\n");
    header(&mut s);
    let _ = writeln!(s, "  %zero = const 0\n  %one = const 1\n  %n = const {iters}");
    for (k, v) in c.iter().enumerate() {
        let _ = writeln!(s, "  %c{k} = const {v}");
    }
    counted_loop_head(&mut s, &[("acc", "zero")]);
    let mut prev = format!("c{degree}");
    for k in (0..degree).rev() {
        let _ = writeln!(s, "  %m{k} = mul %{prev}, %i\n  %y{k} = add %m{k}, %c{k}");
        prev = format!("y{k}");
    }
    let _ = writeln!(s, "  %acc.next = add %acc, %{prev}\n  %i.next = add %i, %one");
    footer(&mut s);
    s
}

fn stream_sum_src(elems: u64) -> String {
    assert!(elems % 8 == 0, "stream_sum needs a multiple of 8 elements");
    let mut s = String::from("# Sequential sum; each iteration consumes one 64-byte line.\n");
    let _ = writeln!(s, "data @base={DATA_BASE} prng(seed={STREAM_SEED}, len={})", elems * 8);
    header(&mut s);
    let _ = writeln!(
        s,
        "  %zero = const 0\n  %step = const 8\n  %three = const 3\n  %n = const {elems}\n  %a = const {DATA_BASE}"
    );
    counted_loop_head(&mut s, &[("acc", "zero")]);
    s.push_str("  %off = shl %i, %three\n  %p = add %a, %off\n");
    for k in 0..8 {
        let _ = writeln!(s, "  %v{k} = load %p, {}, 8", k * 8);
    }
    let mut prev = "acc".to_string();
    for k in 0..8 {
        let dst = if k == 7 { "acc.next".to_string() } else { format!("s{k}") };
        let _ = writeln!(s, "  %{dst} = add %{prev}, %v{k}");
        prev = dst;
    }
    s.push_str("  %i.next = add %i, %step\n");
    footer(&mut s);
    s
}

fn gather_sum_src(iters: u64, table: u64) -> String {
    assert!(table.is_power_of_two());
    let perm = DATA_BASE;
    let tbase = (perm + iters * 4).next_multiple_of(4096);
    let mut s = String::from("# Indirect gather through a 4-byte index array.\n");
    let _ = writeln!(s, "data @base={perm} prng(seed={PERM_SEED}, len={})", iters * 4);
    let _ = writeln!(s, "data @base={tbase} prng(seed={TABLE_SEED}, len={})", table * 8);
    header(&mut s);
    let _ = writeln!(
        s,
        "  %zero = const 0\n  %one = const 1\n  %two = const 2\n  %three = const 3\n  %n = const {iters}\n  %perm = const {perm}\n  %table = const {tbase}\n  %mask = const {}",
        table - 1
    );
    counted_loop_head(&mut s, &[("acc", "zero")]);
    s.push_str(
        "  %po = shl %i, %two\n  %pp = add %perm, %po\n  %raw = load %pp, 0, 4\n  %idx = and %raw, %mask\n  %to = shl %idx, %three\n  %tp = add %table, %to\n  %v = load %tp, 0, 8\n  %acc.next = add %acc, %v\n  %i.next = add %i, %one\n",
    );
    footer(&mut s);
    s
}

fn chase_sum_src(nodes: u64, steps: u64) -> String {
    assert!(nodes.is_power_of_two());
    let mut s = String::from("# Linked traversal; each address depends on the previous load.\n");
    let _ = writeln!(s, "data @base={DATA_BASE} prng(seed={NODE_SEED}, len={})", nodes * 16);
    header(&mut s);
    let _ = writeln!(
        s,
        "  %zero = const 0\n  %one = const 1\n  %four = const 4\n  %n = const {steps}\n  %nodes = const {DATA_BASE}\n  %mask = const {}",
        nodes - 1
    );
    counted_loop_head(&mut s, &[("acc", "zero"), ("cur", "nodes")]);
    s.push_str(
        "  %link = load %cur, 0, 8\n  %val = load %cur, 8, 8\n  %acc.next = add %acc, %val\n  %x = xor %link, %i\n  %k = and %x, %mask\n  %ko = shl %k, %four\n  %cur.next = add %nodes, %ko\n  %i.next = add %i, %one\n",
    );
    footer(&mut s);
    s
}

fn stencil3_src(n: u64) -> String {
    let input = DATA_BASE;
    let output = (input + (n + 2) * 8).next_multiple_of(4096);
    let mut s = String::from("# Three-point stencil writing a second array.\n");
    let _ = writeln!(s, "data @base={input} prng(seed={STENCIL_SEED}, len={})", (n + 2) * 8);
    let _ = writeln!(s, "data @base={output} zero={}", n * 8);
    header(&mut s);
    let _ = writeln!(
        s,
        "  %zero = const 0\n  %one = const 1\n  %three = const 3\n  %n = const {n}\n  %in = const {input}\n  %out = const {output}"
    );
    counted_loop_head(&mut s, &[("acc", "zero")]);
    s.push_str(
        "  %o = shl %i, %three\n  %p = add %in, %o\n  %x0 = load %p, 0, 8\n  %x1 = load %p, 8, 8\n  %x2 = load %p, 16, 8\n  %s = add %x0, %x1\n  %t = add %s, %x2\n  %q = add %out, %o\n  store %q, 0, %t, 8\n  %acc.next = add %acc, %t\n  %i.next = add %i, %one\n",
    );
    footer(&mut s);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dir::interpret_seeded;

    #[test]
    fn small_kernels_match_reference() {
        let kinds = [
            KernelKind::ComputePoly { iters: 16, degree: 5 },
            KernelKind::StreamSum { elems: 64 },
            KernelKind::GatherSum { iters: 40, table: 64 },
            KernelKind::ChaseSum { nodes: 32, steps: 50 },
            KernelKind::Stencil3 { n: 30 },
        ];
        for kind in kinds {
            let k = BenchmarkKernel::new("t", kind);
            let p = k.program();
            for seed in [0, 3] {
                let t = interpret_seeded(&p, p.required_memory(), 10_000_000, seed).unwrap();
                assert_eq!(t.output, k.reference_output(seed), "{kind:?}");
            }
        }
    }
}
