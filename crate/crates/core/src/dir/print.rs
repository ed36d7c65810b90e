use std::fmt::Write;

use super::types::*;

/// Renders a program in canonical DIR text: data segments, the entry line,
/// then each function. Every instruction carries its `[id]` prefix so the
/// output re-parses to the same program.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for seg in &p.data {
        out.push_str(&print_segment(seg));
        out.push('\n');
    }
    let _ = writeln!(out, "entry @{}", p.entry);
    for f in &p.functions {
        out.push('\n');
        out.push_str(&print_function(f));
    }
    out
}

pub fn print_segment(seg: &DataSegment) -> String {
    match &seg.init {
        SegmentInit::Zero { len } => format!("data @base={} zero={}", seg.base, len),
        SegmentInit::Prng { seed, len } => {
            format!("data @base={} prng(seed={}, len={})", seg.base, seed, len)
        }
        SegmentInit::Bytes(b) => format!("data @base={} bytes={}", seg.base, hex::encode(b)),
    }
}

pub fn print_function(f: &Function) -> String {
    let mut out = String::new();
    let params: Vec<String> = f.params.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "func @{}({}) kind={} {{", f.name, params.join(", "), f.kind.as_str());
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for phi in &b.phis {
            let _ = writeln!(out, "  {}", print_phi(phi));
        }
        for i in &b.body {
            let _ = writeln!(out, "  {}", print_instruction(i));
        }
        let _ = writeln!(out, "  {}", print_terminator(&b.term));
    }
    out.push_str("}\n");
    out
}

pub fn print_phi(phi: &Phi) -> String {
    let inc: Vec<String> = phi.incoming.iter().map(|(r, l)| format!("[{r}, {l}]")).collect();
    format!("[{}] {} = phi {}", phi.id, phi.dst, inc.join(", "))
}

pub fn print_instruction(i: &Instruction) -> String {
    let body = match &i.op {
        Op::Const { dst, value } => format!("{dst} = const {value}"),
        Op::Bin { dst, op, lhs, rhs } => format!("{dst} = {} {lhs}, {rhs}", op.mnemonic()),
        Op::Load { dst, base, offset, width } => {
            format!("{dst} = load {base}, {offset}, {}", width.bytes())
        }
        Op::Store { base, offset, src, width } => {
            format!("store {base}, {offset}, {src}, {}", width.bytes())
        }
        Op::Prefetch { base, offset } => format!("prefetch {base}, {offset}"),
        Op::Out { src } => format!("out {src}"),
    };
    match i.origin {
        Some(tag) => format!("[{}] {body} !origin={}", i.id, tag.origin_load_id),
        None => format!("[{}] {body}", i.id),
    }
}

pub fn print_terminator(t: &Terminator) -> String {
    match t {
        Terminator::Br(l) => format!("br {l}"),
        Terminator::BrCond { cond, on_true, on_false } => {
            format!("brcond {cond}, {on_true}, {on_false}")
        }
        Terminator::Ret(None) => "ret".to_string(),
        Terminator::Ret(Some(r)) => format!("ret {r}"),
    }
}
