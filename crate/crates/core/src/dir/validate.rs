use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn program(message: impl Into<String>) -> Self {
        Diagnostic { function: None, message: message.into() }
    }

    fn in_fn(f: &Function, message: impl Into<String>) -> Self {
        Diagnostic { function: Some(f.name.clone()), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.function {
            Some(name) => write!(f, "@{name}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Checks every structural invariant of a program. An empty result means the
/// program is valid.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut names = HashSet::new();
    for f in &p.functions {
        if !names.insert(f.name.as_str()) {
            diags.push(Diagnostic::program(format!("duplicate function `@{}`", f.name)));
        }
    }
    if p.entry_function().is_none() {
        diags.push(Diagnostic::program(format!("missing entry function `@{}`", p.entry)));
    }

    let mut segs: Vec<&DataSegment> = p.data.iter().collect();
    for s in &segs {
        if s.is_empty() {
            diags.push(Diagnostic::program(format!("empty data segment at {}", s.base)));
        }
    }
    segs.sort_by_key(|s| s.base);
    for w in segs.windows(2) {
        if w[0].end() > w[1].base {
            diags.push(Diagnostic::program(format!("overlapping data segments at {} and {}", w[0].base, w[1].base)));
        }
    }

    let mut seen_ids = HashSet::new();
    for f in &p.functions {
        for id in f.all_ids() {
            if !seen_ids.insert(id) {
                diags.push(Diagnostic::in_fn(f, format!("duplicate instruction id {id}")));
            }
        }
    }

    let origin_loads: HashSet<InstrId> = p
        .functions
        .iter()
        .filter(|f| f.kind == FunctionKind::Original)
        .flat_map(|f| f.instructions())
        .filter(|i| i.op.is_load())
        .map(|i| i.id)
        .collect();

    for f in &p.functions {
        validate_function_into(f, &mut diags);
        for i in f.instructions() {
            match (&i.op, i.origin) {
                (Op::Prefetch { .. }, None) => {
                    diags.push(Diagnostic::in_fn(f, format!("prefetch [{}] has no origin tag", i.id)))
                }
                (_, Some(tag)) if !origin_loads.contains(&tag.origin_load_id) => diags.push(Diagnostic::in_fn(
                    f,
                    format!("origin tag on [{}] does not name a load in an original function", i.id),
                )),
                _ => {}
            }
        }
    }
    diags
}

/// Function-local checks (everything except ids and origin tags, which need
/// the whole program).
pub fn validate_function(f: &Function) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    validate_function_into(f, &mut diags);
    diags
}

fn validate_function_into(f: &Function, diags: &mut Vec<Diagnostic>) {
    if f.blocks.is_empty() {
        diags.push(Diagnostic::in_fn(f, "function has no blocks"));
        return;
    }

    let labels: HashMap<&str, usize> = f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
    if labels.len() != f.blocks.len() {
        diags.push(Diagnostic::in_fn(f, "duplicate block label"));
    }

    let mut undefined_label = false;
    for b in &f.blocks {
        for s in b.term.successors() {
            if !labels.contains_key(s) {
                undefined_label = true;
                diags.push(Diagnostic::in_fn(f, format!("undefined label `{s}` in block `{}`", b.label)));
            }
        }
    }

    if f.kind == FunctionKind::Access {
        for b in &f.blocks {
            for i in &b.body {
                match i.op {
                    Op::Store { .. } => diags.push(Diagnostic::in_fn(
                        f,
                        format!("store in access phase ([{}] in block `{}`)", i.id, b.label),
                    )),
                    Op::Out { .. } => diags
                        .push(Diagnostic::in_fn(f, format!("out in access phase ([{}] in block `{}`)", i.id, b.label))),
                    _ => {}
                }
            }
        }
    }

    let preds = f.predecessors();
    let entry = &f.blocks[0].label;
    if !preds[entry.as_str()].is_empty() {
        diags.push(Diagnostic::in_fn(f, format!("entry block `{entry}` has predecessors")));
    }

    for b in &f.blocks {
        let bp: BTreeSet<&str> = preds[b.label.as_str()].iter().copied().collect();
        for phi in &b.phis {
            let mut got = BTreeSet::new();
            for (_, l) in &phi.incoming {
                if !got.insert(l.as_str()) {
                    diags.push(Diagnostic::in_fn(f, format!("phi {} has duplicate entries for `{l}`", phi.dst)));
                }
                if !bp.contains(l.as_str()) {
                    diags.push(Diagnostic::in_fn(f, format!("phi {} has an entry for non-predecessor `{l}`", phi.dst)));
                }
            }
            for missing in bp.difference(&got) {
                diags.push(Diagnostic::in_fn(
                    f,
                    format!("phi {} is missing an entry for predecessor `{missing}`", phi.dst),
                ));
            }
        }
    }

    // Single assignment.
    let mut defined: HashSet<&Reg> = HashSet::new();
    for r in &f.params {
        if !defined.insert(r) {
            diags.push(Diagnostic::in_fn(f, format!("register {r} defined more than once")));
        }
    }
    for b in &f.blocks {
        let defs = b.phis.iter().map(|p| &p.dst).chain(b.body.iter().filter_map(|i| i.op.dst()));
        for d in defs {
            if !defined.insert(d) {
                diags.push(Diagnostic::in_fn(f, format!("register {d} defined more than once")));
            }
        }
    }
    for r in f.used_regs() {
        if !defined.contains(r) {
            diags.push(Diagnostic::in_fn(f, format!("undefined register {r}")));
        }
    }

    if !undefined_label {
        check_assigned_before_use(f, diags);
    }
}

/// Forward "definitely assigned" dataflow. Unreachable blocks start at the
/// top element and therefore never report.
fn check_assigned_before_use(f: &Function, diags: &mut Vec<Diagnostic>) {
    let n = f.blocks.len();
    let idx: HashMap<&str, usize> = f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
    let all: BTreeSet<&Reg> = f
        .params
        .iter()
        .chain(
            f.blocks.iter().flat_map(|b| b.phis.iter().map(|p| &p.dst).chain(b.body.iter().filter_map(|i| i.op.dst()))),
        )
        .collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, b) in f.blocks.iter().enumerate() {
        for s in b.term.successors() {
            if let Some(&j) = idx.get(s) {
                if !preds[j].contains(&i) {
                    preds[j].push(i);
                }
            }
        }
    }
    let block_defs: Vec<BTreeSet<&Reg>> = f
        .blocks
        .iter()
        .map(|b| b.phis.iter().map(|p| &p.dst).chain(b.body.iter().filter_map(|i| i.op.dst())).collect())
        .collect();

    let mut out: Vec<BTreeSet<&Reg>> = vec![all.clone(); n];
    let entry_in: BTreeSet<&Reg> = f.params.iter().collect();
    let mut ins: Vec<BTreeSet<&Reg>> = vec![all.clone(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            let inset = if i == 0 {
                entry_in.clone()
            } else if preds[i].is_empty() {
                all.clone()
            } else {
                let mut it = preds[i].iter();
                let first = out[*it.next().expect("non-empty")].clone();
                it.fold(first, |acc, &p| acc.intersection(&out[p]).copied().collect())
            };
            let new_out: BTreeSet<&Reg> = inset.union(&block_defs[i]).copied().collect();
            if new_out != out[i] || inset != ins[i] {
                out[i] = new_out;
                ins[i] = inset;
                changed = true;
            }
        }
    }

    let mut reported: BTreeSet<Reg> = BTreeSet::new();
    let mut report = |r: &Reg, where_: &str, diags: &mut Vec<Diagnostic>| {
        if all.contains(r) && reported.insert(r.clone()) {
            diags.push(Diagnostic::in_fn(f, format!("register {r} may be used before assignment in block `{where_}`")));
        }
    };

    for (i, b) in f.blocks.iter().enumerate() {
        for phi in &b.phis {
            for (v, l) in &phi.incoming {
                if let Some(&pi) = idx.get(l.as_str()) {
                    if !out[pi].contains(v) {
                        report(v, &b.label, diags);
                    }
                }
            }
        }
        let mut avail = ins[i].clone();
        avail.extend(b.phis.iter().map(|p| &p.dst));
        for ins_ in &b.body {
            for u in ins_.op.uses() {
                if !avail.contains(u) {
                    report(u, &b.label, diags);
                }
            }
            if let Some(d) = ins_.op.dst() {
                avail.insert(d);
            }
        }
        if let Some(u) = b.term.uses() {
            if !avail.contains(u) {
                report(u, &b.label, diags);
            }
        }
    }
}
