use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::dir::{Function, Op, Reg, Terminator};

/// Cleans up control flow until nothing changes: drops unreachable blocks,
/// folds branches on constants or to a single target, removes empty
/// forwarding blocks, and merges straight-line block pairs.
pub fn simplify_cfg(f: &Function) -> Function {
    let mut f = f.clone();
    while drop_unreachable(&mut f) || fold_branches(&mut f) || remove_forwarder(&mut f) || merge_pair(&mut f) {}
    f
}

fn drop_unreachable(f: &mut Function) -> bool {
    let Some(entry) = f.entry_label() else { return false };
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut queue = VecDeque::from([entry.to_string()]);
    seen.insert(entry.to_string());
    while let Some(l) = queue.pop_front() {
        let Some(b) = f.block(&l) else { continue };
        for s in b.term.successors() {
            if seen.insert(s.to_string()) {
                queue.push_back(s.to_string());
            }
        }
    }
    if seen.len() == f.blocks.len() {
        return false;
    }
    f.blocks.retain(|b| seen.contains(&b.label));
    for b in &mut f.blocks {
        for p in &mut b.phis {
            p.incoming.retain(|(_, l)| seen.contains(l));
        }
    }
    true
}

fn fold_branches(f: &mut Function) -> bool {
    let consts: BTreeMap<Reg, i64> = f
        .instructions()
        .filter_map(|i| match &i.op {
            Op::Const { dst, value } => Some((dst.clone(), *value)),
            _ => None,
        })
        .collect();
    for k in 0..f.blocks.len() {
        let (taken, dropped) = match &f.blocks[k].term {
            Terminator::BrCond { on_true, on_false, .. } if on_true == on_false => (on_true.clone(), None),
            Terminator::BrCond { cond, on_true, on_false } => match consts.get(cond) {
                Some(0) => (on_false.clone(), Some(on_true.clone())),
                Some(_) => (on_true.clone(), Some(on_false.clone())),
                None => continue,
            },
            _ => continue,
        };
        let from = f.blocks[k].label.clone();
        f.blocks[k].term = Terminator::Br(taken);
        if let Some(d) = dropped {
            if let Some(b) = f.block_mut(&d) {
                for p in &mut b.phis {
                    p.incoming.retain(|(_, l)| *l != from);
                }
            }
        }
        return true;
    }
    false
}

/// Removes one non-entry block that has no phis, no body, and just jumps on.
fn remove_forwarder(f: &mut Function) -> bool {
    let preds: BTreeMap<String, Vec<String>> =
        f.predecessors().into_iter().map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect())).collect();
    for k in 1..f.blocks.len() {
        let b = &f.blocks[k];
        let Terminator::Br(target) = &b.term else { continue };
        if !b.is_empty() || *target == b.label {
            continue;
        }
        let (label, target) = (b.label.clone(), target.clone());
        let my_preds = &preds[&label];
        let target_preds = &preds[&target];
        let t = f.block(&target).expect("target exists");
        // A predecessor that already reaches the target directly would need
        // two phi entries with possibly different values.
        let clash = my_preds
            .iter()
            .any(|p| target_preds.contains(p) && t.phis.iter().any(|phi| phi.value_from(p) != phi.value_from(&label)));
        if clash {
            continue;
        }
        for p in my_preds {
            f.block_mut(p).expect("pred exists").term.retarget(&label, &target);
        }
        let t = f.block_mut(&target).expect("target exists");
        for phi in &mut t.phis {
            let Some(v) = phi.value_from(&label).cloned() else { continue };
            phi.incoming.retain(|(_, l)| *l != label);
            for p in my_preds {
                if phi.value_from(p).is_none() {
                    phi.incoming.push((v.clone(), p.clone()));
                }
            }
        }
        f.blocks.remove(k);
        return true;
    }
    false
}

/// Merges a block ending in `br C` with `C` when `C` has no other
/// predecessor.
fn merge_pair(f: &mut Function) -> bool {
    let preds: BTreeMap<String, Vec<String>> =
        f.predecessors().into_iter().map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect())).collect();
    for k in 0..f.blocks.len() {
        let Terminator::Br(c) = &f.blocks[k].term else { continue };
        let b_label = f.blocks[k].label.clone();
        let c = c.clone();
        if c == b_label || preds[&c] != [b_label.clone()] {
            continue;
        }
        let ci = f.block_index(&c).expect("successor exists");
        if ci == 0 {
            continue;
        }
        let cb = f.blocks.remove(ci);
        let bi = f.block_index(&b_label).expect("block exists");
        let b = &mut f.blocks[bi];
        b.body.extend(cb.body);
        b.term = cb.term;
        for phi in &cb.phis {
            let v = phi.value_from(&b_label).expect("single-pred phi").clone();
            f.replace_uses(&phi.dst, &v);
        }
        let b = &f.blocks[bi];
        for s in b.term.successors().into_iter().map(String::from).collect::<Vec<_>>() {
            let sb = f.block_mut(&s).expect("successor exists");
            for phi in &mut sb.phis {
                for (_, l) in &mut phi.incoming {
                    if *l == c {
                        *l = b_label.clone();
                    }
                }
            }
        }
        return true;
    }
    false
}
