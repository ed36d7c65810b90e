use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::dir::Function;

/// Control-flow graph over block labels. Node 0 is not necessarily the
/// entry; see [`Cfg::entry`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub labels: Vec<String>,
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    pub entry: usize,
}

impl Cfg {
    /// Builds a graph from explicit edges. Duplicate edges are collapsed.
    pub fn from_edges(labels: Vec<String>, edges: &[(usize, usize)], entry: usize) -> Cfg {
        let n = labels.len();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for &(a, b) in edges {
            if !succs[a].contains(&b) {
                succs[a].push(b);
                preds[b].push(a);
            }
        }
        Cfg { labels, succs, preds, entry }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn edges(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (a, ss) in self.succs.iter().enumerate() {
            for &b in ss {
                out.push((self.labels[a].as_str(), self.labels[b].as_str()));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.succs.iter().map(Vec::len).sum()
    }

    /// Nodes reachable from the entry, in reverse postorder.
    pub fn reverse_postorder(&self) -> Vec<usize> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut post = Vec::with_capacity(n);
        let mut stack: Vec<(usize, usize)> = vec![(self.entry, 0)];
        seen[self.entry] = true;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&s) = self.succs[node].get(*next) {
                *next += 1;
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                post.push(node);
                stack.pop();
            }
        }
        post.reverse();
        post
    }
}

/// One node per block, one edge per distinct terminator target.
pub fn build_cfg(f: &Function) -> Cfg {
    let idx: HashMap<&str, usize> = f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
    let mut edges = Vec::new();
    for (i, b) in f.blocks.iter().enumerate() {
        for s in b.term.successors() {
            if let Some(&j) = idx.get(s) {
                edges.push((i, j));
            }
        }
    }
    Cfg::from_edges(f.blocks.iter().map(|b| b.label.clone()).collect(), &edges, 0)
}

/// Immediate dominators of the reachable part of a CFG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomTree {
    /// `idom[entry] == entry`.
    pub idom: BTreeMap<String, String>,
    /// Unreachable nodes, which are left out of `idom`.
    pub unreachable: Vec<String>,
    idx: Vec<Option<usize>>,
    entry: usize,
}

impl DomTree {
    pub fn idom_of(&self, label: &str) -> Option<&str> {
        self.idom.get(label).map(String::as_str)
    }

    pub(crate) fn idom_index(&self, node: usize) -> Option<usize> {
        self.idx.get(node).copied().flatten()
    }

    /// Does `a` dominate `b`? Both must be node indices of the source CFG.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom_index(cur) {
                Some(up) if up != cur => cur = up,
                _ => return false,
            }
        }
    }

    pub fn is_reachable(&self, node: usize) -> bool {
        node == self.entry || self.idom_index(node).is_some()
    }
}

/// Iterative dominator computation over reverse postorder
/// (Cooper, Harvey, and Kennedy).
pub fn dominators(c: &Cfg) -> DomTree {
    let n = c.len();
    let rpo = c.reverse_postorder();
    let mut order = vec![usize::MAX; n];
    for (k, &b) in rpo.iter().enumerate() {
        order[b] = k;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[c.entry] = Some(c.entry);

    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].expect("processed");
            }
            while order[b] > order[a] {
                b = idom[b].expect("processed");
            }
        }
        a
    };

    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new: Option<usize> = None;
            for &p in &c.preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }

    let mut map = BTreeMap::new();
    let mut unreachable = Vec::new();
    for i in 0..n {
        match idom[i] {
            Some(d) => {
                map.insert(c.labels[i].clone(), c.labels[d].clone());
            }
            None => unreachable.push(c.labels[i].clone()),
        }
    }
    DomTree { idom: map, unreachable, idx: idom, entry: c.entry }
}

/// A natural loop: all back edges into one header, merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaturalLoop {
    pub header: String,
    pub latches: BTreeSet<String>,
    pub body: BTreeSet<String>,
}

/// Every natural loop of the reachable CFG, ordered by header node index.
pub fn natural_loops(c: &Cfg, dom: &DomTree) -> Vec<NaturalLoop> {
    let mut by_header: BTreeMap<usize, (BTreeSet<usize>, BTreeSet<usize>)> = BTreeMap::new();
    for t in 0..c.len() {
        if !dom.is_reachable(t) {
            continue;
        }
        for &h in &c.succs[t] {
            if !dom.dominates(h, t) {
                continue;
            }
            let entry = by_header.entry(h).or_default();
            entry.0.insert(t);
            entry.1.insert(h);
            let mut stack = Vec::new();
            if entry.1.insert(t) {
                stack.push(t);
            }
            while let Some(x) = stack.pop() {
                for &p in &c.preds[x] {
                    if dom.is_reachable(p) && entry.1.insert(p) {
                        stack.push(p);
                    }
                }
            }
        }
    }
    by_header
        .into_iter()
        .map(|(h, (latches, body))| NaturalLoop {
            header: c.labels[h].clone(),
            latches: latches.into_iter().map(|l| c.labels[l].clone()).collect(),
            body: body.into_iter().map(|b| c.labels[b].clone()).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Cfg {
        Cfg::from_edges((0..n).map(|i| format!("b{i}")).collect(), edges, 0)
    }

    #[test]
    fn straight_line() {
        let c = graph(3, &[(0, 1), (1, 2)]);
        let d = dominators(&c);
        assert_eq!(d.idom_of("b2"), Some("b1"));
        assert_eq!(d.idom_of("b1"), Some("b0"));
        assert_eq!(d.idom_of("b0"), Some("b0"));
    }

    #[test]
    fn diamond() {
        let c = graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(c.edge_count(), 4);
        let d = dominators(&c);
        assert_eq!(d.idom_of("b3"), Some("b0"));
        assert!(natural_loops(&c, &d).is_empty());
    }

    #[test]
    fn unreachable_nodes_are_dropped() {
        let c = graph(3, &[(0, 1), (2, 1)]);
        let d = dominators(&c);
        assert_eq!(d.unreachable, vec!["b2".to_string()]);
        assert_eq!(d.idom_of("b1"), Some("b0"));
    }

    #[test]
    fn loop_body() {
        // 0 -> 1 -> 2 -> 3 -> 1, 1 -> 4
        let c = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 1), (1, 4)]);
        let d = dominators(&c);
        let loops = natural_loops(&c, &d);
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].header, "b1");
        assert_eq!(loops[0].latches.iter().collect::<Vec<_>>(), vec!["b3"]);
        assert_eq!(loops[0].body.len(), 3);
    }

    #[test]
    fn self_loop() {
        let c = graph(3, &[(0, 1), (1, 1), (1, 2)]);
        let loops = natural_loops(&c, &dominators(&c));
        assert_eq!(loops[0].body.iter().collect::<Vec<_>>(), vec!["b1"]);
    }
}
