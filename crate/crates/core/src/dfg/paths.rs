use std::collections::BTreeMap;
use std::ops::Add;

use thiserror::Error;

use super::graph::{MatrixDfg, NodeId};

pub const DEFAULT_PATHS_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("DFG has {count} source-to-sink paths, above the cap of {cap}")]
    PathExplosion { count: u128, cap: usize },
}

/// Number of source-to-sink paths, saturating.
pub fn count_paths(dfg: &MatrixDfg) -> u128 {
    let mut from: BTreeMap<NodeId, u128> = BTreeMap::new();
    for &n in dfg.topo_order().iter().rev() {
        let c = if dfg.out_edges(n).is_empty() {
            1
        } else {
            dfg.successors(n)
                .map(|s| from[&s])
                .fold(0u128, |a, b| a.saturating_add(b))
        };
        from.insert(n, c);
    }
    dfg.node_ids()
        .filter(|&n| dfg.in_edges(n).is_empty())
        .map(|n| from[&n])
        .fold(0u128, |a, b| a.saturating_add(b))
}

/// Every directed path from a node without predecessors to a node without
/// successors, in lexicographic order of node ids.
pub fn all_source_sink_paths(dfg: &MatrixDfg, cap: usize) -> Result<Vec<Vec<NodeId>>, PathError> {
    let count = count_paths(dfg);
    if count > cap as u128 {
        return Err(PathError::PathExplosion { count, cap });
    }
    let succ: BTreeMap<NodeId, Vec<NodeId>> = dfg
        .node_ids()
        .map(|n| {
            let mut s: Vec<NodeId> = dfg.successors(n).collect();
            s.sort();
            s.dedup();
            (n, s)
        })
        .collect();
    let mut out = Vec::with_capacity(count as usize);
    let mut stack = Vec::new();
    fn walk(
        n: NodeId,
        succ: &BTreeMap<NodeId, Vec<NodeId>>,
        stack: &mut Vec<NodeId>,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        stack.push(n);
        if succ[&n].is_empty() {
            out.push(stack.clone());
        }
        for &s in &succ[&n] {
            walk(s, succ, stack, out);
        }
        stack.pop();
    }
    for n in dfg.node_ids().filter(|&n| dfg.in_edges(n).is_empty()) {
        walk(n, &succ, &mut stack, &mut out);
    }
    Ok(out)
}

/// Heaviest source-to-sink path under a per-node weight.
///
/// Ties go to the lexicographically smallest id sequence.
pub fn critical_path_by<W, F>(dfg: &MatrixDfg, weight: F) -> (Vec<NodeId>, W)
where
    W: Copy + PartialOrd + Add<Output = W> + Default,
    F: Fn(NodeId) -> W,
{
    if dfg.is_empty() {
        return (vec![], W::default());
    }
    // best[n] = weight of the heaviest path starting at n, and its next hop.
    let mut best: BTreeMap<NodeId, (W, Option<NodeId>)> = BTreeMap::new();
    for &n in dfg.topo_order().iter().rev() {
        let mut next: Option<(W, NodeId)> = None;
        for s in dfg.successors(n) {
            let w = best[&s].0;
            next = match next {
                None => Some((w, s)),
                Some((bw, bs)) if w > bw || (w == bw && s < bs) => Some((w, s)),
                keep => keep,
            };
        }
        let own = weight(n);
        best.insert(
            n,
            match next {
                Some((w, s)) => (own + w, Some(s)),
                None => (own, None),
            },
        );
    }
    let mut start: Option<(W, NodeId)> = None;
    for n in dfg.node_ids().filter(|&n| dfg.in_edges(n).is_empty()) {
        let w = best[&n].0;
        if start.is_none_or(|(bw, _)| w > bw) {
            start = Some((w, n));
        }
    }
    let (total, mut cur) = start.expect("non-empty DAG has a root");
    let mut path = vec![cur];
    while let Some(s) = best[&cur].1 {
        path.push(s);
        cur = s;
    }
    (path, total)
}

/// Heaviest path under integer per-node latencies (missing nodes weigh 0).
pub fn critical_path(dfg: &MatrixDfg, latency: &BTreeMap<NodeId, u64>) -> (Vec<NodeId>, u64) {
    critical_path_by(dfg, |n| latency.get(&n).copied().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{DfgBuilder, OpKind};
    use crate::tensor::Shape::*;

    /// Source fans out to two branches that join, then feeds a sink.
    fn diamond() -> MatrixDfg {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(4));
        let l = b.op(OpKind::TanH, &[x], None).unwrap();
        let r = b.op(OpKind::ReLU, &[x], None).unwrap();
        let j = b.op(OpKind::MatAdd, &[l, r], None).unwrap();
        b.sink("j", j).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn diamond_paths() {
        let g = diamond();
        let p = all_source_sink_paths(&g, 100).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0], vec![NodeId(0), NodeId(1), NodeId(3), NodeId(4)]);
        assert!(matches!(
            all_source_sink_paths(&g, 1),
            Err(PathError::PathExplosion { count: 2, cap: 1 })
        ));
    }

    #[test]
    fn stacked_diamonds_have_four_paths() {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(4));
        let l = b.op(OpKind::TanH, &[x], None).unwrap();
        let r = b.op(OpKind::ReLU, &[x], None).unwrap();
        let j = b.op(OpKind::MatAdd, &[l, r], None).unwrap();
        let l2 = b.op(OpKind::Exp, &[j], None).unwrap();
        let r2 = b.op(OpKind::Sigmoid, &[j], None).unwrap();
        let j2 = b.op(OpKind::Hadamard, &[l2, r2], None).unwrap();
        b.sink("y", j2).unwrap();
        let g = b.build().unwrap();
        assert_eq!(count_paths(&g), 4);
        assert_eq!(all_source_sink_paths(&g, 100).unwrap().len(), 4);
    }

    #[test]
    fn critical_path_takes_heavier_branch_and_breaks_ties_low() {
        let g = diamond();
        let lat: BTreeMap<NodeId, u64> = [(0, 0), (1, 7), (2, 10), (3, 5), (4, 0)]
            .into_iter()
            .map(|(n, l)| (NodeId(n), l))
            .collect();
        let (p, t) = critical_path(&g, &lat);
        assert_eq!(t, 15);
        assert_eq!(p, vec![NodeId(0), NodeId(2), NodeId(3), NodeId(4)]);
        let tie: BTreeMap<NodeId, u64> = g.node_ids().map(|n| (n, 1)).collect();
        assert_eq!(
            critical_path(&g, &tie).0,
            vec![NodeId(0), NodeId(1), NodeId(3), NodeId(4)]
        );
    }
}
