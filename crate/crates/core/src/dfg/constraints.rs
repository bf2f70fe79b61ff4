use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::graph::{EdgeId, MatrixDfg, NodeId};

/// Execution PF per node plus one banking factor per edge.
///
/// A single edge PF is both the producer's output PF and the consumer's
/// input PF, so the inter-node equality holds by construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfAssignment {
    pub epf: BTreeMap<NodeId, u32>,
    pub edge_pf: Vec<u32>,
}

impl PfAssignment {
    pub fn uniform(dfg: &MatrixDfg) -> Self {
        PfAssignment {
            epf: dfg.node_ids().map(|n| (n, 1)).collect(),
            edge_pf: vec![1; dfg.edges().len()],
        }
    }

    /// Completes node PFs with the edge PFs they imply: an edge touching a
    /// linear-time node carries that node's PF, every other edge is 1.
    pub fn from_epf(dfg: &MatrixDfg, epf: BTreeMap<NodeId, u32>) -> Self {
        let edge_pf = dfg
            .edges()
            .iter()
            .map(|e| {
                [e.producer, e.consumer]
                    .into_iter()
                    .find(|&n| dfg.node(n).is_linear_time())
                    .map(|n| epf[&n])
                    .unwrap_or(1)
            })
            .collect();
        PfAssignment { epf, edge_pf }
    }

    pub fn pf(&self, n: NodeId) -> u32 {
        self.epf[&n]
    }

    pub fn edge(&self, e: EdgeId) -> u32 {
        self.edge_pf[e]
    }

    pub fn max_epf(&self) -> u32 {
        self.epf.values().copied().max().unwrap_or(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    MissingNode(NodeId),
    EdgeCount {
        expected: usize,
        found: usize,
    },
    ZeroPf(NodeId),
    ZeroEdgePf(EdgeId),
    /// A linear-time node whose edge PF differs from its execution PF.
    LinearTimeMismatch {
        node: NodeId,
        edge: EdgeId,
        edge_pf: u32,
        epf: u32,
    },
    AboveMaxPf {
        node: NodeId,
        epf: u32,
        max_pf: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingNode(n) => write!(f, "no PF for node {n}"),
            Violation::EdgeCount { expected, found } => {
                write!(f, "expected {expected} edge PFs, found {found}")
            }
            Violation::ZeroPf(n) => write!(f, "node {n} has PF 0"),
            Violation::ZeroEdgePf(e) => write!(f, "edge {e} has PF 0"),
            Violation::LinearTimeMismatch {
                node,
                edge,
                edge_pf,
                epf,
            } => write!(
                f,
                "linear-time node {node} runs at PF {epf} but edge {edge} is banked {edge_pf}"
            ),
            Violation::AboveMaxPf { node, epf, max_pf } => {
                write!(f, "node {node} PF {epf} exceeds its bound {max_pf}")
            }
        }
    }
}

/// Checks every PF rule and returns all violations found (empty means valid).
pub fn pf_constraints_ok(dfg: &MatrixDfg, a: &PfAssignment) -> Vec<Violation> {
    let mut out = Vec::new();
    if a.edge_pf.len() != dfg.edges().len() {
        out.push(Violation::EdgeCount {
            expected: dfg.edges().len(),
            found: a.edge_pf.len(),
        });
        return out;
    }
    for (e, &pf) in a.edge_pf.iter().enumerate() {
        if pf == 0 {
            out.push(Violation::ZeroEdgePf(e));
        }
    }
    for node in dfg.nodes() {
        let Some(&epf) = a.epf.get(&node.id) else {
            out.push(Violation::MissingNode(node.id));
            continue;
        };
        if epf == 0 {
            out.push(Violation::ZeroPf(node.id));
            continue;
        }
        let bound = node.max_pf();
        if epf > bound {
            out.push(Violation::AboveMaxPf {
                node: node.id,
                epf,
                max_pf: bound,
            });
        }
        if node.is_linear_time() {
            for &e in dfg.in_edges(node.id).iter().chain(dfg.out_edges(node.id)) {
                if a.edge_pf[e] != epf {
                    out.push(Violation::LinearTimeMismatch {
                        node: node.id,
                        edge: e,
                        edge_pf: a.edge_pf[e],
                        epf,
                    });
                }
            }
        }
    }
    out
}

/// Connected components of linear-time nodes joined by LT-LT edges, each
/// sorted, ordered by smallest member.
pub fn lt_clusters(dfg: &MatrixDfg) -> Vec<Vec<NodeId>> {
    let lt: Vec<NodeId> = dfg
        .nodes()
        .filter(|n| n.is_linear_time())
        .map(|n| n.id)
        .collect();
    let index: BTreeMap<NodeId, usize> = lt.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut parent: Vec<usize> = (0..lt.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in dfg.edges() {
        if let (Some(&a), Some(&b)) = (index.get(&e.producer), index.get(&e.consumer)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (i, &n) in lt.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(n);
    }
    let mut out: Vec<Vec<NodeId>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{DfgBuilder, OpKind};
    use crate::tensor::Shape::*;

    fn lt_chain_then_nlt() -> MatrixDfg {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(16));
        let y = b.source("y", Vector(16));
        let a = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
        let t = b.op(OpKind::TanH, &[a], None).unwrap();
        let s = b.op(OpKind::MatSub, &[t, y], None).unwrap();
        let m = b.source("M", Matrix(8, 16));
        let mv = b.op(OpKind::MatMul, &[m, s], None).unwrap();
        b.sink("out", mv).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn uniform_is_valid() {
        let g = lt_chain_then_nlt();
        assert!(pf_constraints_ok(&g, &PfAssignment::uniform(&g)).is_empty());
    }

    #[test]
    fn shared_cluster_pf_with_nlt_consumer() {
        let g = lt_chain_then_nlt();
        let mut epf: BTreeMap<NodeId, u32> = g.node_ids().map(|n| (n, 1)).collect();
        for n in [2, 3, 4] {
            epf.insert(NodeId(n), 4);
        }
        epf.insert(NodeId(6), 7);
        let a = PfAssignment::from_epf(&g, epf);
        assert!(pf_constraints_ok(&g, &a).is_empty());
        let mv_in = g.in_edges(NodeId(6))[1];
        assert_eq!(a.edge(mv_in), 4);
    }

    #[test]
    fn lt_mismatch_reported_once() {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Matrix(4, 4));
        let y = b.source("y", Matrix(4, 4));
        let s = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
        b.sink("s", s).unwrap();
        let g = b.build().unwrap();
        let mut a = PfAssignment::uniform(&g);
        a.epf.insert(s, 3);
        a.edge_pf = vec![2, 3, 3];
        let v = pf_constraints_ok(&g, &a);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(
            v[0],
            Violation::LinearTimeMismatch {
                edge_pf: 2,
                epf: 3,
                ..
            }
        ));
    }

    #[test]
    fn clusters_split_by_nlt() {
        let g = lt_chain_then_nlt();
        assert_eq!(lt_clusters(&g), vec![vec![NodeId(2), NodeId(3), NodeId(4)]]);

        let mut b = DfgBuilder::new();
        let x = b.source("x", Matrix(4, 4));
        let y = b.source("y", Matrix(4, 4));
        let a = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
        let m = b.op(OpKind::MatMul, &[a, y], None).unwrap();
        let t = b.op(OpKind::TanH, &[m], None).unwrap();
        b.sink("t", t).unwrap();
        let g = b.build().unwrap();
        assert_eq!(lt_clusters(&g), vec![vec![a], vec![t]]);
    }
}
