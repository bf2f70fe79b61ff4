use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kind::{classify, max_pf, KindShapeError, NodeClass, NodeDims, OpKind};
use crate::tensor::{Shape, TensorValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Index into [`MatrixDfg::edges`].
pub type EdgeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct DfgNode {
    pub id: NodeId,
    pub kind: OpKind,
    pub dims: NodeDims,
    /// Variable name for sources and sinks.
    pub name: Option<String>,
    /// Literal contents of a constant source.
    pub constant: Option<Vec<i16>>,
}

impl DfgNode {
    pub fn class(&self) -> NodeClass {
        classify(self.kind, &self.dims.in_dims)
    }

    pub fn is_linear_time(&self) -> bool {
        self.class() == NodeClass::LinearTime
    }

    pub fn max_pf(&self) -> u32 {
        max_pf(self.kind, &self.dims)
    }

    pub fn out_dim(&self) -> Shape {
        self.dims.out_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DfgEdge {
    pub producer: NodeId,
    pub consumer: NodeId,
    pub slot: usize,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DfgError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} ({kind}): {source}")]
    Shape {
        node: NodeId,
        kind: OpKind,
        source: KindShapeError,
    },
    #[error("node {node} expects {expected} inputs, has {found}")]
    SlotArity {
        node: NodeId,
        expected: usize,
        found: usize,
    },
    #[error("node {node} input slot {slot} is fed twice or out of range")]
    BadSlot { node: NodeId, slot: usize },
    #[error("edge {producer}->{consumer} carries {edge} but producer yields {produced}")]
    EdgeShape {
        producer: NodeId,
        consumer: NodeId,
        edge: Shape,
        produced: Shape,
    },
    #[error("graph contains a cycle through {0}")]
    Cycle(NodeId),
    #[error("node {0} does not reach any sink")]
    Dangling(NodeId),
    #[error("sink {0} must not have consumers")]
    SinkOutput(NodeId),
    #[error("constant source {node} has {found} values for {shape}")]
    ConstantShape {
        node: NodeId,
        shape: Shape,
        found: usize,
    },
    #[error("malformed DFG document: {0}")]
    Document(String),
}

/// Annotated DAG of matrix operations.
///
/// Immutable once built: construction validates acyclicity, slot arity,
/// shapes and sink reachability, and caches adjacency plus a topological
/// order (ties broken by node id).
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixDfg {
    nodes: BTreeMap<NodeId, DfgNode>,
    edges: Vec<DfgEdge>,
    in_edges: BTreeMap<NodeId, Vec<EdgeId>>,
    out_edges: BTreeMap<NodeId, Vec<EdgeId>>,
    topo: Vec<NodeId>,
}

impl MatrixDfg {
    pub fn new(nodes: Vec<DfgNode>, mut edges: Vec<DfgEdge>) -> Result<Self, DfgError> {
        let mut map = BTreeMap::new();
        for n in nodes {
            let id = n.id;
            if map.insert(id, n).is_some() {
                return Err(DfgError::DuplicateNode(id));
            }
        }
        edges.sort_by_key(|e| (e.consumer, e.slot, e.producer));
        let mut in_edges: BTreeMap<NodeId, Vec<EdgeId>> =
            map.keys().map(|&k| (k, vec![])).collect();
        let mut out_edges = in_edges.clone();
        for (i, e) in edges.iter().enumerate() {
            for end in [e.producer, e.consumer] {
                if !map.contains_key(&end) {
                    return Err(DfgError::UnknownNode(end));
                }
            }
            in_edges.get_mut(&e.consumer).unwrap().push(i);
            out_edges.get_mut(&e.producer).unwrap().push(i);
        }
        for (id, node) in &map {
            let ins = &in_edges[id];
            if ins.len() != node.kind.arity() {
                return Err(DfgError::SlotArity {
                    node: *id,
                    expected: node.kind.arity(),
                    found: ins.len(),
                });
            }
            for (expect, &ei) in ins.iter().enumerate() {
                let e = &edges[ei];
                if e.slot != expect {
                    return Err(DfgError::BadSlot {
                        node: *id,
                        slot: e.slot,
                    });
                }
                let produced = map[&e.producer].dims.out_dim;
                if e.shape != produced || node.dims.in_dims.get(e.slot) != Some(&produced) {
                    return Err(DfgError::EdgeShape {
                        producer: e.producer,
                        consumer: e.consumer,
                        edge: e.shape,
                        produced,
                    });
                }
            }
            if node.kind != OpKind::Source {
                let out = node
                    .kind
                    .infer_output(&node.dims.in_dims, node.dims.nnz)
                    .map_err(|source| DfgError::Shape {
                        node: *id,
                        kind: node.kind,
                        source,
                    })?;
                if out != node.dims.out_dim {
                    return Err(DfgError::Shape {
                        node: *id,
                        kind: node.kind,
                        source: KindShapeError::Mismatch {
                            kind: node.kind,
                            inputs: node.dims.in_dims.clone(),
                        },
                    });
                }
            }
            if let Some(c) = &node.constant {
                if node.kind != OpKind::Source || c.len() != node.dims.out_dim.elements() {
                    return Err(DfgError::ConstantShape {
                        node: *id,
                        shape: node.dims.out_dim,
                        found: c.len(),
                    });
                }
            }
            if node.kind == OpKind::Sink && !out_edges[id].is_empty() {
                return Err(DfgError::SinkOutput(*id));
            }
            if node.kind != OpKind::Sink && out_edges[id].is_empty() {
                return Err(DfgError::Dangling(*id));
            }
        }
        let topo = topo_order(&map, &edges, &in_edges, &out_edges)?;
        Ok(MatrixDfg {
            nodes: map,
            edges,
            in_edges,
            out_edges,
            topo,
        })
    }

    pub fn node(&self, id: NodeId) -> &DfgNode {
        &self.nodes[&id]
    }

    pub fn get(&self, id: NodeId) -> Option<&DfgNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DfgNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[DfgEdge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> &DfgEdge {
        &self.edges[e]
    }

    /// Incoming edges ordered by slot.
    pub fn in_edges(&self, id: NodeId) -> &[EdgeId] {
        &self.in_edges[&id]
    }

    pub fn out_edges(&self, id: NodeId) -> &[EdgeId] {
        &self.out_edges[&id]
    }

    pub fn predecessors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.in_edges[&id].iter().map(|&e| self.edges[e].producer)
    }

    pub fn successors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.out_edges[&id].iter().map(|&e| self.edges[e].consumer)
    }

    /// Deterministic topological order.
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn sources(&self) -> impl Iterator<Item = &DfgNode> {
        self.nodes.values().filter(|n| n.kind == OpKind::Source)
    }

    pub fn sinks(&self) -> impl Iterator<Item = &DfgNode> {
        self.nodes.values().filter(|n| n.kind == OpKind::Sink)
    }

    /// Nodes that instantiate a compute template.
    pub fn compute_nodes(&self) -> impl Iterator<Item = &DfgNode> {
        self.nodes.values().filter(|n| !n.kind.is_boundary())
    }

    /// Sources that must be supplied at run time (not literal constants).
    pub fn inputs(&self) -> impl Iterator<Item = &DfgNode> {
        self.sources().filter(|n| n.constant.is_none())
    }

    /// Whether a source feeds the sparse slot of some SpMV.
    pub fn is_sparse_source(&self, id: NodeId) -> bool {
        self.out_edges[&id].iter().any(|&e| {
            self.edges[e].slot == 0 && self.nodes[&self.edges[e].consumer].kind == OpKind::SpMV
        })
    }

    /// Smallest nnz over the SpMV nodes reading this source.
    pub fn sparse_nnz(&self, id: NodeId) -> Option<u64> {
        self.out_edges[&id]
            .iter()
            .filter(|&&e| self.edges[e].slot == 0)
            .filter_map(|&e| self.nodes[&self.edges[e].consumer].dims.nnz)
            .min()
    }

    pub fn to_document(&self) -> DfgDocument {
        DfgDocument {
            schema: DFG_SCHEMA.to_string(),
            nodes: self
                .nodes
                .values()
                .map(|n| NodeDoc {
                    id: n.id,
                    kind: n.kind,
                    in_dims: n.dims.in_dims.clone(),
                    out_dim: n.dims.out_dim,
                    nnz: n.dims.nnz,
                    name: n.name.clone(),
                    constant: n.constant.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    producer: e.producer,
                    consumer: e.consumer,
                    slot: e.slot,
                    pf: None,
                })
                .collect(),
            profile: None,
        }
    }

    pub fn from_document(doc: &DfgDocument) -> Result<Self, DfgError> {
        if doc.schema != DFG_SCHEMA {
            return Err(DfgError::Document(format!(
                "unsupported schema `{}` (expected `{DFG_SCHEMA}`)",
                doc.schema
            )));
        }
        let nodes: Vec<DfgNode> = doc
            .nodes
            .iter()
            .map(|n| DfgNode {
                id: n.id,
                kind: n.kind,
                dims: NodeDims {
                    in_dims: n.in_dims.clone(),
                    out_dim: n.out_dim,
                    nnz: n.nnz,
                },
                name: n.name.clone(),
                constant: n.constant.clone(),
            })
            .collect();
        let by_id: BTreeMap<NodeId, Shape> = nodes.iter().map(|n| (n.id, n.dims.out_dim)).collect();
        let edges = doc
            .edges
            .iter()
            .map(|e| {
                let shape = *by_id
                    .get(&e.producer)
                    .ok_or(DfgError::UnknownNode(e.producer))?;
                Ok(DfgEdge {
                    producer: e.producer,
                    consumer: e.consumer,
                    slot: e.slot,
                    shape,
                })
            })
            .collect::<Result<Vec<_>, DfgError>>()?;
        MatrixDfg::new(nodes, edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("dfg serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DfgError> {
        let doc: DfgDocument =
            serde_json::from_str(text).map_err(|e| DfgError::Document(e.to_string()))?;
        Self::from_document(&doc)
    }

    /// Value of a constant source as a tensor.
    pub fn constant_value(&self, id: NodeId) -> Option<TensorValue> {
        let n = self.node(id);
        n.constant.as_ref().map(|c| TensorValue {
            shape: n.dims.out_dim,
            data: c.clone(),
        })
    }
}

fn topo_order(
    nodes: &BTreeMap<NodeId, DfgNode>,
    edges: &[DfgEdge],
    in_edges: &BTreeMap<NodeId, Vec<EdgeId>>,
    out_edges: &BTreeMap<NodeId, Vec<EdgeId>>,
) -> Result<Vec<NodeId>, DfgError> {
    let mut indeg: BTreeMap<NodeId, usize> = in_edges.iter().map(|(k, v)| (*k, v.len())).collect();
    let mut ready: BTreeSet<NodeId> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(&n) = ready.iter().next() {
        ready.remove(&n);
        order.push(n);
        for &e in &out_edges[&n] {
            let c = edges[e].consumer;
            let d = indeg.get_mut(&c).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = indeg.iter().find(|(_, &d)| d > 0).map(|(k, _)| *k).unwrap();
        return Err(DfgError::Cycle(stuck));
    }
    Ok(order)
}

pub const DFG_SCHEMA: &str = "matforge.dfg/1";

/// JSON interchange form of a DFG.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfgDocument {
    pub schema: String,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<BTreeMap<NodeId, ProfileDoc>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: NodeId,
    pub kind: OpKind,
    pub in_dims: Vec<Shape>,
    pub out_dim: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnz: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<i16>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub producer: NodeId,
    pub consumer: NodeId,
    pub slot: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pf: Option<u32>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDoc {
    pub latency1: u64,
    pub lut1: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epf: Option<u32>,
}

/// Incremental DFG construction with shape inference.
#[derive(Default, Debug)]
pub struct DfgBuilder {
    nodes: Vec<DfgNode>,
    edges: Vec<DfgEdge>,
}

impl DfgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.len() as u32)
    }

    fn shape_of(&self, id: NodeId) -> Result<Shape, DfgError> {
        self.nodes
            .get(id.0 as usize)
            .map(|n| n.dims.out_dim)
            .ok_or(DfgError::UnknownNode(id))
    }

    /// Output shape of a node added so far.
    pub fn shape(&self, id: NodeId) -> Option<Shape> {
        self.shape_of(id).ok()
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.nodes
            .get(id.0 as usize)
            .and_then(|n| n.name.as_deref())
    }

    pub fn source(&mut self, name: impl Into<String>, shape: Shape) -> NodeId {
        let id = self.next_id();
        self.nodes.push(DfgNode {
            id,
            kind: OpKind::Source,
            dims: NodeDims {
                in_dims: vec![],
                out_dim: shape,
                nnz: None,
            },
            name: Some(name.into()),
            constant: None,
        });
        id
    }

    pub fn constant(&mut self, name: impl Into<String>, value: TensorValue) -> NodeId {
        let id = self.source(name, value.shape);
        self.nodes[id.0 as usize].constant = Some(value.data);
        id
    }

    pub fn op(
        &mut self,
        kind: OpKind,
        inputs: &[NodeId],
        nnz: Option<u64>,
    ) -> Result<NodeId, DfgError> {
        let id = self.next_id();
        let in_dims = inputs
            .iter()
            .map(|&i| self.shape_of(i))
            .collect::<Result<Vec<_>, _>>()?;
        let dims = NodeDims::infer(kind, in_dims, nnz).map_err(|source| DfgError::Shape {
            node: id,
            kind,
            source,
        })?;
        for (slot, &p) in inputs.iter().enumerate() {
            self.edges.push(DfgEdge {
                producer: p,
                consumer: id,
                slot,
                shape: dims.in_dims[slot],
            });
        }
        self.nodes.push(DfgNode {
            id,
            kind,
            dims,
            name: None,
            constant: None,
        });
        Ok(id)
    }

    pub fn sink(&mut self, name: impl Into<String>, input: NodeId) -> Result<NodeId, DfgError> {
        let id = self.op(OpKind::Sink, &[input], None)?;
        self.nodes[id.0 as usize].name = Some(name.into());
        Ok(id)
    }

    /// Number of consumers recorded so far for `id`.
    pub fn fanout(&self, id: NodeId) -> usize {
        self.edges.iter().filter(|e| e.producer == id).count()
    }

    pub fn build(self) -> Result<MatrixDfg, DfgError> {
        MatrixDfg::new(self.nodes, self.edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Shape::*;

    fn add_graph() -> MatrixDfg {
        let mut b = DfgBuilder::new();
        let a = b.source("A", Matrix(2, 2));
        let bb = b.source("B", Matrix(2, 2));
        let c = b.op(OpKind::MatAdd, &[a, bb], None).unwrap();
        b.sink("C", c).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn builder_and_topology() {
        let g = add_graph();
        assert_eq!(g.len(), 4);
        assert_eq!(g.sources().count(), 2);
        assert_eq!(g.sinks().count(), 1);
        assert_eq!(
            g.topo_order(),
            &[NodeId(0), NodeId(1), NodeId(2), NodeId(3)]
        );
        assert_eq!(
            g.predecessors(NodeId(2)).collect::<Vec<_>>(),
            vec![NodeId(0), NodeId(1)]
        );
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let g = add_graph();
        let back = MatrixDfg::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let mut v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        v["nodes"][0]["colour"] = serde_json::json!("red");
        assert!(MatrixDfg::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn dangling_node_rejected() {
        let mut b = DfgBuilder::new();
        let a = b.source("A", Vector(4));
        let t = b.op(OpKind::TanH, &[a], None).unwrap();
        let _ = b.op(OpKind::ReLU, &[t], None).unwrap();
        b.sink("T", t).unwrap();
        assert!(matches!(b.build(), Err(DfgError::Dangling(_))));
    }

    #[test]
    fn cycle_rejected() {
        let nodes = vec![
            DfgNode {
                id: NodeId(0),
                kind: OpKind::TanH,
                dims: NodeDims::infer(OpKind::TanH, vec![Vector(2)], None).unwrap(),
                name: None,
                constant: None,
            },
            DfgNode {
                id: NodeId(1),
                kind: OpKind::ReLU,
                dims: NodeDims::infer(OpKind::ReLU, vec![Vector(2)], None).unwrap(),
                name: None,
                constant: None,
            },
        ];
        let edges = vec![
            DfgEdge {
                producer: NodeId(0),
                consumer: NodeId(1),
                slot: 0,
                shape: Vector(2),
            },
            DfgEdge {
                producer: NodeId(1),
                consumer: NodeId(0),
                slot: 0,
                shape: Vector(2),
            },
        ];
        assert!(matches!(
            MatrixDfg::new(nodes, edges),
            Err(DfgError::Cycle(_))
        ));
    }
}
