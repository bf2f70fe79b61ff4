//! Matrix data-flow graph: node kinds, the graph itself, PF constraints and
//! path queries.

mod constraints;
mod graph;
mod kind;
mod paths;

pub use constraints::{lt_clusters, pf_constraints_ok, PfAssignment, Violation};
pub use graph::{
    DfgBuilder, DfgDocument, DfgEdge, DfgError, DfgNode, EdgeDoc, EdgeId, MatrixDfg, NodeDoc,
    NodeId, ProfileDoc, DFG_SCHEMA,
};
pub use kind::{classify, max_pf, KindShapeError, NodeClass, NodeDims, OpKind};
pub use paths::{
    all_source_sink_paths, count_paths, critical_path, critical_path_by, PathError,
    DEFAULT_PATHS_CAP,
};
