//! PF assignment under a LUT/DSP budget.
//!
//! Decision variables are grouped: every linear-time cluster shares one PF,
//! every compute non-linear-time node has its own, and sources and sinks stay
//! at PF 1. Edge PFs follow from the node PFs (see
//! [`PfAssignment::from_epf`]).

mod blackbox;
mod greedy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{predict_latency, predict_lut, Coeffs, CostModelParams, Profile1};
use crate::dfg::{critical_path_by, lt_clusters, MatrixDfg, NodeId, PfAssignment};
use crate::templates::TemplateLibrary;

pub use blackbox::{blackbox_optimize, BlackboxOptions, RoundingMode};
pub use greedy::greedy_optimize;

/// Board resources available to the design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub lut: u64,
    pub dsp: u64,
}

impl ResourceBudget {
    /// Arty-class board: 20800 LUTs and 90 DSP slices.
    pub const ARTY: ResourceBudget = ResourceBudget {
        lut: 20800,
        dsp: 90,
    };

    pub fn admits(&self, u: Usage) -> bool {
        u.lut <= self.lut && u.dsp <= self.dsp
    }
}

impl Default for ResourceBudget {
    fn default() -> Self {
        Self::ARTY
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub lut: u64,
    pub dsp: u64,
}

impl fmt::Display for ResourceBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} LUT / {} DSP", self.lut, self.dsp)
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} LUT / {} DSP", self.lut, self.dsp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BenefitMetric {
    LatencyReduction,
    #[default]
    LatencyPerLut,
}

impl fmt::Display for BenefitMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenefitMetric::LatencyReduction => "latency",
            BenefitMetric::LatencyPerLut => "latency-per-lut",
        })
    }
}

impl FromStr for BenefitMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "latency" | "latency-reduction" => Ok(BenefitMetric::LatencyReduction),
            "latency-per-lut" | "per-lut" => Ok(BenefitMetric::LatencyPerLut),
            _ => Err(format!("unknown metric `{s}` (latency | latency-per-lut)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("PF=1 design needs {} LUT / {} DSP, budget is {} / {}", usage.lut, usage.dsp, budget.lut, budget.dsp)]
    InfeasibleBaseline {
        usage: Usage,
        budget: ResourceBudget,
    },
    #[error("solver did not converge in restart {restart} after {line_searches} line searches")]
    SolverDiverged {
        restart: usize,
        line_searches: usize,
    },
}

/// Per-node LUT, shuffle LUT and DSP under an assignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeCost {
    pub lut: u64,
    pub shuffle_lut: u64,
    pub dsp: u64,
}

#[derive(Clone, Debug)]
struct NodeModel {
    compute: bool,
    lt: bool,
    latency1: u64,
    lut1: u64,
    coeffs: Coeffs,
    alpha_dsp: u32,
}

/// One decision variable: the nodes whose PF moves together.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Group {
    pub members: Vec<NodeId>,
    pub max_pf: u32,
    pub linear_time: bool,
}

/// Everything the optimizers need to price an assignment.
#[derive(Clone, Debug)]
pub struct CostContext<'a> {
    pub dfg: &'a MatrixDfg,
    pub params: &'a CostModelParams,
    pub profile: &'a Profile1,
    pub c_shuffle: u64,
    models: BTreeMap<NodeId, NodeModel>,
    groups: Vec<Group>,
    group_of: BTreeMap<NodeId, usize>,
}

impl<'a> CostContext<'a> {
    pub fn new(
        dfg: &'a MatrixDfg,
        params: &'a CostModelParams,
        profile: &'a Profile1,
        lib: &TemplateLibrary,
    ) -> Self {
        let models = dfg
            .nodes()
            .map(|n| {
                let p = profile.get(&n.id).copied().unwrap_or_default();
                (
                    n.id,
                    NodeModel {
                        compute: !n.kind.is_boundary(),
                        lt: n.is_linear_time(),
                        latency1: p.latency1,
                        lut1: p.lut1,
                        coeffs: params.coeffs(n.kind, &n.dims),
                        alpha_dsp: params.alpha_dsp(n.kind),
                    },
                )
            })
            .collect();
        let mut groups = Vec::new();
        for cluster in lt_clusters(dfg) {
            let max_pf = cluster
                .iter()
                .map(|&m| dfg.node(m).max_pf())
                .min()
                .unwrap_or(1);
            groups.push(Group {
                members: cluster,
                max_pf,
                linear_time: true,
            });
        }
        for n in dfg.compute_nodes().filter(|n| !n.is_linear_time()) {
            groups.push(Group {
                members: vec![n.id],
                max_pf: n.max_pf(),
                linear_time: false,
            });
        }
        groups.sort_by_key(|g| g.members[0]);
        let group_of = groups
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.members.iter().map(move |&m| (m, i)))
            .collect();
        CostContext {
            dfg,
            params,
            profile,
            c_shuffle: lib.c_shuffle(),
            models,
            groups,
            group_of,
        }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_of(&self, n: NodeId) -> Option<usize> {
        self.group_of.get(&n).copied()
    }

    /// Full assignment from one PF per group.
    pub fn assignment(&self, group_pf: &[u32]) -> PfAssignment {
        let epf = self
            .dfg
            .node_ids()
            .map(|n| (n, self.group_of(n).map(|g| group_pf[g]).unwrap_or(1)))
            .collect();
        PfAssignment::from_epf(self.dfg, epf)
    }

    pub fn group_pfs(&self, a: &PfAssignment) -> Vec<u32> {
        self.groups.iter().map(|g| a.pf(g.members[0])).collect()
    }

    pub fn node_latency(&self, n: NodeId, pf: u32) -> u64 {
        let m = &self.models[&n];
        if m.latency1 == 0 {
            0
        } else {
            predict_latency(&m.coeffs, m.latency1, pf)
        }
    }

    /// Continuous latency model used by the relaxed solver.
    fn node_latency_real(&self, n: NodeId, pf: f64) -> f64 {
        let m = &self.models[&n];
        m.coeffs.latency_ratio(pf) * m.latency1 as f64
    }

    pub fn node_cost(&self, n: NodeId, a: &PfAssignment) -> NodeCost {
        let m = &self.models[&n];
        if !m.compute {
            return NodeCost::default();
        }
        let pf = a.pf(n);
        let lut = if m.lut1 == 0 {
            0
        } else {
            predict_lut(&m.coeffs, m.lut1, pf)
        };
        let shuffle_lut = if m.lt {
            0
        } else {
            let edges: u64 = self
                .dfg
                .in_edges(n)
                .iter()
                .chain(self.dfg.out_edges(n))
                .map(|&e| a.edge(e) as u64)
                .sum();
            self.c_shuffle * edges
        };
        NodeCost {
            lut,
            shuffle_lut,
            dsp: m.alpha_dsp as u64 * pf as u64,
        }
    }

    pub fn node_costs(&self, a: &PfAssignment) -> BTreeMap<NodeId, NodeCost> {
        self.dfg
            .node_ids()
            .map(|n| (n, self.node_cost(n, a)))
            .collect()
    }

    /// Predicted LUT (templates plus shuffle logic) and DSP of a design.
    pub fn usage(&self, a: &PfAssignment) -> Usage {
        self.dfg.node_ids().fold(Usage::default(), |u, n| {
            let c = self.node_cost(n, a);
            Usage {
                lut: u.lut + c.lut + c.shuffle_lut,
                dsp: u.dsp + c.dsp,
            }
        })
    }

    pub fn latencies(&self, a: &PfAssignment) -> BTreeMap<NodeId, u64> {
        self.dfg
            .node_ids()
            .map(|n| (n, self.node_latency(n, a.pf(n))))
            .collect()
    }

    /// Critical path under predicted latencies.
    pub fn critical_path(&self, a: &PfAssignment) -> (Vec<NodeId>, u64) {
        let lat = self.latencies(a);
        critical_path_by(self.dfg, |n| lat[&n])
    }

    pub fn est_total_latency(&self, a: &PfAssignment) -> u64 {
        self.critical_path(a).1
    }
}

/// Predicted resource usage of an assignment.
pub fn usage(ctx: &CostContext, a: &PfAssignment) -> Usage {
    ctx.usage(a)
}

/// Length of the critical path under predicted per-node latencies.
pub fn est_total_latency(ctx: &CostContext, a: &PfAssignment) -> u64 {
    ctx.est_total_latency(a)
}

/// One accepted greedy move, or one blackbox restart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    /// Node whose move was applied (greedy) or the restart index (blackbox).
    pub node: Option<NodeId>,
    pub restart: Option<usize>,
    pub pf: u32,
    pub est_latency: u64,
    pub usage: Usage,
    pub critical_path: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizerResult {
    pub assignment: PfAssignment,
    pub est_latency: u64,
    pub usage: Usage,
    pub iterations: usize,
    #[serde(skip)]
    pub wall_time: Duration,
    pub log: Vec<LogEntry>,
}

impl OptimizerResult {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &OptimizerResult) -> bool {
        self.assignment == other.assignment
            && self.est_latency == other.est_latency
            && self.usage == other.usage
            && self.iterations == other.iterations
            && self.log == other.log
    }
}

/// Best assignment by brute force over every feasible group PF vector,
/// scored by `eval` (smaller is better; ties to the lexicographically
/// smallest PF vector). Intended for tiny designs only.
pub fn exhaustive_search(
    ctx: &CostContext,
    budget: ResourceBudget,
    mut eval: impl FnMut(&PfAssignment) -> u64,
) -> Option<(PfAssignment, u64)> {
    let bounds: Vec<u32> = ctx.groups().iter().map(|g| g.max_pf).collect();
    let mut cur = vec![1u32; bounds.len()];
    let mut best: Option<(PfAssignment, u64)> = None;
    loop {
        let a = ctx.assignment(&cur);
        if budget.admits(ctx.usage(&a)) {
            let v = eval(&a);
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((a, v));
            }
        }
        let mut i = 0;
        loop {
            if i == cur.len() {
                return best;
            }
            if cur[i] < bounds[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = 1;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::NodeProfile;
    use crate::dfg::{DfgBuilder, OpKind};
    use crate::tensor::Shape::*;

    #[test]
    fn usage_formula_example() {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(8));
        let r = b.op(OpKind::ReLU, &[x], None).unwrap();
        let m = b.op(OpKind::ArgMax, &[r], None).unwrap();
        b.sink("m", m).unwrap();
        let g = b.build().unwrap();
        let lib = TemplateLibrary::builtin();
        let params = CostModelParams::identity(&lib);
        let prof: Profile1 = [(0, 0, 0), (1, 12, 100), (2, 20, 200), (3, 0, 0)]
            .into_iter()
            .map(|(n, l, u)| {
                (
                    NodeId(n),
                    NodeProfile {
                        latency1: l,
                        lut1: u,
                    },
                )
            })
            .collect();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        let a = PfAssignment::uniform(&g);
        assert_eq!(ctx.usage(&a), Usage { lut: 316, dsp: 0 });
        assert_eq!(ctx.est_total_latency(&a), 32);
    }

    #[test]
    fn empty_usage_is_zero() {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(8));
        b.sink("x", x).unwrap();
        let g = b.build().unwrap();
        let lib = TemplateLibrary::builtin();
        let params = CostModelParams::identity(&lib);
        let prof = crate::sim::profile_pf1(&g, &lib, 0).unwrap();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        assert_eq!(ctx.usage(&PfAssignment::uniform(&g)), Usage::default());
    }
}
