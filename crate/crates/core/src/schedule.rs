//! Dataflow schedule: units in start/done order, with linear-time clusters
//! optionally fused into pipelined super-nodes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cost::{CostModelParams, Profile1};
use crate::dfg::{
    lt_clusters, pf_constraints_ok, MatrixDfg, NodeId, OpKind, PfAssignment, Violation,
};
use crate::templates::TemplateLibrary;

pub const SCHEDULE_SCHEMA: &str = "matforge.schedule/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("PF assignment violates {} constraint(s), first: {}", .0.len(), .0[0])]
    ConstraintViolation(Vec<Violation>),
}

/// Connected linear-time nodes executed as one pipeline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SuperNode {
    /// Members in topological order.
    pub members: Vec<NodeId>,
    pub pf: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ScheduleUnit {
    Single { node: NodeId },
    Fused(SuperNode),
}

impl ScheduleUnit {
    pub fn members(&self) -> &[NodeId] {
        match self {
            ScheduleUnit::Single { node } => std::slice::from_ref(node),
            ScheduleUnit::Fused(s) => &s.members,
        }
    }

    pub fn is_fused(&self) -> bool {
        matches!(self, ScheduleUnit::Fused(s) if s.members.len() > 1)
    }

    fn min_member(&self) -> NodeId {
        *self.members().iter().min().expect("units are nonempty")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    units: Vec<ScheduleUnit>,
    deps: Vec<BTreeSet<usize>>,
    unit_of: BTreeMap<NodeId, usize>,
    order: Vec<usize>,
    pipelining: bool,
}

impl Schedule {
    fn from_units(
        dfg: &MatrixDfg,
        mut units: Vec<ScheduleUnit>,
        pipelining: bool,
    ) -> Option<Schedule> {
        units.sort_by_key(|u| u.min_member());
        let mut unit_of = BTreeMap::new();
        for (i, u) in units.iter().enumerate() {
            for &m in u.members() {
                unit_of.insert(m, i);
            }
        }
        let mut deps = vec![BTreeSet::new(); units.len()];
        for e in dfg.edges() {
            let (p, c) = (unit_of[&e.producer], unit_of[&e.consumer]);
            if p != c {
                deps[c].insert(p);
            }
        }
        let order = topo(&deps)?;
        Some(Schedule {
            units,
            deps,
            unit_of,
            order,
            pipelining,
        })
    }

    pub fn units(&self) -> &[ScheduleUnit] {
        &self.units
    }

    pub fn deps(&self, unit: usize) -> &BTreeSet<usize> {
        &self.deps[unit]
    }

    pub fn unit_of(&self, n: NodeId) -> usize {
        self.unit_of[&n]
    }

    pub fn find_unit(&self, n: NodeId) -> Option<usize> {
        self.unit_of.get(&n).copied()
    }

    /// Units in a deterministic dependency-respecting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn pipelining(&self) -> bool {
        self.pipelining
    }

    pub fn fused_units(&self) -> impl Iterator<Item = (usize, &SuperNode)> {
        self.units.iter().enumerate().filter_map(|(i, u)| match u {
            ScheduleUnit::Fused(s) if s.members.len() > 1 => Some((i, s)),
            _ => None,
        })
    }
}

fn topo(deps: &[BTreeSet<usize>]) -> Option<Vec<usize>> {
    let n = deps.len();
    let mut indeg: Vec<usize> = deps.iter().map(|d| d.len()).collect();
    let mut succ = vec![Vec::new(); n];
    for (c, ds) in deps.iter().enumerate() {
        for &p in ds {
            succ[p].push(c);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop_first() {
        order.push(u);
        for &s in &succ[u] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Largest output element count among a unit's members.
pub fn unit_elements(dfg: &MatrixDfg, unit: &ScheduleUnit) -> u64 {
    unit.members()
        .iter()
        .map(|&m| dfg.node(m).out_dim().elements() as u64)
        .max()
        .unwrap_or(1)
}

/// Ground-truth cycles of a unit under the template timing table.
pub fn unit_duration(
    dfg: &MatrixDfg,
    a: &PfAssignment,
    unit: &ScheduleUnit,
    lib: &TemplateLibrary,
) -> u64 {
    match unit {
        ScheduleUnit::Single { node } => {
            let n = dfg.node(*node);
            lib.latency(n.kind, &n.dims, a.pf(*node))
        }
        ScheduleUnit::Fused(s) if s.members.len() == 1 => {
            let n = dfg.node(s.members[0]);
            lib.latency(n.kind, &n.dims, s.pf)
        }
        ScheduleUnit::Fused(s) => {
            lib.fused_latency(unit_elements(dfg, unit), s.members.len(), s.pf)
        }
    }
}

/// Estimated cycles of a unit under the regression models.
pub fn unit_latency(
    dfg: &MatrixDfg,
    unit: &ScheduleUnit,
    params: &CostModelParams,
    profile: &Profile1,
    a: &PfAssignment,
    lib: &TemplateLibrary,
) -> u64 {
    let single = |id: NodeId, pf: u32| {
        let n = dfg.node(id);
        params.predict_latency(n.kind, &n.dims, profile[&id].latency1, pf)
    };
    match unit {
        ScheduleUnit::Single { node } => single(*node, a.pf(*node)),
        ScheduleUnit::Fused(s) if s.members.len() == 1 => single(s.members[0], s.pf),
        ScheduleUnit::Fused(s) => {
            lib.fused_latency(unit_elements(dfg, unit), s.members.len(), s.pf)
        }
    }
}

/// Start/end cycle of every unit when each starts as soon as all its
/// predecessors are done.
pub fn unit_intervals(sched: &Schedule, durations: &[u64]) -> Vec<(u64, u64)> {
    let mut iv = vec![(0u64, 0u64); sched.units.len()];
    for &u in &sched.order {
        let start = sched.deps[u].iter().map(|&p| iv[p].1).max().unwrap_or(0);
        iv[u] = (start, start + durations[u]);
    }
    iv
}

pub fn table_makespan(
    dfg: &MatrixDfg,
    a: &PfAssignment,
    sched: &Schedule,
    lib: &TemplateLibrary,
) -> u64 {
    let d: Vec<u64> = sched
        .units
        .iter()
        .map(|u| unit_duration(dfg, a, u, lib))
        .collect();
    unit_intervals(sched, &d)
        .iter()
        .map(|iv| iv.1)
        .max()
        .unwrap_or(0)
}

/// Builds the schedule. With pipelining on, each linear-time cluster of two
/// or more nodes is fused when doing so keeps the unit graph acyclic and
/// does not lengthen the table-timed makespan; clusters are tried in order
/// of smallest member.
pub fn build_schedule(
    dfg: &MatrixDfg,
    a: &PfAssignment,
    pipelining: bool,
    lib: &TemplateLibrary,
) -> Result<Schedule, ScheduleError> {
    let v = pf_constraints_ok(dfg, a);
    if !v.is_empty() {
        return Err(ScheduleError::ConstraintViolation(v));
    }
    let singles: Vec<ScheduleUnit> = dfg
        .node_ids()
        .map(|node| ScheduleUnit::Single { node })
        .collect();
    let mut best = Schedule::from_units(dfg, singles, pipelining).expect("DFG is acyclic");
    if !pipelining {
        return Ok(best);
    }
    let mut best_span = table_makespan(dfg, a, &best, lib);
    let rank: BTreeMap<NodeId, usize> = dfg
        .topo_order()
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, i))
        .collect();
    // Sgn is combinational and has no stage to pipeline.
    let fusable =
        |c: &Vec<NodeId>| c.len() >= 2 && c.iter().all(|&m| dfg.node(m).kind != OpKind::Sgn);
    for cluster in lt_clusters(dfg).into_iter().filter(fusable) {
        let mut members = cluster.clone();
        members.sort_by_key(|m| rank[m]);
        let pf = a.pf(members[0]);
        let members_set: BTreeSet<NodeId> = members.iter().copied().collect();
        let mut units: Vec<ScheduleUnit> = best
            .units
            .iter()
            .filter(|u| !u.members().iter().any(|m| members_set.contains(m)))
            .cloned()
            .collect();
        units.push(ScheduleUnit::Fused(SuperNode { members, pf }));
        if let Some(cand) = Schedule::from_units(dfg, units, pipelining) {
            let span = table_makespan(dfg, a, &cand, lib);
            if span <= best_span {
                best = cand;
                best_span = span;
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize)]
pub struct UnitDoc {
    pub id: usize,
    #[serde(flatten)]
    pub unit: ScheduleUnit,
    pub deps: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub est_latency: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScheduleDoc {
    pub schema: &'static str,
    pub pipelining: bool,
    pub units: Vec<UnitDoc>,
}

impl Schedule {
    pub fn to_doc(&self, est: Option<&[u64]>) -> ScheduleDoc {
        ScheduleDoc {
            schema: SCHEDULE_SCHEMA,
            pipelining: self.pipelining,
            units: self
                .units
                .iter()
                .enumerate()
                .map(|(i, u)| UnitDoc {
                    id: i,
                    unit: u.clone(),
                    deps: self.deps[i].iter().copied().collect(),
                    est_latency: est.map(|e| e[i]),
                })
                .collect(),
        }
    }
}
