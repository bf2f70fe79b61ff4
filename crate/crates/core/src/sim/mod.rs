//! Functional and cycle-level simulator: the ground truth every estimate is
//! checked against.
//!
//! Execution is event-driven at unit granularity. A unit starts at the
//! latest end of its predecessors and runs for the table duration of its
//! template (or of its fused pipeline).

pub mod kernels;
mod reference;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{NodeProfile, Profile1, TrainingSample};
use crate::dfg::{DfgBuilder, MatrixDfg, NodeDims, NodeId, OpKind, PfAssignment};
use crate::schedule::{build_schedule, unit_duration, unit_intervals, Schedule, ScheduleUnit};
use crate::templates::TemplateLibrary;
use crate::tensor::{Shape, TensorValue};

pub use kernels::Csc;
pub use reference::reference_eval;

pub const SIM_SCHEMA: &str = "matforge.sim/1";

/// Input tensors keyed by source name.
pub type Inputs = BTreeMap<String, TensorValue>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no value supplied for input `{0}`")]
    MissingInput(String),
    #[error("input `{name}` has shape {found}, expected {expected}")]
    InputShape {
        name: String,
        expected: Shape,
        found: Shape,
    },
    #[error("sparse input `{name}` has {found} nonzeros but the design holds {nnz}")]
    SparseOverflow {
        name: String,
        nnz: u64,
        found: usize,
    },
    #[error("schedule does not cover node {0}")]
    ScheduleMismatch(NodeId),
    #[error("reading inputs: {0}")]
    Io(String),
    #[error("malformed inputs: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
}

impl Interval {
    pub fn duration(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimReport {
    pub schema: String,
    pub total_cycles: u64,
    pub nodes: BTreeMap<NodeId, Interval>,
    pub outputs: BTreeMap<String, TensorValue>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Binds every source to a value: literals from the DFG, the rest from
/// `inputs`. With `check_sparse`, sparse sources may not exceed their nnz.
pub(crate) fn bind_sources(
    dfg: &MatrixDfg,
    inputs: &Inputs,
    check_sparse: bool,
) -> Result<BTreeMap<NodeId, TensorValue>, SimError> {
    let mut vals = BTreeMap::new();
    for n in dfg.sources() {
        let v = match dfg.constant_value(n.id) {
            Some(v) => v,
            None => {
                let name = n.name.clone().unwrap_or_else(|| n.id.to_string());
                let v = inputs
                    .get(&name)
                    .ok_or_else(|| SimError::MissingInput(name.clone()))?;
                if v.shape != n.dims.out_dim {
                    return Err(SimError::InputShape {
                        name,
                        expected: n.dims.out_dim,
                        found: v.shape,
                    });
                }
                v.clone()
            }
        };
        if check_sparse {
            if let Some(nnz) = dfg.sparse_nnz(n.id) {
                let found = v.nonzeros();
                if found as u64 > nnz {
                    return Err(SimError::SparseOverflow {
                        name: n.name.clone().unwrap_or_default(),
                        nnz,
                        found,
                    });
                }
            }
        }
        vals.insert(n.id, v);
    }
    Ok(vals)
}

/// Per-node intervals and makespan from the timing table alone.
pub fn run_timing(
    dfg: &MatrixDfg,
    a: &PfAssignment,
    sched: &Schedule,
    lib: &TemplateLibrary,
) -> Result<(BTreeMap<NodeId, Interval>, u64), SimError> {
    let covered: BTreeSet<NodeId> = sched
        .units()
        .iter()
        .flat_map(|u| u.members().iter().copied())
        .collect();
    if let Some(id) = dfg.node_ids().find(|id| !covered.contains(id)) {
        return Err(SimError::ScheduleMismatch(id));
    }
    let durations: Vec<u64> = sched
        .units()
        .iter()
        .map(|u| unit_duration(dfg, a, u, lib))
        .collect();
    let iv = unit_intervals(sched, &durations);
    let mut nodes = BTreeMap::new();
    for (u, unit) in sched.units().iter().enumerate() {
        let (start, end) = iv[u];
        match unit {
            ScheduleUnit::Fused(s) if s.members.len() > 1 => {
                for (k, &m) in s.members.iter().enumerate() {
                    let st = start + k as u64 * lib.d_stage();
                    nodes.insert(
                        m,
                        Interval {
                            start: st.min(end),
                            end,
                        },
                    );
                }
            }
            _ => {
                for &m in unit.members() {
                    nodes.insert(m, Interval { start, end });
                }
            }
        }
    }
    let makespan = iv.iter().map(|x| x.1).max().unwrap_or(0);
    Ok((nodes, makespan))
}

/// Executes the scheduled design on concrete inputs.
pub fn run(
    dfg: &MatrixDfg,
    a: &PfAssignment,
    sched: &Schedule,
    inputs: &Inputs,
    lib: &TemplateLibrary,
) -> Result<SimReport, SimError> {
    let mut vals = bind_sources(dfg, inputs, true)?;
    let (nodes, total_cycles) = run_timing(dfg, a, sched, lib)?;
    let mut outputs = BTreeMap::new();
    let rank: BTreeMap<NodeId, usize> = dfg
        .topo_order()
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, i))
        .collect();
    for &u in sched.order() {
        let unit = &sched.units()[u];
        let mut members: Vec<NodeId> = unit.members().to_vec();
        members.sort_by_key(|m| rank[m]);
        for id in members {
            let n = dfg.node(id);
            if n.kind == OpKind::Source {
                continue;
            }
            let ins: Vec<&TensorValue> = dfg.predecessors(id).map(|p| &vals[&p]).collect();
            let v = kernels::eval(n.kind, &n.dims, &ins, a.pf(id));
            if n.kind == OpKind::Sink {
                outputs.insert(n.name.clone().unwrap_or_else(|| id.to_string()), v.clone());
            }
            vals.insert(id, v);
        }
    }
    Ok(SimReport {
        schema: SIM_SCHEMA.into(),
        total_cycles,
        nodes,
        outputs,
    })
}

/// Seeded random values for every runtime input. Sparse inputs get exactly
/// `nnz` nonzeros at random positions.
pub fn random_inputs(dfg: &MatrixDfg, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Inputs::new();
    for n in dfg.inputs() {
        let name = n.name.clone().unwrap_or_else(|| n.id.to_string());
        if out.contains_key(&name) {
            continue;
        }
        let e = n.dims.out_dim.elements();
        let mut data = vec![0i16; e];
        match dfg.sparse_nnz(n.id) {
            Some(nnz) => {
                for pos in sample(&mut rng, e, (nnz as usize).min(e)).into_vec() {
                    let mut v = 0;
                    while v == 0 {
                        v = rng.gen_range(-256..=256);
                    }
                    data[pos] = v;
                }
            }
            None => {
                for v in data.iter_mut() {
                    *v = rng.gen_range(-256..=256);
                }
            }
        }
        out.insert(
            name,
            TensorValue {
                shape: n.dims.out_dim,
                data,
            },
        );
    }
    out
}

/// One whole-design run at PF 1 without pipelining; each node's interval
/// gives its PF-1 latency, the LUT table its PF-1 LUT count.
pub fn profile_pf1(
    dfg: &MatrixDfg,
    lib: &TemplateLibrary,
    seed: u64,
) -> Result<Profile1, SimError> {
    let a = PfAssignment::uniform(dfg);
    let sched = build_schedule(dfg, &a, false, lib).expect("uniform PF is always valid");
    let report = run(dfg, &a, &sched, &random_inputs(dfg, seed), lib)?;
    Ok(dfg
        .nodes()
        .map(|n| {
            (
                n.id,
                NodeProfile {
                    latency1: report.nodes[&n.id].duration(),
                    lut1: lib.lut(n.kind, &n.dims, 1),
                },
            )
        })
        .collect())
}

/// Single-node design around one operation, for measurements.
pub fn single_node_dfg(kind: OpKind, dims: &NodeDims) -> MatrixDfg {
    let mut b = DfgBuilder::new();
    let ins: Vec<NodeId> = dims
        .in_dims
        .iter()
        .enumerate()
        .map(|(i, &s)| b.source(format!("in{i}"), s))
        .collect();
    let n = b
        .op(kind, &ins, dims.nnz)
        .expect("dims were inferred for this kind");
    b.sink("out", n).expect("sink accepts any shape");
    b.build().expect("single-node design is valid")
}

/// Measures every (kind, dims) at each PF of `pf_grid` within its bound.
pub fn gen_training_data(
    grid: &[(OpKind, NodeDims)],
    pf_grid: &[u32],
    lib: &TemplateLibrary,
) -> Vec<TrainingSample> {
    let mut out = Vec::new();
    for (kind, dims) in grid {
        let dfg = single_node_dfg(*kind, dims);
        let id = NodeId(dims.in_dims.len() as u32);
        let bound = crate::dfg::max_pf(*kind, dims);
        let pfs: BTreeSet<u32> = pf_grid
            .iter()
            .copied()
            .filter(|&p| p >= 1 && p <= bound)
            .collect();
        for pf in pfs {
            let mut epf: BTreeMap<NodeId, u32> = dfg.node_ids().map(|n| (n, 1)).collect();
            epf.insert(id, pf);
            let a = PfAssignment::from_epf(&dfg, epf);
            let sched =
                build_schedule(&dfg, &a, false, lib).expect("single-node assignment is valid");
            let (iv, _) = run_timing(&dfg, &a, &sched, lib).expect("schedule covers the design");
            out.push(TrainingSample {
                kind: *kind,
                dims: dims.clone(),
                pf,
                latency: iv[&id].duration(),
                lut: lib.lut(*kind, dims, pf),
            });
        }
    }
    out
}

/// PFs measured for training; values with `pf % 4 == 3` are left out so
/// they can serve as held-out points.
pub const DEFAULT_PF_GRID: &[u32] = &[1, 2, 4, 5, 8, 9, 12, 16, 17, 24, 32, 33, 48, 64];

/// Measures the default grid and fits cost-model parameters from it.
pub fn train_params(
    lib: &TemplateLibrary,
) -> Result<crate::cost::CostModelParams, crate::cost::FitError> {
    let samples = gen_training_data(&crate::cost::default_training_grid(), DEFAULT_PF_GRID, lib);
    crate::cost::fit(&samples, lib)
}

/// Reads inputs from a JSON object of `{name: {shape, data}}`.
pub fn inputs_from_json(text: &str) -> Result<Inputs, SimError> {
    serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
}

/// Reads `<name>.csv` for every runtime input from a directory.
pub fn inputs_from_csv_dir(dfg: &MatrixDfg, dir: &Path) -> Result<Inputs, SimError> {
    let mut out = Inputs::new();
    for n in dfg.inputs() {
        let name = n.name.clone().unwrap_or_else(|| n.id.to_string());
        let path = dir.join(format!("{name}.csv"));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let v = TensorValue::from_csv(n.dims.out_dim, &text)
            .map_err(|e| SimError::Parse(format!("{name}: {e}")))?;
        out.insert(name, v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape::*;

    #[test]
    fn matadd_values() {
        let mut b = DfgBuilder::new();
        let x = b.source("A", Matrix(2, 2));
        let y = b.source("B", Matrix(2, 2));
        let s = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
        b.sink("C", s).unwrap();
        let g = b.build().unwrap();
        let lib = TemplateLibrary::builtin();
        let a = PfAssignment::uniform(&g);
        let sched = build_schedule(&g, &a, false, &lib).unwrap();
        let mut inputs = Inputs::new();
        inputs.insert(
            "A".into(),
            TensorValue::new(Matrix(2, 2), vec![1, 2, 3, 4]).unwrap(),
        );
        inputs.insert(
            "B".into(),
            TensorValue::new(Matrix(2, 2), vec![5, 6, 7, 8]).unwrap(),
        );
        let r = run(&g, &a, &sched, &inputs, &lib).unwrap();
        assert_eq!(r.outputs["C"].data, vec![6, 8, 10, 12]);
        assert_eq!(r.total_cycles, 8);
        assert_eq!(reference_eval(&g, &inputs).unwrap(), r.outputs);
        inputs.remove("B");
        assert!(matches!(
            run(&g, &a, &sched, &inputs, &lib),
            Err(SimError::MissingInput(_))
        ));
    }

    #[test]
    fn training_data_examples() {
        let lib = TemplateLibrary::builtin();
        let d = NodeDims::infer(OpKind::MatAdd, vec![Vector(64), Vector(64)], None).unwrap();
        let s = gen_training_data(&[(OpKind::MatAdd, d)], &[1, 2, 4, 8, 100], &lib);
        assert_eq!(
            s.iter().map(|s| s.latency).collect::<Vec<_>>(),
            vec![68, 36, 20, 12]
        );
        let mm = NodeDims::infer(OpKind::MatMul, vec![Matrix(4, 4), Matrix(4, 4)], None).unwrap();
        let s = gen_training_data(&[(OpKind::MatMul, mm)], &[1], &lib);
        assert_eq!(s[0].latency, 68);
    }

    #[test]
    fn spmv_matches_dense_and_profile() {
        let mut b = DfgBuilder::new();
        let m = b.source("M", Matrix(16, 16));
        let x = b.source("x", Vector(16));
        let y = b.op(OpKind::SpMV, &[m, x], Some(40)).unwrap();
        b.sink("y", y).unwrap();
        let g = b.build().unwrap();
        let lib = TemplateLibrary::builtin();
        let inputs = random_inputs(&g, 7);
        assert_eq!(inputs["M"].nonzeros(), 40);
        let prof = profile_pf1(&g, &lib, 7).unwrap();
        assert_eq!(prof[&y].latency1, 60);
        let mut epf: BTreeMap<NodeId, u32> = g.node_ids().map(|n| (n, 1)).collect();
        epf.insert(y, 5);
        let a = PfAssignment::from_epf(&g, epf);
        let sched = build_schedule(&g, &a, true, &lib).unwrap();
        let r = run(&g, &a, &sched, &inputs, &lib).unwrap();
        assert_eq!(r.outputs, reference_eval(&g, &inputs).unwrap());
    }
}
