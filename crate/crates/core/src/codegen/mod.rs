//! Verilog emission: one instance per node, one banked buffer per edge,
//! shuffle blocks where PFs disagree, fused modules for pipelined clusters
//! and a start/done controller on top.

mod check;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfg::{pf_constraints_ok, EdgeId, MatrixDfg, NodeId, OpKind, PfAssignment, Violation};
use crate::optimizer::CostContext;
use crate::schedule::{Schedule, ScheduleUnit};
use crate::sim::kernels::Csc;
use crate::templates::{activation_table, stencil_name, TemplateError, TemplateLibrary};
use crate::tensor::TensorValue;

pub use check::{structural_check, structural_check_text, CheckReport, StructuralViolation};

pub const MANIFEST_SCHEMA: &str = "matforge.manifest/1";
pub const TOP_MODULE: &str = "mf_top";

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("no template for `{0}`")]
    MissingTemplate(String),
    #[error("node {node}: {param} = {value} is out of range ({detail})")]
    ParameterOutOfRange {
        node: NodeId,
        param: String,
        value: u64,
        detail: String,
    },
    #[error("PF assignment violates {} constraint(s), first: {}", .0.len(), .0[0])]
    InvalidAssignment(Vec<Violation>),
    #[error("schedule does not match the design: {0}")]
    ScheduleMismatch(String),
    #[error("node {0}: a sparse operand must come from an input or constant used only as a sparse operand")]
    SparseProducer(NodeId),
    #[error(transparent)]
    Template(TemplateError),
}

impl From<TemplateError> for CodegenError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::MissingTemplate(name) => CodegenError::MissingTemplate(name),
            other => CodegenError::Template(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestNode {
    pub id: NodeId,
    pub kind: OpKind,
    pub module: String,
    pub instance: String,
    pub parent: Option<String>,
    pub params: BTreeMap<String, u64>,
    pub pf: u32,
    pub lut_table: u64,
    pub lut_estimate: u64,
    pub dsp: u64,
    pub shuffle_lut: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestBuffer {
    pub edge: EdgeId,
    pub instance: String,
    pub module: String,
    pub depth: u64,
    pub banks: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestUnit {
    pub unit: usize,
    pub instance: Option<String>,
    pub members: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTotals {
    pub lut_table: u64,
    pub lut_estimate: u64,
    pub shuffle_lut: u64,
    pub dsp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub library_version: String,
    pub word_width: u32,
    pub top: String,
    pub nodes: Vec<ManifestNode>,
    pub buffers: Vec<ManifestBuffer>,
    /// Edges carried by plain wires (outputs of combinational nodes).
    pub wired_edges: Vec<EdgeId>,
    /// Edges inside a fused unit, carried by stage registers.
    pub fused_edges: Vec<EdgeId>,
    pub units: Vec<ManifestUnit>,
    pub totals: ManifestTotals,
}

impl Manifest {
    pub fn node(&self, id: NodeId) -> Option<&ManifestNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Emitted design: supporting modules (sorted by name), the top module and
/// the manifest tying instances back to the DFG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerilogDesign {
    pub modules: Vec<(String, String)>,
    pub top: String,
    pub manifest: Manifest,
}

impl VerilogDesign {
    /// The whole design as one Verilog file.
    pub fn text(&self) -> String {
        let mut out = format!(
            "// Generated by matforge; template library {}.\n",
            self.manifest.library_version
        );
        for (_, m) in &self.modules {
            out.push('\n');
            out.push_str(m);
            if !m.ends_with('\n') {
                out.push('\n');
            }
        }
        out.push('\n');
        out.push_str(&self.top);
        out
    }
}

fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    s
}

fn range(width: u64) -> String {
    format!("[{}:0]", width.max(1) - 1)
}

fn in_addr(n: NodeId, k: usize) -> String {
    format!("n{}_in{k}_rd_addr", n.0)
}
fn in_data(n: NodeId, k: usize) -> String {
    format!("n{}_in{k}_rd_data", n.0)
}
fn cp_addr(n: NodeId) -> String {
    format!("n{}_in0_cp_rd_addr", n.0)
}
fn cp_data(n: NodeId) -> String {
    format!("n{}_in0_cp_rd_data", n.0)
}
fn out_sig(n: NodeId, s: &str) -> String {
    format!("n{}_out_wr_{s}", n.0)
}
fn sgn_out(n: NodeId) -> String {
    format!("n{}_out_data", n.0)
}
fn buf(e: EdgeId, s: &str) -> String {
    format!("buf_e{e}_{s}")
}

fn inst_params(params: &[(String, u64)]) -> String {
    let v: Vec<String> = params.iter().map(|(k, v)| format!(".{k}({v})")).collect();
    v.join(", ")
}

fn instance(
    module: &str,
    name: &str,
    params: &[(String, u64)],
    ports: &[(String, String)],
) -> String {
    let mut s = String::new();
    if params.is_empty() {
        let _ = writeln!(s, "  {module} {name} (");
    } else {
        let _ = writeln!(s, "  {module} #({}) {name} (", inst_params(params));
    }
    let conns: Vec<String> = ports
        .iter()
        .map(|(p, sig)| format!("    .{p}({sig})"))
        .collect();
    s.push_str(&conns.join(",\n"));
    s.push_str("\n  );\n");
    s
}

struct Ctx<'a> {
    dfg: &'a MatrixDfg,
    a: &'a PfAssignment,
    sched: &'a Schedule,
    lib: &'a TemplateLibrary,
    w: u64,
}

impl Ctx<'_> {
    fn pf(&self, n: NodeId) -> u64 {
        self.a.pf(n) as u64
    }

    fn kind(&self, n: NodeId) -> OpKind {
        self.dfg.node(n).kind
    }

    fn is_sparse_edge(&self, e: EdgeId) -> bool {
        let edge = self.dfg.edge(e);
        edge.slot == 0 && self.kind(edge.consumer) == OpKind::SpMV
    }

    fn fused_unit(&self, n: NodeId) -> Option<usize> {
        let u = self.sched.find_unit(n)?;
        self.sched.units()[u].is_fused().then_some(u)
    }

    fn internal(&self, e: EdgeId) -> bool {
        let edge = self.dfg.edge(e);
        match self.fused_unit(edge.producer) {
            Some(u) => self.fused_unit(edge.consumer) == Some(u),
            None => false,
        }
    }

    fn wired(&self, e: EdgeId) -> bool {
        self.kind(self.dfg.edge(e).producer) == OpKind::Sgn
    }

    fn out_external(&self, n: NodeId) -> bool {
        self.dfg.out_edges(n).iter().any(|&e| !self.internal(e))
    }

    fn data_width(&self, n: NodeId, k: usize) -> u64 {
        let lanes = self.w * self.pf(n);
        if self.kind(n) == OpKind::SpMV && k == 0 {
            2 * lanes
        } else {
            lanes
        }
    }

    /// Parameter bindings of a node's module.
    fn params(&self, n: NodeId, sparse_depth: &BTreeMap<NodeId, u64>) -> Vec<(String, u64)> {
        let node = self.dfg.node(n);
        let mut p = self.lib.params(node.kind, &node.dims, self.a.pf(n));
        if let Some(&d) = sparse_depth.get(&n) {
            if node.constant.is_some() {
                p[0].1 = d;
            }
        }
        p
    }

    /// Input and output port bindings of a compute template instance.
    fn compute_ports(
        &self,
        n: NodeId,
        start: String,
        done: String,
        inputs: &[String],
    ) -> Vec<(String, String)> {
        let kind = self.kind(n);
        let mut ports = vec![
            ("clk".into(), "clk".into()),
            ("rst".into(), "rst".into()),
            ("start".into(), start),
            ("done".into(), done),
        ];
        for (k, data) in inputs.iter().enumerate() {
            ports.push((format!("in{k}_rd_addr"), in_addr(n, k)));
            ports.push((format!("in{k}_rd_data"), data.clone()));
            if kind == OpKind::SpMV && k == 0 {
                ports.push(("in0_cp_rd_addr".into(), cp_addr(n)));
                ports.push(("in0_cp_rd_data".into(), cp_data(n)));
            }
        }
        for s in ["en", "addr", "data"] {
            ports.push((format!("out_wr_{s}"), out_sig(n, s)));
        }
        ports
    }
}

fn validate(c: &Ctx) -> Result<BTreeMap<NodeId, u64>, CodegenError> {
    let v = pf_constraints_ok(c.dfg, c.a);
    if !v.is_empty() {
        return Err(CodegenError::InvalidAssignment(v));
    }
    for n in c.dfg.nodes() {
        let Some(u) = c.sched.find_unit(n.id) else {
            return Err(CodegenError::ScheduleMismatch(format!(
                "node {} has no unit",
                n.id
            )));
        };
        if let ScheduleUnit::Fused(s) = &c.sched.units()[u] {
            if s.pf != c.a.pf(n.id) {
                return Err(CodegenError::ScheduleMismatch(format!(
                    "unit {u} runs at PF {} but node {} has PF {}",
                    s.pf,
                    n.id,
                    c.a.pf(n.id)
                )));
            }
        }
        if !c.lib.has_stencil(&stencil_name(n.kind)) {
            return Err(CodegenError::MissingTemplate(stencil_name(n.kind)));
        }
        for (param, value) in c.lib.params(n.kind, &n.dims, c.a.pf(n.id)) {
            if value == 0 {
                return Err(CodegenError::ParameterOutOfRange {
                    node: n.id,
                    param,
                    value,
                    detail: "must be positive".into(),
                });
            }
        }
        if c.a.pf(n.id) > n.max_pf() {
            return Err(CodegenError::ParameterOutOfRange {
                node: n.id,
                param: "PF".into(),
                value: c.a.pf(n.id) as u64,
                detail: format!("bound {}", n.max_pf()),
            });
        }
    }
    if c.dfg.len()
        != c.sched
            .units()
            .iter()
            .map(|u| u.members().len())
            .sum::<usize>()
    {
        return Err(CodegenError::ScheduleMismatch(
            "unit members do not cover the nodes".into(),
        ));
    }
    // Sparse operands: sources read only as sparse operands with one nnz.
    let mut depth = BTreeMap::new();
    for e in 0..c.dfg.edges().len() {
        if !c.is_sparse_edge(e) {
            continue;
        }
        let edge = c.dfg.edge(e);
        let p = edge.producer;
        let uses = c.dfg.out_edges(p);
        let nnzs: BTreeSet<Option<u64>> = uses
            .iter()
            .map(|&u| {
                c.is_sparse_edge(u)
                    .then(|| c.dfg.node(c.dfg.edge(u).consumer).dims.nnz)
                    .flatten()
            })
            .collect();
        if c.kind(p) != OpKind::Source || nnzs.len() != 1 || nnzs.contains(&None) {
            return Err(CodegenError::SparseProducer(edge.consumer));
        }
        let consumer = c.dfg.node(edge.consumer);
        let nnz = consumer.dims.nnz.unwrap_or(1);
        let cols = consumer.dims.in_dims[0].rows_cols().1 as u64;
        depth.insert(p, 2 * nnz + cols + 1);
        if let Some(v) = c.dfg.constant_value(p) {
            let actual = v.nonzeros() as u64;
            if actual > nnz {
                return Err(CodegenError::ParameterOutOfRange {
                    node: edge.consumer,
                    param: "NNZ".into(),
                    value: nnz,
                    detail: format!("constant operand has {actual} nonzeros"),
                });
            }
        }
    }
    Ok(depth)
}

/// Host write stream of a sparse constant: values, row ids, then column
/// pointers, padded with explicit zeros up to `nnz`.
fn csc_stream(m: &TensorValue, nnz: usize) -> Vec<i64> {
    let csc = Csc::from_dense(m);
    let pad = nnz - csc.vals.len();
    let mut vals: Vec<i64> = csc.vals.iter().map(|&v| v as i64).collect();
    let mut rows: Vec<i64> = csc.rows.iter().map(|&r| r as i64).collect();
    vals.extend(std::iter::repeat_n(0, pad));
    rows.extend(std::iter::repeat_n(0, pad));
    let mut colp: Vec<i64> = csc.colptr.iter().map(|&p| p as i64).collect();
    if let Some(last) = colp.last_mut() {
        *last += pad as i64;
    }
    vals.into_iter().chain(rows).chain(colp).collect()
}

fn const_module(
    c: &Ctx,
    n: NodeId,
    sparse_depth: &BTreeMap<NodeId, u64>,
) -> Result<String, CodegenError> {
    let v = c.dfg.constant_value(n).expect("constant source");
    let stream: Vec<i64> = match sparse_depth.get(&n) {
        Some(_) => {
            let consumer = c.dfg.node(c.dfg.edge(c.dfg.out_edges(n)[0]).consumer);
            csc_stream(&v, consumer.dims.nnz.unwrap_or(1) as usize)
        }
        None => v.data.iter().map(|&x| x as i64).collect(),
    };
    let init: Vec<String> = stream
        .iter()
        .enumerate()
        .map(|(i, x)| format!("    rom[{i}] = {x};"))
        .collect();
    Ok(c.lib.render(
        "const",
        &[
            ("MODULE", format!("mf_const_n{}", n.0)),
            ("DEPTH", stream.len().to_string()),
            ("INIT", init.join("\n")),
        ],
    )?)
}

fn kind_module(c: &Ctx, kind: OpKind) -> Result<String, CodegenError> {
    let name = stencil_name(kind);
    let holes = match kind {
        OpKind::TanH | OpKind::Sigmoid | OpKind::Exp => {
            let t = activation_table(kind);
            let lines: Vec<String> = t
                .iter()
                .enumerate()
                .map(|(i, v)| format!("    lut[{i}] = {v};"))
                .collect();
            vec![("LUT_INIT", lines.join("\n"))]
        }
        _ => vec![],
    };
    Ok(c.lib.render(&name, &holes)?)
}

fn fused_module(
    c: &Ctx,
    u: usize,
    members: &[NodeId],
    sparse_depth: &BTreeMap<NodeId, u64>,
) -> (String, Vec<(String, String)>) {
    let name = format!("mf_fused_u{u}");
    let pf = c.pf(members[0]);
    let lanes = c.w * pf;
    let d = c.lib.d_stage().max(1);
    let mut ports: Vec<String> = vec![
        "  input clk".into(),
        "  input rst".into(),
        "  input start".into(),
        "  output reg done".into(),
    ];
    let mut conns: Vec<(String, String)> = ["clk", "rst", "start", "done"]
        .iter()
        .map(|s| (s.to_string(), s.to_string()))
        .collect();
    conns[2].1 = format!("u{u}_start");
    conns[3].1 = format!("u{u}_done");
    let mut decls = Vec::new();
    let mut body = String::new();
    let mut stage_updates = Vec::new();
    let mut stage_resets = Vec::new();
    for &m in members {
        let mut inputs = Vec::new();
        for (k, &e) in c.dfg.in_edges(m).iter().enumerate() {
            if c.internal(e) {
                decls.push(format!("  wire [31:0] {};", in_addr(m, k)));
                let st = format!("st_e{e}");
                decls.push(format!("  reg {} {st};", range(lanes)));
                let p = c.dfg.edge(e).producer;
                stage_updates.push(format!(
                    "      if ({})\n        {st} <= {};",
                    out_sig(p, "en"),
                    out_sig(p, "data")
                ));
                stage_resets.push(format!("      {st} <= 0;"));
                inputs.push(st);
            } else {
                ports.push(format!("  output [31:0] {}", in_addr(m, k)));
                ports.push(format!(
                    "  input {} {}",
                    range(c.data_width(m, k)),
                    in_data(m, k)
                ));
                conns.push((in_addr(m, k), in_addr(m, k)));
                conns.push((in_data(m, k), in_data(m, k)));
                inputs.push(in_data(m, k));
            }
        }
        let outs = [("en", 1), ("addr", 32), ("data", lanes)];
        if c.out_external(m) {
            for (s, width) in outs {
                let r = if width == 1 {
                    String::new()
                } else {
                    format!("{} ", range(width))
                };
                ports.push(format!("  output {r}{}", out_sig(m, s)));
                conns.push((out_sig(m, s), out_sig(m, s)));
            }
        } else {
            for (s, width) in outs {
                let r = if width == 1 {
                    String::new()
                } else {
                    format!("{} ", range(width))
                };
                decls.push(format!("  wire {r}{};", out_sig(m, s)));
            }
        }
        decls.push(format!("  wire n{}_done;", m.0));
    }
    let nm = members.len();
    let stg_len = ((nm as u64 - 1) * d).max(1);
    decls.push(format!("  reg {} stg;", range(stg_len)));
    decls.push(format!("  reg {} fin;", range(nm as u64)));
    let mut insts = String::new();
    for (j, &m) in members.iter().enumerate() {
        let start = if j == 0 {
            "start".to_string()
        } else {
            format!("stg[{}]", j as u64 * d - 1)
        };
        let inputs: Vec<String> = c
            .dfg
            .in_edges(m)
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                if c.internal(e) {
                    format!("st_e{e}")
                } else {
                    in_data(m, k)
                }
            })
            .collect();
        let ports = c.compute_ports(m, start, format!("n{}_done", m.0), &inputs);
        insts.push_str(&instance(
            &format!("mf_{}", stencil_name(c.kind(m))),
            &format!("u_n{}", m.0),
            &c.params(m, sparse_depth),
            &ports,
        ));
    }
    let dones: Vec<String> = members
        .iter()
        .rev()
        .map(|m| format!("n{}_done", m.0))
        .collect();
    let dones = format!("{{{}}}", dones.join(", "));
    let shift = if stg_len == 1 {
        "      stg <= start;".to_string()
    } else {
        format!("      stg <= {{stg[{}:0], start}};", stg_len - 2)
    };
    let _ = writeln!(body, "  always @(posedge clk) begin");
    let _ = writeln!(body, "    if (rst) begin");
    let _ = writeln!(body, "      stg <= 0;");
    let _ = writeln!(body, "      fin <= 0;");
    let _ = writeln!(body, "      done <= 1'b0;");
    for r in &stage_resets {
        let _ = writeln!(body, "{r}");
    }
    let _ = writeln!(body, "    end else begin");
    let _ = writeln!(body, "{shift}");
    let _ = writeln!(body, "      done <= 1'b0;");
    let _ = writeln!(body, "      if (start)");
    let _ = writeln!(body, "        fin <= 0;");
    let _ = writeln!(body, "      else if (fin != {{{nm}{{1'b1}}}}) begin");
    let _ = writeln!(body, "        fin <= fin | {dones};");
    let _ = writeln!(body, "        if ((fin | {dones}) == {{{nm}{{1'b1}}}})");
    let _ = writeln!(body, "          done <= 1'b1;");
    let _ = writeln!(body, "      end");
    for s in &stage_updates {
        let _ = writeln!(body, "{s}");
    }
    let _ = writeln!(body, "    end");
    let _ = writeln!(body, "  end");
    let mut text = String::new();
    let _ = writeln!(text, "// Pipelined cluster {{{}}}.", {
        let v: Vec<String> = members.iter().map(|m| m.to_string()).collect();
        v.join(", ")
    });
    let _ = writeln!(text, "module {name} (\n{}\n);", ports.join(",\n"));
    for dcl in decls {
        let _ = writeln!(text, "{dcl}");
    }
    text.push_str(&insts);
    text.push_str(&body);
    text.push_str("endmodule\n");
    (text, conns)
}

/// Emits the design. `costs` supplies the optimizer's LUT/DSP estimates for
/// the manifest; without it the manifest repeats the cost table.
pub fn emit(
    dfg: &MatrixDfg,
    a: &PfAssignment,
    sched: &Schedule,
    lib: &TemplateLibrary,
    costs: Option<&CostContext>,
) -> Result<VerilogDesign, CodegenError> {
    let c = Ctx {
        dfg,
        a,
        sched,
        lib,
        w: lib.word_width() as u64,
    };
    let sparse_depth = validate(&c)?;
    let w = c.w;
    let mut modules: BTreeMap<String, String> = BTreeMap::new();
    let mut header = vec![
        "  input clk".to_string(),
        "  input rst".into(),
        "  input start".into(),
        "  output done".into(),
    ];
    let mut wires: Vec<String> = Vec::new();
    let mut assigns: Vec<String> = Vec::new();
    let mut insts = String::new();
    let mut used_names = BTreeSet::new();
    let mut port_name = |prefix: &str, n: NodeId| {
        let base = format!(
            "{prefix}_{}",
            sanitize(dfg.node(n).name.as_deref().unwrap_or(""))
        );
        let name = if used_names.contains(&base) || base.ends_with('_') {
            format!("{base}_n{}", n.0)
        } else {
            base
        };
        used_names.insert(name.clone());
        name
    };

    let mut nodes = Vec::new();
    let mut totals = ManifestTotals::default();
    let mut buffers = Vec::new();
    let mut wired_edges = Vec::new();
    let mut fused_edges = Vec::new();

    // Node-side wires.
    for n in dfg.nodes() {
        let id = n.id;
        if c.fused_unit(id).is_some() {
            for (k, &e) in dfg.in_edges(id).iter().enumerate() {
                if !c.internal(e) {
                    wires.push(format!("  wire [31:0] {};", in_addr(id, k)));
                    wires.push(format!(
                        "  wire {} {};",
                        range(c.data_width(id, k)),
                        in_data(id, k)
                    ));
                }
            }
            if c.out_external(id) {
                wires.push(format!("  wire {};", out_sig(id, "en")));
                wires.push(format!("  wire [31:0] {};", out_sig(id, "addr")));
                wires.push(format!(
                    "  wire {} {};",
                    range(w * c.pf(id)),
                    out_sig(id, "data")
                ));
            }
            continue;
        }
        if n.kind == OpKind::Sgn {
            wires.push(format!("  wire {} {};", range(w), sgn_out(id)));
            continue;
        }
        for k in 0..n.kind.arity() {
            wires.push(format!("  wire [31:0] {};", in_addr(id, k)));
            wires.push(format!(
                "  wire {} {};",
                range(c.data_width(id, k)),
                in_data(id, k)
            ));
            if n.kind == OpKind::SpMV && k == 0 {
                wires.push(format!("  wire [31:0] {};", cp_addr(id)));
                wires.push(format!("  wire [31:0] {};", cp_data(id)));
            }
        }
        if n.kind != OpKind::Sink {
            wires.push(format!("  wire {};", out_sig(id, "en")));
            wires.push(format!("  wire [31:0] {};", out_sig(id, "addr")));
            wires.push(format!(
                "  wire {} {};",
                range(w * c.pf(id)),
                out_sig(id, "data")
            ));
        }
    }

    // Edges.
    for (e, edge) in dfg.edges().iter().enumerate() {
        let (p, cn, k) = (edge.producer, edge.consumer, edge.slot);
        if c.internal(e) {
            fused_edges.push(e);
            continue;
        }
        if c.wired(e) {
            wired_edges.push(e);
            if c.kind(cn) != OpKind::Sgn {
                assigns.push(format!(
                    "  assign {} = {{{}{{{}}}}};",
                    in_data(cn, k),
                    c.pf(cn),
                    sgn_out(p)
                ));
            }
            continue;
        }
        let banks = a.edge(e) as u64;
        let elements = edge.shape.elements() as u64;
        let sparse = c.is_sparse_edge(e);
        let (module, depth, params, rd_width) = if sparse {
            let d = &dfg.node(cn).dims;
            let (rows, cols) = d.in_dims[0].rows_cols();
            let nnz = d.nnz.unwrap_or(1);
            (
                "mf_csc_buffer",
                2 * nnz + cols as u64 + 1,
                vec![
                    ("ROWS".to_string(), rows as u64),
                    ("COLS".into(), cols as u64),
                    ("NNZ".into(), nnz),
                    ("W".into(), w),
                    ("BANKS".into(), banks),
                    ("LANES".into(), c.pf(cn)),
                ],
                2 * w * c.pf(cn),
            )
        } else {
            (
                "mf_buffer",
                elements,
                vec![
                    ("DEPTH".to_string(), elements),
                    ("W".into(), w),
                    ("BANKS".into(), banks),
                ],
                w * banks,
            )
        };
        modules.entry(module.into()).or_insert_with(|| {
            lib.render(module.trim_start_matches("mf_"), &[])
                .expect("builtin stencil")
        });
        wires.push(format!("  wire {};", buf(e, "wr_en")));
        wires.push(format!("  wire [31:0] {};", buf(e, "wr_addr")));
        wires.push(format!(
            "  wire {} {};",
            range(w * banks),
            buf(e, "wr_data")
        ));
        wires.push(format!("  wire [31:0] {};", buf(e, "rd_addr")));
        wires.push(format!("  wire {} {};", range(rd_width), buf(e, "rd_data")));
        let mut ports: Vec<(String, String)> =
            ["wr_en", "wr_addr", "wr_data", "rd_addr", "rd_data"]
                .iter()
                .map(|s| (s.to_string(), buf(e, s)))
                .collect();
        ports.insert(0, ("clk".into(), "clk".into()));
        if sparse {
            wires.push(format!("  wire [31:0] {};", buf(e, "cp_rd_addr")));
            wires.push(format!("  wire [31:0] {};", buf(e, "cp_rd_data")));
            ports.push(("cp_rd_addr".into(), buf(e, "cp_rd_addr")));
            ports.push(("cp_rd_data".into(), buf(e, "cp_rd_data")));
        }
        insts.push_str(&instance(module, &format!("buf_e{e}"), &params, &ports));
        buffers.push(ManifestBuffer {
            edge: e,
            instance: format!("buf_e{e}"),
            module: module.into(),
            depth,
            banks: banks as u32,
        });

        // Write side.
        let lanes_p = c.pf(p);
        if lanes_p == banks {
            for s in ["en", "addr", "data"] {
                assigns.push(format!(
                    "  assign {} = {};",
                    buf(e, &format!("wr_{s}")),
                    out_sig(p, s)
                ));
            }
        } else {
            modules
                .entry("mf_shuffle_wr".into())
                .or_insert_with(|| lib.render("shuffle_wr", &[]).expect("builtin stencil"));
            let ports: Vec<(String, String)> = ["en", "addr", "data"]
                .iter()
                .flat_map(|s| {
                    [
                        (format!("n_wr_{s}"), out_sig(p, s)),
                        (format!("b_wr_{s}"), buf(e, &format!("wr_{s}"))),
                    ]
                })
                .collect();
            let params = vec![
                ("W".to_string(), w),
                ("LANES".into(), lanes_p),
                ("BANKS".into(), banks),
            ];
            insts.push_str(&instance(
                "mf_shuffle_wr",
                &format!("shw_n{}_e{e}", p.0),
                &params,
                &ports,
            ));
        }

        // Read side.
        if c.kind(cn) == OpKind::Sgn {
            assigns.push(format!("  assign {} = 32'd0;", buf(e, "rd_addr")));
        } else if sparse {
            assigns.push(format!(
                "  assign {} = {};",
                buf(e, "rd_addr"),
                in_addr(cn, 0)
            ));
            assigns.push(format!(
                "  assign {} = {};",
                in_data(cn, 0),
                buf(e, "rd_data")
            ));
            assigns.push(format!(
                "  assign {} = {};",
                buf(e, "cp_rd_addr"),
                cp_addr(cn)
            ));
            assigns.push(format!(
                "  assign {} = {};",
                cp_data(cn),
                buf(e, "cp_rd_data")
            ));
        } else if c.pf(cn) == banks {
            assigns.push(format!(
                "  assign {} = {};",
                buf(e, "rd_addr"),
                in_addr(cn, k)
            ));
            assigns.push(format!(
                "  assign {} = {};",
                in_data(cn, k),
                buf(e, "rd_data")
            ));
        } else {
            modules
                .entry("mf_shuffle_rd".into())
                .or_insert_with(|| lib.render("shuffle_rd", &[]).expect("builtin stencil"));
            let ports = vec![
                ("n_rd_addr".to_string(), in_addr(cn, k)),
                ("n_rd_data".into(), in_data(cn, k)),
                ("b_rd_addr".into(), buf(e, "rd_addr")),
                ("b_rd_data".into(), buf(e, "rd_data")),
            ];
            let params = vec![
                ("W".to_string(), w),
                ("BANKS".into(), banks),
                ("LANES".into(), c.pf(cn)),
            ];
            insts.push_str(&instance(
                "mf_shuffle_rd",
                &format!("shr_n{}_in{k}", cn.0),
                &params,
                &ports,
            ));
        }
    }

    // Units and their instances.
    let mut units = Vec::new();
    let mut ctrl_regs = Vec::new();
    let mut sgn_units = BTreeSet::new();
    for (u, unit) in sched.units().iter().enumerate() {
        wires.push(format!("  wire u{u}_start;"));
        ctrl_regs.push(format!("  reg u{u}_fired;"));
        ctrl_regs.push(format!("  reg u{u}_done_q;"));
        if unit.is_fused() {
            wires.push(format!("  wire u{u}_done;"));
            let (text, conns) = fused_module(&c, u, unit.members(), &sparse_depth);
            let name = format!("mf_fused_u{u}");
            modules.insert(name.clone(), text);
            insts.push_str(&instance(&name, &format!("fu_{u}"), &[], &conns));
            units.push(ManifestUnit {
                unit: u,
                instance: Some(format!("fu_{u}")),
                members: unit.members().to_vec(),
            });
            continue;
        }
        let id = unit.members()[0];
        let node = dfg.node(id);
        units.push(ManifestUnit {
            unit: u,
            instance: None,
            members: vec![id],
        });
        let start = format!("u{u}_start");
        let done = format!("u{u}_done");
        let params = c.params(id, &sparse_depth);
        let name = format!("u_n{}", id.0);
        match node.kind {
            OpKind::Sgn => {
                sgn_units.insert(u);
                let e = dfg.in_edges(id)[0];
                let src = if c.wired(e) {
                    sgn_out(dfg.edge(e).producer)
                } else {
                    format!("{}[{}:0]", buf(e, "rd_data"), w - 1)
                };
                modules
                    .entry("mf_sgn".into())
                    .or_insert(kind_module(&c, OpKind::Sgn)?);
                let ports = vec![
                    ("in0_data".to_string(), src),
                    ("out_data".into(), sgn_out(id)),
                ];
                insts.push_str(&instance("mf_sgn", &name, &params, &ports));
            }
            OpKind::Source => {
                wires.push(format!("  wire {done};"));
                let mut ports: Vec<(String, String)> = vec![
                    ("clk".into(), "clk".into()),
                    ("rst".into(), "rst".into()),
                    ("start".into(), start),
                    ("done".into(), done),
                ];
                let module = if node.constant.is_some() {
                    let m = format!("mf_const_n{}", id.0);
                    modules.insert(m.clone(), const_module(&c, id, &sparse_depth)?);
                    m
                } else {
                    modules
                        .entry("mf_source".into())
                        .or_insert(kind_module(&c, OpKind::Source)?);
                    let host = port_name("src", id);
                    header.push(format!("  input {host}_wr_en"));
                    header.push(format!("  input [31:0] {host}_wr_addr"));
                    header.push(format!("  input {} {host}_wr_data", range(w)));
                    for s in ["en", "addr", "data"] {
                        ports.push((format!("host_wr_{s}"), format!("{host}_wr_{s}")));
                    }
                    "mf_source".to_string()
                };
                for s in ["en", "addr", "data"] {
                    ports.push((format!("out_wr_{s}"), out_sig(id, s)));
                }
                insts.push_str(&instance(&module, &name, &params, &ports));
            }
            OpKind::Sink => {
                wires.push(format!("  wire {done};"));
                modules
                    .entry("mf_sink".into())
                    .or_insert(kind_module(&c, OpKind::Sink)?);
                let host = port_name("snk", id);
                header.push(format!("  input [31:0] {host}_rd_addr"));
                header.push(format!("  output {} {host}_rd_data", range(w)));
                let ports = vec![
                    ("clk".to_string(), "clk".to_string()),
                    ("rst".into(), "rst".into()),
                    ("start".into(), start),
                    ("done".into(), done),
                    ("in0_rd_addr".into(), in_addr(id, 0)),
                    ("in0_rd_data".into(), in_data(id, 0)),
                    ("host_rd_addr".into(), format!("{host}_rd_addr")),
                    ("host_rd_data".into(), format!("{host}_rd_data")),
                ];
                insts.push_str(&instance("mf_sink", &name, &params, &ports));
            }
            kind => {
                wires.push(format!("  wire {done};"));
                let inputs: Vec<String> = (0..kind.arity()).map(|k| in_data(id, k)).collect();
                let ports = c.compute_ports(id, start, done, &inputs);
                let module = format!("mf_{}", stencil_name(kind));
                insts.push_str(&instance(&module, &name, &params, &ports));
            }
        }
    }
    for n in dfg.compute_nodes() {
        if n.kind != OpKind::Sgn {
            let m = format!("mf_{}", stencil_name(n.kind));
            if let std::collections::btree_map::Entry::Vacant(e) = modules.entry(m) {
                e.insert(kind_module(&c, n.kind)?);
            }
        }
    }

    // Manifest rows.
    for n in dfg.nodes() {
        let id = n.id;
        let pf = a.pf(id);
        let module = match n.kind {
            OpKind::Source if n.constant.is_some() => format!("mf_const_n{}", id.0),
            k => format!("mf_{}", stencil_name(k)),
        };
        let compute = !n.kind.is_boundary();
        let lut_table = if compute {
            lib.lut(n.kind, &n.dims, pf)
        } else {
            0
        };
        let (lut_estimate, shuffle_lut, dsp) = match costs {
            Some(cc) => {
                let nc = cc.node_cost(id, a);
                (nc.lut, nc.shuffle_lut, nc.dsp)
            }
            None if compute => {
                let shuffle = if n.is_linear_time() {
                    0
                } else {
                    let s: u64 = dfg
                        .in_edges(id)
                        .iter()
                        .chain(dfg.out_edges(id))
                        .map(|&e| a.edge(e) as u64)
                        .sum();
                    lib.c_shuffle() * s
                };
                (lut_table, shuffle, lib.dsp(n.kind, pf))
            }
            None => (0, 0, 0),
        };
        totals.lut_table += lut_table;
        totals.lut_estimate += lut_estimate;
        totals.shuffle_lut += shuffle_lut;
        totals.dsp += dsp;
        nodes.push(ManifestNode {
            id,
            kind: n.kind,
            module,
            instance: format!("u_n{}", id.0),
            parent: c.fused_unit(id).map(|u| format!("fu_{u}")),
            params: c.params(id, &sparse_depth).into_iter().collect(),
            pf,
            lut_table,
            lut_estimate,
            dsp,
            shuffle_lut,
        });
    }

    // Controller.
    let nu = sched.units().len();
    let mut ctrl = String::new();
    for u in 0..nu {
        let mut terms = vec!["run".to_string()];
        terms.extend(sched.deps(u).iter().map(|d| format!("u{d}_done_q")));
        terms.push(format!("~u{u}_fired"));
        let _ = writeln!(ctrl, "  assign u{u}_start = {};", terms.join(" & "));
    }
    let all: Vec<String> = (0..nu).map(|u| format!("u{u}_done_q")).collect();
    let all = if all.is_empty() {
        "run".to_string()
    } else {
        all.join(" & ")
    };
    let _ = writeln!(ctrl, "  assign done = {all};");
    let _ = writeln!(ctrl, "  always @(posedge clk) begin");
    let _ = writeln!(ctrl, "    if (rst) begin");
    let _ = writeln!(ctrl, "      run <= 1'b0;");
    for u in 0..nu {
        let _ = writeln!(
            ctrl,
            "      u{u}_fired <= 1'b0;\n      u{u}_done_q <= 1'b0;"
        );
    }
    let _ = writeln!(ctrl, "    end else if (start) begin");
    let _ = writeln!(ctrl, "      run <= 1'b1;");
    for u in 0..nu {
        let _ = writeln!(
            ctrl,
            "      u{u}_fired <= 1'b0;\n      u{u}_done_q <= 1'b0;"
        );
    }
    let _ = writeln!(ctrl, "    end else begin");
    for u in 0..nu {
        let _ = writeln!(ctrl, "      if (u{u}_start)\n        u{u}_fired <= 1'b1;");
        let trigger = if sgn_units.contains(&u) {
            format!("u{u}_start")
        } else {
            format!("u{u}_done")
        };
        let _ = writeln!(ctrl, "      if ({trigger})\n        u{u}_done_q <= 1'b1;");
    }
    let _ = writeln!(ctrl, "    end");
    let _ = writeln!(ctrl, "  end");

    let mut top = String::new();
    let _ = writeln!(top, "module {TOP_MODULE} (\n{}\n);", header.join(",\n"));
    let _ = writeln!(top, "  reg run;");
    for r in &ctrl_regs {
        let _ = writeln!(top, "{r}");
    }
    for wdecl in &wires {
        let _ = writeln!(top, "{wdecl}");
    }
    for s in &assigns {
        let _ = writeln!(top, "{s}");
    }
    top.push_str(&insts);
    top.push_str(&ctrl);
    top.push_str("endmodule\n");

    Ok(VerilogDesign {
        modules: modules.into_iter().collect(),
        top,
        manifest: Manifest {
            schema: MANIFEST_SCHEMA.into(),
            library_version: lib.version().into(),
            word_width: lib.word_width(),
            top: TOP_MODULE.into(),
            nodes,
            buffers,
            wired_edges,
            fused_edges,
            units,
            totals,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::DfgBuilder;
    use crate::schedule::build_schedule;
    use crate::tensor::Shape::*;

    fn add_design(pf: u32) -> (MatrixDfg, PfAssignment) {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(16));
        let y = b.source("y", Vector(16));
        let s = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
        b.sink("s", s).unwrap();
        let g = b.build().unwrap();
        let mut epf: BTreeMap<NodeId, u32> = g.node_ids().map(|n| (n, 1)).collect();
        epf.insert(s, pf);
        let a = PfAssignment::from_epf(&g, epf);
        (g, a)
    }

    #[test]
    fn single_matadd() {
        let lib = TemplateLibrary::builtin();
        let (g, a) = add_design(2);
        let sched = build_schedule(&g, &a, true, &lib).unwrap();
        let d = emit(&g, &a, &sched, &lib, None).unwrap();
        let text = d.text();
        assert_eq!(text.matches("mf_matadd #(.E").count(), 1);
        assert!(text.contains(".E(16), .PF(2), .W(16)"));
        assert_eq!(d.manifest.buffers.len(), 3);
        assert!(d.manifest.buffers.iter().all(|b| b.banks == 2));
        assert_eq!(text.matches("_start = run").count(), 4);
        assert_eq!(d.text(), emit(&g, &a, &sched, &lib, None).unwrap().text());
        let report = structural_check(&d);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
    }

    #[test]
    fn sgn_is_wired() {
        let lib = TemplateLibrary::builtin();
        let mut b = DfgBuilder::new();
        let x = b.source("x", Scalar);
        let s = b.op(OpKind::Sgn, &[x], None).unwrap();
        b.sink("y", s).unwrap();
        let g = b.build().unwrap();
        let a = PfAssignment::uniform(&g);
        let sched = build_schedule(&g, &a, true, &lib).unwrap();
        let d = emit(&g, &a, &sched, &lib, None).unwrap();
        assert_eq!(d.manifest.wired_edges, vec![1]);
        assert_eq!(d.manifest.buffers.len(), 1);
        assert!(d.text().contains("mf_sgn #(.PF(1), .W(16)) u_n1"));
        let report = structural_check(&d);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
    }

    #[test]
    fn pf_above_bound_rejected() {
        let lib = TemplateLibrary::builtin();
        let (g, mut a) = add_design(2);
        a.epf.insert(NodeId(2), 32);
        for e in a.edge_pf.iter_mut() {
            *e = 32;
        }
        let sched = build_schedule(&g, &PfAssignment::uniform(&g), false, &lib).unwrap();
        assert!(emit(&g, &a, &sched, &lib, None).is_err());
    }
}
