//! Template library: Verilog stencils, the shared timing table and the LUT
//! cost table.
//!
//! The timing formulas here are the ground truth used by the simulator, the
//! scheduler and codegen alike. The LUT table stands in for synthesis reports.

mod activation;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfg::{NodeDims, OpKind};

pub use activation::{activation, activation_table};

pub const COSTS_SCHEMA: &str = "matforge.costs/1";
pub const TEMPLATES_ENV: &str = "MATFORGE_TEMPLATES";

const BUILTIN_COSTS: &str = include_str!("../../templates/costs.json");
const BUILTIN_STENCILS: &[(&str, &str)] = &[
    ("spmv", include_str!("../../templates/spmv.v.tpl")),
    ("matadd", include_str!("../../templates/matadd.v.tpl")),
    ("matsub", include_str!("../../templates/matsub.v.tpl")),
    (
        "scalarmatmul",
        include_str!("../../templates/scalarmatmul.v.tpl"),
    ),
    ("hadamard", include_str!("../../templates/hadamard.v.tpl")),
    (
        "dotproduct",
        include_str!("../../templates/dotproduct.v.tpl"),
    ),
    (
        "outerproduct",
        include_str!("../../templates/outerproduct.v.tpl"),
    ),
    ("matmul", include_str!("../../templates/matmul.v.tpl")),
    ("exp", include_str!("../../templates/exp.v.tpl")),
    ("relu", include_str!("../../templates/relu.v.tpl")),
    ("sigmoid", include_str!("../../templates/sigmoid.v.tpl")),
    ("tanh", include_str!("../../templates/tanh.v.tpl")),
    ("sgn", include_str!("../../templates/sgn.v.tpl")),
    ("geq", include_str!("../../templates/geq.v.tpl")),
    ("argmax", include_str!("../../templates/argmax.v.tpl")),
    ("select", include_str!("../../templates/select.v.tpl")),
    ("source", include_str!("../../templates/source.v.tpl")),
    ("sink", include_str!("../../templates/sink.v.tpl")),
    ("const", include_str!("../../templates/const.v.tpl")),
    ("buffer", include_str!("../../templates/buffer.v.tpl")),
    (
        "csc_buffer",
        include_str!("../../templates/csc_buffer.v.tpl"),
    ),
    (
        "shuffle_rd",
        include_str!("../../templates/shuffle_rd.v.tpl"),
    ),
    (
        "shuffle_wr",
        include_str!("../../templates/shuffle_wr.v.tpl"),
    ),
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading template library {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cost table: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cost table schema `{0}` is not {COSTS_SCHEMA}")]
    Schema(String),
    #[error("no template for `{0}`")]
    MissingTemplate(String),
    #[error("cost table lacks an entry for {0}")]
    MissingCost(OpKind),
    #[error("stencil `{stencil}` has unfilled hole `{hole}`")]
    UnfilledHole { stencil: String, hole: String },
}

/// LUT cost coefficients of one template.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindCost {
    pub ctrl_lut: u64,
    pub addr_lut_per_bit: u64,
    pub pe_lut: u64,
    pub bank_lut_per_bit: u64,
    pub dsp_per_pe: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub schema: String,
    pub version: String,
    pub c_setup: u64,
    pub d_stage: u64,
    pub c_shuffle: u64,
    pub word_width: u32,
    pub kinds: BTreeMap<OpKind, KindCost>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDir {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Port {
    pub name: String,
    pub dir: PortDir,
}

/// Interface of one template module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TemplateDescriptor {
    pub kind: OpKind,
    pub module: String,
    pub params: Vec<String>,
    pub ports: Vec<Port>,
    pub dsp_per_pe: u32,
}

#[derive(Clone, Debug)]
pub struct TemplateLibrary {
    costs: CostTable,
    stencils: BTreeMap<String, String>,
    origin: String,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

/// Stencil file stem for a kind.
pub fn stencil_name(kind: OpKind) -> String {
    kind.name().to_ascii_lowercase()
}

impl TemplateLibrary {
    /// Library compiled into the binary.
    pub fn builtin() -> Self {
        let costs: CostTable =
            serde_json::from_str(BUILTIN_COSTS).expect("builtin cost table parses");
        TemplateLibrary {
            costs,
            stencils: BUILTIN_STENCILS
                .iter()
                .map(|(n, t)| (n.to_string(), t.to_string()))
                .collect(),
            origin: "builtin".into(),
        }
    }

    /// Loads `costs.json` and every `*.v.tpl` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TemplateError::Io { path, source }
        };
        let costs_path = dir.join("costs.json");
        let text = std::fs::read_to_string(&costs_path).map_err(io(&costs_path))?;
        let costs: CostTable = serde_json::from_str(&text)?;
        if costs.schema != COSTS_SCHEMA {
            return Err(TemplateError::Schema(costs.schema));
        }
        for k in OpKind::ALL {
            if !costs.kinds.contains_key(&k) {
                return Err(TemplateError::MissingCost(k));
            }
        }
        let mut stencils = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(io(dir))? {
            let path = entry.map_err(io(dir))?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(stem) = name.strip_suffix(".v.tpl") {
                let text = std::fs::read_to_string(&path).map_err(io(&path))?;
                stencils.insert(stem.to_string(), text);
            }
        }
        Ok(TemplateLibrary {
            costs,
            stencils,
            origin: dir.display().to_string(),
        })
    }

    /// Explicit directory, else `$MATFORGE_TEMPLATES`, else the builtin set.
    pub fn resolve(dir: Option<&Path>) -> Result<Self, TemplateError> {
        if let Some(d) = dir {
            return Self::load_dir(d);
        }
        match std::env::var_os(TEMPLATES_ENV) {
            Some(d) if !d.is_empty() => Self::load_dir(Path::new(&d)),
            _ => Ok(Self::builtin()),
        }
    }

    pub fn costs(&self) -> &CostTable {
        &self.costs
    }

    pub fn version(&self) -> &str {
        &self.costs.version
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn c_setup(&self) -> u64 {
        self.costs.c_setup
    }

    pub fn d_stage(&self) -> u64 {
        self.costs.d_stage
    }

    pub fn c_shuffle(&self) -> u64 {
        self.costs.c_shuffle
    }

    pub fn word_width(&self) -> u32 {
        self.costs.word_width
    }

    pub fn with_word_width(mut self, w: u32) -> Self {
        self.costs.word_width = w;
        self
    }

    pub fn with_d_stage(mut self, d: u64) -> Self {
        self.costs.d_stage = d;
        self
    }

    fn kind_cost(&self, kind: OpKind) -> KindCost {
        self.costs.kinds.get(&kind).copied().unwrap_or(KindCost {
            ctrl_lut: 0,
            addr_lut_per_bit: 0,
            pe_lut: 0,
            bank_lut_per_bit: 0,
            dsp_per_pe: 0,
        })
    }

    /// Cycles for one node at the given PF.
    pub fn latency(&self, kind: OpKind, dims: &NodeDims, pf: u32) -> u64 {
        let p = pf.max(1) as u64;
        let c = self.costs.c_setup;
        match kind {
            OpKind::Source | OpKind::Sink => 0,
            OpKind::Sgn => 1,
            k if k.is_elementwise() => ceil_div(dims.out_dim.elements() as u64, p) + c,
            OpKind::MatMul => {
                let (i, k, j) = dims.matmul_ikj();
                ceil_div((i * k) as u64, p) * j as u64 + c
            }
            OpKind::SpMV => {
                let rows = dims.in_dims[0].rows_cols().0 as u64;
                ceil_div(dims.nnz.unwrap_or(0), p) + rows + c
            }
            OpKind::DotProduct | OpKind::ArgMax => {
                ceil_div(dims.in_dims[0].elements() as u64, p) + p + c
            }
            OpKind::OuterProduct => ceil_div(dims.out_dim.elements() as u64, p) + c,
            _ => unreachable!("every kind has a timing formula"),
        }
    }

    /// Cycles for a pipeline of `k` fused stages streaming `e_max` elements.
    pub fn fused_latency(&self, e_max: u64, k: usize, pf: u32) -> u64 {
        ceil_div(e_max, pf.max(1) as u64) + k as u64 * self.costs.d_stage + self.costs.c_setup
    }

    /// Size of the address space a template walks.
    pub fn work_units(kind: OpKind, dims: &NodeDims) -> u64 {
        match kind {
            OpKind::Source | OpKind::Sink | OpKind::Sgn => 1,
            k if k.is_elementwise() => dims.out_dim.elements() as u64,
            OpKind::MatMul => {
                let (i, k, j) = dims.matmul_ikj();
                (i * k * j) as u64
            }
            OpKind::SpMV => dims.nnz.unwrap_or(0) + dims.in_dims[0].rows_cols().0 as u64,
            OpKind::DotProduct | OpKind::ArgMax => dims.in_dims[0].elements() as u64,
            OpKind::OuterProduct => dims.out_dim.elements() as u64,
            _ => 1,
        }
    }

    /// Table LUT count for a node at the given PF.
    pub fn lut(&self, kind: OpKind, dims: &NodeDims, pf: u32) -> u64 {
        let c = self.kind_cost(kind);
        let p = pf.max(1) as u64;
        let bits = ceil_log2(Self::work_units(kind, dims) + 1);
        let pe = ceil_div(c.pe_lut * p * self.costs.word_width as u64, 16);
        c.ctrl_lut + c.addr_lut_per_bit * bits + pe + c.bank_lut_per_bit * ceil_log2(p)
    }

    pub fn dsp_per_pe(&self, kind: OpKind) -> u32 {
        self.kind_cost(kind).dsp_per_pe
    }

    pub fn dsp(&self, kind: OpKind, pf: u32) -> u64 {
        self.dsp_per_pe(kind) as u64 * pf as u64
    }

    pub fn has_stencil(&self, name: &str) -> bool {
        self.stencils.contains_key(name)
    }

    /// Fills `{{HOLE}}` markers; `W` is always supplied from the word width.
    pub fn render(&self, name: &str, holes: &[(&str, String)]) -> Result<String, TemplateError> {
        let text = self
            .stencils
            .get(name)
            .ok_or_else(|| TemplateError::MissingTemplate(name.to_string()))?;
        let mut out = text.replace("{{W}}", &self.costs.word_width.to_string());
        for (hole, value) in holes {
            out = out.replace(&format!("{{{{{hole}}}}}"), value);
        }
        if let Some(start) = out.find("{{") {
            let end = out[start..]
                .find("}}")
                .map(|e| start + e + 2)
                .unwrap_or(out.len());
            return Err(TemplateError::UnfilledHole {
                stencil: name.to_string(),
                hole: out[start..end].to_string(),
            });
        }
        Ok(out)
    }

    /// Module parameter bindings for a node, in declaration order.
    pub fn params(&self, kind: OpKind, dims: &NodeDims, pf: u32) -> Vec<(String, u64)> {
        let mut v: Vec<(String, u64)> = match kind {
            OpKind::Source | OpKind::Sink => vec![("DEPTH".into(), dims.out_dim.elements() as u64)],
            OpKind::Sgn => vec![],
            k if k.is_elementwise() => vec![("E".into(), dims.out_dim.elements() as u64)],
            OpKind::MatMul => {
                let (i, k, j) = dims.matmul_ikj();
                vec![
                    ("I".into(), i as u64),
                    ("K".into(), k as u64),
                    ("J".into(), j as u64),
                ]
            }
            OpKind::SpMV => {
                let (r, c) = dims.in_dims[0].rows_cols();
                vec![
                    ("ROWS".into(), r as u64),
                    ("COLS".into(), c as u64),
                    ("NNZ".into(), dims.nnz.unwrap_or(1)),
                ]
            }
            OpKind::DotProduct | OpKind::ArgMax => {
                vec![("N".into(), dims.in_dims[0].elements() as u64)]
            }
            OpKind::OuterProduct => {
                let (i, j) = dims.out_dim.rows_cols();
                vec![("I".into(), i as u64), ("J".into(), j as u64)]
            }
            _ => vec![],
        };
        v.push(("PF".into(), pf as u64));
        v.push(("W".into(), self.costs.word_width as u64));
        v
    }

    pub fn descriptor(&self, kind: OpKind) -> Result<TemplateDescriptor, TemplateError> {
        let name = stencil_name(kind);
        if !self.has_stencil(&name) {
            return Err(TemplateError::MissingTemplate(name));
        }
        Ok(descriptor_for(kind, self.dsp_per_pe(kind)))
    }
}

/// Port list of a kind's template, in declaration order.
pub fn template_ports(kind: OpKind) -> Vec<Port> {
    descriptor_for(kind, 0).ports
}

fn port(name: impl Into<String>, dir: PortDir) -> Port {
    Port {
        name: name.into(),
        dir,
    }
}

fn descriptor_for(kind: OpKind, dsp_per_pe: u32) -> TemplateDescriptor {
    use PortDir::*;
    let module = format!("mf_{}", stencil_name(kind));
    let mut ports = Vec::new();
    let mut params: Vec<String> = match kind {
        OpKind::Source | OpKind::Sink => vec!["DEPTH".into()],
        OpKind::Sgn => vec![],
        k if k.is_elementwise() => vec!["E".into()],
        OpKind::MatMul => vec!["I".into(), "K".into(), "J".into()],
        OpKind::SpMV => vec!["ROWS".into(), "COLS".into(), "NNZ".into()],
        OpKind::DotProduct | OpKind::ArgMax => vec!["N".into()],
        OpKind::OuterProduct => vec!["I".into(), "J".into()],
        _ => vec![],
    };
    params.push("PF".into());
    params.push("W".into());
    if kind == OpKind::Sgn {
        ports.push(port("in0_data", Input));
        ports.push(port("out_data", Output));
    } else {
        for p in ["clk", "rst", "start"] {
            ports.push(port(p, Input));
        }
        ports.push(port("done", Output));
        if kind == OpKind::Source {
            ports.push(port("host_wr_en", Input));
            ports.push(port("host_wr_addr", Input));
            ports.push(port("host_wr_data", Input));
        }
        for k in 0..kind.arity() {
            ports.push(port(format!("in{k}_rd_addr"), Output));
            ports.push(port(format!("in{k}_rd_data"), Input));
            if kind == OpKind::SpMV && k == 0 {
                ports.push(port("in0_cp_rd_addr", Output));
                ports.push(port("in0_cp_rd_data", Input));
            }
        }
        if kind == OpKind::Sink {
            ports.push(port("host_rd_addr", Input));
            ports.push(port("host_rd_data", Output));
        } else {
            ports.push(port("out_wr_en", Output));
            ports.push(port("out_wr_addr", Output));
            ports.push(port("out_wr_data", Output));
        }
    }
    TemplateDescriptor {
        kind,
        module,
        params,
        ports,
        dsp_per_pe,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape::*;

    fn dims(kind: OpKind, ins: Vec<crate::tensor::Shape>, nnz: Option<u64>) -> NodeDims {
        NodeDims::infer(kind, ins, nnz).unwrap()
    }

    #[test]
    fn timing_table_examples() {
        let lib = TemplateLibrary::builtin();
        let add = dims(OpKind::MatAdd, vec![Matrix(8, 8), Matrix(8, 8)], None);
        assert_eq!(lib.latency(OpKind::MatAdd, &add, 1), 68);
        let v64 = dims(OpKind::MatAdd, vec![Vector(64), Vector(64)], None);
        let got: Vec<u64> = [1, 2, 4, 8]
            .iter()
            .map(|&p| lib.latency(OpKind::MatAdd, &v64, p))
            .collect();
        assert_eq!(got, vec![68, 36, 20, 12]);
        let mm = dims(OpKind::MatMul, vec![Matrix(4, 4), Matrix(4, 4)], None);
        assert_eq!(lib.latency(OpKind::MatMul, &mm, 1), 68);
        let sp = dims(OpKind::SpMV, vec![Matrix(16, 16), Vector(16)], Some(40));
        assert_eq!(lib.latency(OpKind::SpMV, &sp, 1), 60);
        let dot = dims(OpKind::DotProduct, vec![Vector(8), Vector(8)], None);
        assert_eq!(lib.latency(OpKind::DotProduct, &dot, 4), 10);
        let s = dims(OpKind::Sgn, vec![Scalar], None);
        assert_eq!(lib.latency(OpKind::Sgn, &s, 1), 1);
    }

    #[test]
    fn fused_formula() {
        let lib = TemplateLibrary::builtin().with_d_stage(2);
        assert_eq!(lib.fused_latency(64, 3, 4), 26);
    }

    #[test]
    fn lut_table_monotone_in_pf() {
        let lib = TemplateLibrary::builtin();
        for kind in OpKind::compute_kinds() {
            let d = match kind {
                OpKind::SpMV => dims(kind, vec![Matrix(16, 32), Vector(32)], Some(100)),
                OpKind::MatMul => dims(kind, vec![Matrix(8, 8), Matrix(8, 8)], None),
                OpKind::DotProduct => dims(kind, vec![Vector(32), Vector(32)], None),
                OpKind::OuterProduct => dims(kind, vec![Vector(8), Vector(8)], None),
                OpKind::ArgMax | OpKind::Exp | OpKind::ReLU | OpKind::Sigmoid | OpKind::TanH => {
                    dims(kind, vec![Vector(32)], None)
                }
                OpKind::Sgn => dims(kind, vec![Scalar], None),
                OpKind::ScalarMatMul => dims(kind, vec![Scalar, Vector(32)], None),
                OpKind::Select => dims(kind, vec![Scalar, Vector(32), Vector(32)], None),
                _ => dims(kind, vec![Vector(32), Vector(32)], None),
            };
            let mut prev = 0;
            for p in 1..=crate::dfg::max_pf(kind, &d) {
                let l = lib.lut(kind, &d, p);
                assert!(l >= prev && l > 0, "{kind} pf {p}");
                prev = l;
            }
        }
    }

    #[test]
    fn every_kind_has_a_stencil_and_render_fills_holes() {
        let lib = TemplateLibrary::builtin();
        for kind in OpKind::ALL {
            let d = lib.descriptor(kind).unwrap();
            assert_eq!(d.module, format!("mf_{}", stencil_name(kind)));
        }
        let text = lib.render("matadd", &[]).unwrap();
        assert!(text.contains("parameter W = 16"));
        assert!(matches!(
            lib.render("tanh", &[]),
            Err(TemplateError::UnfilledHole { .. })
        ));
        assert!(matches!(
            lib.render("nope", &[]),
            Err(TemplateError::MissingTemplate(_))
        ));
    }

    #[test]
    fn builtin_matches_shipped_directory() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        let loaded = TemplateLibrary::load_dir(&dir).unwrap();
        let builtin = TemplateLibrary::builtin();
        assert_eq!(loaded.costs, builtin.costs);
        assert_eq!(loaded.stencils, builtin.stencils);
    }
}
