use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Shape;

/// Matrix operations understood by the template library.
///
/// `Geq` is the elementwise `>=` comparison from the source grammar; it
/// produces `1`/`0` and is a linear-time node like the other elementwise ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    SpMV,
    MatAdd,
    MatSub,
    ScalarMatMul,
    Hadamard,
    DotProduct,
    OuterProduct,
    MatMul,
    Exp,
    ReLU,
    Sigmoid,
    TanH,
    Sgn,
    Geq,
    ArgMax,
    Select,
    Source,
    Sink,
}

/// Execution-time class of a node, which decides the PF constraints it obeys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    LinearTime,
    NonLinearTime,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::SpMV,
        OpKind::MatAdd,
        OpKind::MatSub,
        OpKind::ScalarMatMul,
        OpKind::Hadamard,
        OpKind::DotProduct,
        OpKind::OuterProduct,
        OpKind::MatMul,
        OpKind::Exp,
        OpKind::ReLU,
        OpKind::Sigmoid,
        OpKind::TanH,
        OpKind::Sgn,
        OpKind::Geq,
        OpKind::ArgMax,
        OpKind::Select,
        OpKind::Source,
        OpKind::Sink,
    ];

    /// Kinds that map to a compute template (everything but the I/O boundary).
    pub fn compute_kinds() -> impl Iterator<Item = OpKind> {
        Self::ALL.into_iter().filter(|k| !k.is_boundary())
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::SpMV => "SpMV",
            OpKind::MatAdd => "MatAdd",
            OpKind::MatSub => "MatSub",
            OpKind::ScalarMatMul => "ScalarMatMul",
            OpKind::Hadamard => "Hadamard",
            OpKind::DotProduct => "DotProduct",
            OpKind::OuterProduct => "OuterProduct",
            OpKind::MatMul => "MatMul",
            OpKind::Exp => "Exp",
            OpKind::ReLU => "ReLU",
            OpKind::Sigmoid => "Sigmoid",
            OpKind::TanH => "TanH",
            OpKind::Sgn => "Sgn",
            OpKind::Geq => "Geq",
            OpKind::ArgMax => "ArgMax",
            OpKind::Select => "Select",
            OpKind::Source => "Source",
            OpKind::Sink => "Sink",
        }
    }

    /// Source and Sink model the input and output memories, not computation.
    pub fn is_boundary(&self) -> bool {
        matches!(self, OpKind::Source | OpKind::Sink)
    }

    /// Elementwise ops stream one output element per lane per cycle.
    pub fn is_elementwise(&self) -> bool {
        matches!(
            self,
            OpKind::MatAdd
                | OpKind::MatSub
                | OpKind::ScalarMatMul
                | OpKind::Hadamard
                | OpKind::Exp
                | OpKind::ReLU
                | OpKind::Sigmoid
                | OpKind::TanH
                | OpKind::Geq
                | OpKind::Select
        )
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::Source => 0,
            OpKind::Exp
            | OpKind::ReLU
            | OpKind::Sigmoid
            | OpKind::TanH
            | OpKind::Sgn
            | OpKind::ArgMax
            | OpKind::Sink => 1,
            OpKind::Select => 3,
            _ => 2,
        }
    }

    /// Output shape for the given input shapes.
    pub fn infer_output(&self, ins: &[Shape], nnz: Option<u64>) -> Result<Shape, KindShapeError> {
        use Shape::*;
        if ins.len() != self.arity() {
            return Err(KindShapeError::Arity {
                kind: *self,
                expected: self.arity(),
                found: ins.len(),
            });
        }
        if nnz.is_some() != (*self == OpKind::SpMV) {
            return Err(KindShapeError::Nnz(*self));
        }
        let bad = || KindShapeError::Mismatch {
            kind: *self,
            inputs: ins.to_vec(),
        };
        match self {
            OpKind::MatAdd | OpKind::MatSub | OpKind::Hadamard | OpKind::Geq => {
                if ins[0] == ins[1] {
                    Ok(ins[0])
                } else {
                    Err(bad())
                }
            }
            OpKind::ScalarMatMul => match ins[0] {
                Scalar => Ok(ins[1]),
                _ => Err(bad()),
            },
            OpKind::MatMul => match (ins[0], ins[1]) {
                (Matrix(_, k1), Matrix(k2, j)) if k1 == k2 => match ins[0] {
                    Matrix(i, _) => Ok(Matrix(i, j)),
                    _ => unreachable!(),
                },
                (Matrix(i, k1), Vector(k2)) if k1 == k2 => Ok(Vector(i)),
                (Vector(k1), Matrix(k2, j)) if k1 == k2 => Ok(Vector(j)),
                _ => Err(bad()),
            },
            OpKind::SpMV => match (ins[0], ins[1]) {
                (Matrix(r, c), Vector(n)) if c == n => {
                    let nnz = nnz.unwrap_or(0);
                    if nnz == 0 || nnz > (r * c) as u64 {
                        Err(KindShapeError::NnzRange {
                            nnz,
                            rows: r,
                            cols: c,
                        })
                    } else {
                        Ok(Vector(r))
                    }
                }
                _ => Err(bad()),
            },
            OpKind::DotProduct => match (ins[0], ins[1]) {
                (Vector(a), Vector(b)) if a == b => Ok(Scalar),
                _ => Err(bad()),
            },
            OpKind::OuterProduct => match (ins[0], ins[1]) {
                (Vector(a), Vector(b)) => Ok(Matrix(a, b)),
                _ => Err(bad()),
            },
            OpKind::Exp | OpKind::ReLU | OpKind::Sigmoid | OpKind::TanH => Ok(ins[0]),
            OpKind::Sgn => match ins[0] {
                Scalar => Ok(Scalar),
                _ => Err(bad()),
            },
            OpKind::ArgMax => match ins[0] {
                Scalar => Err(bad()),
                _ => Ok(Scalar),
            },
            OpKind::Select => {
                if ins[0] == Scalar && ins[1] == ins[2] {
                    Ok(ins[1])
                } else {
                    Err(bad())
                }
            }
            OpKind::Sink => Ok(ins[0]),
            OpKind::Source => Err(KindShapeError::SourceShape),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown operation kind `{s}`"))
    }
}

/// Linear-time vs non-linear-time split of every kind.
///
/// Source and Sink are memories whose banking is fixed at load time, so they
/// impose no relation between edge PFs and count as non-linear-time.
pub fn classify(kind: OpKind, _dims: &[Shape]) -> NodeClass {
    match kind {
        OpKind::MatAdd
        | OpKind::MatSub
        | OpKind::ScalarMatMul
        | OpKind::Hadamard
        | OpKind::Exp
        | OpKind::ReLU
        | OpKind::Sigmoid
        | OpKind::TanH
        | OpKind::Sgn
        | OpKind::Geq
        | OpKind::Select => NodeClass::LinearTime,
        OpKind::SpMV
        | OpKind::MatMul
        | OpKind::DotProduct
        | OpKind::OuterProduct
        | OpKind::ArgMax
        | OpKind::Source
        | OpKind::Sink => NodeClass::NonLinearTime,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KindShapeError {
    #[error("{kind} takes {expected} inputs, got {found}")]
    Arity {
        kind: OpKind,
        expected: usize,
        found: usize,
    },
    #[error("{kind} cannot combine shapes {inputs:?}")]
    Mismatch { kind: OpKind, inputs: Vec<Shape> },
    #[error("nnz annotation is required on SpMV and forbidden elsewhere (found on {0})")]
    Nnz(OpKind),
    #[error("nnz {nnz} outside 1..={} for a {rows}x{cols} matrix", rows * cols)]
    NnzRange { nnz: u64, rows: usize, cols: usize },
    #[error("source shapes are declared, not inferred")]
    SourceShape,
}

/// Operand dimensions of a node: what the templates are parameterized by.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeDims {
    pub in_dims: Vec<Shape>,
    pub out_dim: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnz: Option<u64>,
}

impl NodeDims {
    pub fn infer(
        kind: OpKind,
        in_dims: Vec<Shape>,
        nnz: Option<u64>,
    ) -> Result<Self, KindShapeError> {
        let out_dim = kind.infer_output(&in_dims, nnz)?;
        Ok(NodeDims {
            in_dims,
            out_dim,
            nnz,
        })
    }

    /// (I, K, J) for `A[I][K] * B[K][J]`, with vectors taken as a row on the
    /// left and a column on the right.
    pub fn matmul_ikj(&self) -> (usize, usize, usize) {
        let (i, k) = match self.in_dims[0] {
            Shape::Vector(n) => (1, n),
            s => s.rows_cols(),
        };
        let j = match self.in_dims[1] {
            Shape::Vector(_) => 1,
            s => s.rows_cols().1,
        };
        (i, k, j)
    }

    /// Flat numeric signature used to match nodes against trained cost classes.
    pub fn signature(&self) -> Vec<u64> {
        let mut sig: Vec<u64> = self
            .in_dims
            .iter()
            .flat_map(|s| s.dims())
            .map(|d| d as u64)
            .collect();
        if let Some(n) = self.nnz {
            sig.push(n);
        }
        sig
    }

    /// Compact text form used in CSV files, e.g. `16x16@40;16`.
    pub fn encode(&self) -> String {
        let parts: Vec<String> = self
            .in_dims
            .iter()
            .enumerate()
            .map(|(slot, s)| {
                let mut t = match s {
                    Shape::Scalar => "s".to_string(),
                    Shape::Vector(n) => n.to_string(),
                    Shape::Matrix(r, c) => format!("{r}x{c}"),
                };
                if slot == 0 {
                    if let Some(n) = self.nnz {
                        t.push_str(&format!("@{n}"));
                    }
                }
                t
            })
            .collect();
        parts.join(";")
    }

    pub fn decode(kind: OpKind, text: &str) -> Result<Self, String> {
        let mut nnz = None;
        let mut in_dims = Vec::new();
        if !text.is_empty() {
            for part in text.split(';') {
                let part = match part.split_once('@') {
                    Some((shape, n)) => {
                        nnz = Some(n.parse::<u64>().map_err(|e| format!("nnz `{n}`: {e}"))?);
                        shape
                    }
                    None => part,
                };
                let dims: Vec<usize> = if part == "s" {
                    vec![]
                } else {
                    part.split('x')
                        .map(|d| d.parse::<usize>().map_err(|e| format!("dim `{d}`: {e}")))
                        .collect::<Result<_, _>>()?
                };
                in_dims.push(Shape::from_dims(&dims).map_err(|e| e.to_string())?);
            }
        }
        NodeDims::infer(kind, in_dims, nnz).map_err(|e| e.to_string())
    }
}

/// Upper bound on useful PEs for a node: beyond it the template has no more
/// independent work to hand out.
pub fn max_pf(kind: OpKind, dims: &NodeDims) -> u32 {
    let clamp = |n: usize| n.clamp(1, u32::MAX as usize) as u32;
    match kind {
        OpKind::Source | OpKind::Sink | OpKind::Sgn => 1,
        k if k.is_elementwise() => clamp(dims.out_dim.elements()),
        OpKind::MatMul => {
            let (i, k, j) = dims.matmul_ikj();
            clamp((i * j).min(i * k))
        }
        OpKind::SpMV => {
            let cols = dims.in_dims[0].rows_cols().1;
            clamp(cols.min(dims.nnz.unwrap_or(1) as usize))
        }
        OpKind::DotProduct | OpKind::ArgMax => clamp(dims.in_dims[0].elements()),
        OpKind::OuterProduct => clamp(dims.out_dim.elements()),
        _ => 1,
    }
}
