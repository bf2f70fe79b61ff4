use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfg::{max_pf, NodeDims, OpKind};
use crate::tensor::Shape::{self, *};

/// One measured (kind, dims, pf) point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub kind: OpKind,
    pub dims: NodeDims,
    pub pf: u32,
    pub latency: u64,
    pub lut: u64,
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("training CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("training CSV row {row}: {msg}")]
    Row { row: usize, msg: String },
}

#[derive(Serialize, Deserialize)]
struct Row {
    kind: String,
    dims: String,
    pf: u32,
    latency: u64,
    lut: u64,
}

pub fn write_samples_csv<W: Write>(out: W, samples: &[TrainingSample]) -> Result<(), SampleError> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(Row {
            kind: s.kind.name().into(),
            dims: s.dims.encode(),
            pf: s.pf,
            latency: s.latency,
            lut: s.lut,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<TrainingSample>, SampleError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        let bad = |msg: String| SampleError::Row { row: i + 1, msg };
        let kind: OpKind = row.kind.parse().map_err(bad)?;
        let dims = NodeDims::decode(kind, &row.dims).map_err(bad)?;
        if row.pf == 0 || row.pf > max_pf(kind, &dims) {
            return Err(bad(format!(
                "pf {} outside 1..={}",
                row.pf,
                max_pf(kind, &dims)
            )));
        }
        out.push(TrainingSample {
            kind,
            dims,
            pf: row.pf,
            latency: row.latency,
            lut: row.lut,
        });
    }
    Ok(out)
}

fn d(kind: OpKind, ins: Vec<Shape>, nnz: Option<u64>) -> NodeDims {
    NodeDims::infer(kind, ins, nnz).expect("training grid shapes are valid")
}

/// Dimension sets the cost models are trained on: a sweep over sizes and
/// aspect ratios covering the range the benchmark programs use. Every set
/// admits at least four PF values.
pub fn default_training_grid() -> Vec<(OpKind, NodeDims)> {
    let mut grid = Vec::new();
    let sizes = [8usize, 16, 32, 64];
    let vec_sizes = [8usize, 16, 32, 64, 128, 256, 512, 1024];
    let mat_sizes: Vec<(usize, usize)> =
        sizes.iter().flat_map(|&r| sizes.map(|c| (r, c))).collect();
    let mut push =
        |kind: OpKind, ins: Vec<Shape>, nnz: Option<u64>| grid.push((kind, d(kind, ins, nnz)));
    for kind in OpKind::compute_kinds() {
        match kind {
            OpKind::MatAdd | OpKind::MatSub | OpKind::Hadamard | OpKind::Geq => {
                for &n in &vec_sizes {
                    push(kind, vec![Vector(n), Vector(n)], None);
                }
                for &(r, c) in &mat_sizes {
                    push(kind, vec![Matrix(r, c), Matrix(r, c)], None);
                }
            }
            OpKind::Exp | OpKind::ReLU | OpKind::Sigmoid | OpKind::TanH => {
                for &n in &vec_sizes {
                    push(kind, vec![Vector(n)], None);
                }
                for &(r, c) in &mat_sizes {
                    push(kind, vec![Matrix(r, c)], None);
                }
            }
            OpKind::ScalarMatMul => {
                for &n in &vec_sizes {
                    push(kind, vec![Scalar, Vector(n)], None);
                }
                for &(r, c) in &mat_sizes {
                    push(kind, vec![Scalar, Matrix(r, c)], None);
                }
            }
            OpKind::Select => {
                for &n in &vec_sizes {
                    push(kind, vec![Scalar, Vector(n), Vector(n)], None);
                }
                for &(r, c) in &mat_sizes {
                    push(kind, vec![Scalar, Matrix(r, c), Matrix(r, c)], None);
                }
            }
            OpKind::MatMul => {
                for &(i, k) in &mat_sizes {
                    push(kind, vec![Matrix(i, k), Vector(k)], None);
                }
                for n in [4usize, 8, 16] {
                    push(kind, vec![Matrix(n, n), Matrix(n, n)], None);
                }
                for (k, j) in [(16usize, 8usize), (64, 16)] {
                    push(kind, vec![Vector(k), Matrix(k, j)], None);
                }
            }
            OpKind::SpMV => {
                for rows in [10usize, 16, 25] {
                    for cols in [16usize, 64, 256, 1024] {
                        for density in [0.2, 0.3] {
                            let nnz = ((rows * cols) as f64 * density).round() as u64;
                            push(kind, vec![Matrix(rows, cols), Vector(cols)], Some(nnz));
                        }
                    }
                }
            }
            OpKind::DotProduct => {
                for n in [16usize, 64, 256, 1024] {
                    push(kind, vec![Vector(n), Vector(n)], None);
                }
            }
            OpKind::ArgMax => {
                for n in [8usize, 16, 64, 256] {
                    push(kind, vec![Vector(n)], None);
                }
            }
            OpKind::OuterProduct => {
                for &(i, j) in &mat_sizes {
                    push(kind, vec![Vector(i), Vector(j)], None);
                }
            }
            OpKind::Sgn | OpKind::Source | OpKind::Sink => {}
        }
    }
    grid
}
