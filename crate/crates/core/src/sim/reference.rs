//! Independent straight-line evaluator used to cross-check the simulator.
//! Dense loops throughout; sparse operands are treated as ordinary matrices.

use std::collections::BTreeMap;

use super::{bind_sources, Inputs, SimError};
use crate::dfg::{MatrixDfg, NodeId, OpKind};
use crate::tensor::TensorValue;

fn idx2(cols: usize, r: usize, c: usize) -> usize {
    r * cols + c
}

fn table_lookup(kind: OpKind, x: i16) -> i16 {
    // Same indexing rule as the hardware tables, recomputed here from f.
    let i = ((x as i32) >> 4).clamp(-128, 127);
    let t = i as f64 / 16.0;
    let y = match kind {
        OpKind::TanH => t.tanh(),
        OpKind::Sigmoid => 1.0 / (1.0 + (-t).exp()),
        OpKind::Exp => t.exp(),
        _ => unreachable!(),
    };
    (y * 256.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Evaluates every sink of the DFG in topological order.
pub fn reference_eval(
    dfg: &MatrixDfg,
    inputs: &Inputs,
) -> Result<BTreeMap<String, TensorValue>, SimError> {
    let mut vals: BTreeMap<NodeId, TensorValue> = bind_sources(dfg, inputs, false)?;
    let mut outputs = BTreeMap::new();
    for &id in dfg.topo_order() {
        let n = dfg.node(id);
        if n.kind == OpKind::Source {
            continue;
        }
        let ins: Vec<&TensorValue> = dfg.predecessors(id).map(|p| &vals[&p]).collect();
        let shape = n.dims.out_dim;
        let e = shape.elements();
        let data: Vec<i16> = match n.kind {
            OpKind::MatAdd => (0..e)
                .map(|i| ins[0].data[i].wrapping_add(ins[1].data[i]))
                .collect(),
            OpKind::MatSub => (0..e)
                .map(|i| ins[0].data[i].wrapping_sub(ins[1].data[i]))
                .collect(),
            OpKind::Hadamard => (0..e)
                .map(|i| ins[0].data[i].wrapping_mul(ins[1].data[i]))
                .collect(),
            OpKind::Geq => (0..e)
                .map(|i| i16::from(ins[0].data[i] >= ins[1].data[i]))
                .collect(),
            OpKind::ScalarMatMul => ins[1]
                .data
                .iter()
                .map(|&v| v.wrapping_mul(ins[0].data[0]))
                .collect(),
            OpKind::Select => {
                if ins[0].data[0] != 0 {
                    ins[1].data.clone()
                } else {
                    ins[2].data.clone()
                }
            }
            OpKind::ReLU => ins[0]
                .data
                .iter()
                .map(|&v| if v < 0 { 0 } else { v })
                .collect(),
            OpKind::TanH | OpKind::Sigmoid | OpKind::Exp => ins[0]
                .data
                .iter()
                .map(|&v| table_lookup(n.kind, v))
                .collect(),
            OpKind::Sgn => vec![match ins[0].data[0] {
                v if v > 0 => 1,
                0 => 0,
                _ => -1,
            }],
            OpKind::MatMul | OpKind::SpMV => {
                let (i_n, k_n, j_n) = n.dims.matmul_ikj();
                let mut out = vec![0i16; i_n * j_n];
                for i in 0..i_n {
                    for j in 0..j_n {
                        let mut s = 0i16;
                        for k in 0..k_n {
                            s = s.wrapping_add(
                                ins[0].data[idx2(k_n, i, k)]
                                    .wrapping_mul(ins[1].data[idx2(j_n, k, j)]),
                            );
                        }
                        out[idx2(j_n, i, j)] = s;
                    }
                }
                out
            }
            OpKind::DotProduct => vec![ins[0]
                .data
                .iter()
                .zip(&ins[1].data)
                .fold(0i16, |s, (&x, &y)| s.wrapping_add(x.wrapping_mul(y)))],
            OpKind::ArgMax => {
                let mut best = 0usize;
                for (i, &v) in ins[0].data.iter().enumerate() {
                    if v > ins[0].data[best] {
                        best = i;
                    }
                }
                vec![best as i16]
            }
            OpKind::OuterProduct => {
                let mut out = Vec::with_capacity(e);
                for &x in &ins[0].data {
                    for &y in &ins[1].data {
                        out.push(x.wrapping_mul(y));
                    }
                }
                out
            }
            OpKind::Sink => ins[0].data.clone(),
            OpKind::Source => unreachable!(),
        };
        let v = TensorValue { shape, data };
        if n.kind == OpKind::Sink {
            outputs.insert(n.name.clone().unwrap_or_else(|| id.to_string()), v.clone());
        }
        vals.insert(id, v);
    }
    Ok(outputs)
}
