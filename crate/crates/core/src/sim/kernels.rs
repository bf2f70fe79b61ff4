//! Lane-structured functional kernels mirroring the templates: each walks
//! its work in chunks of `pf` the way the hardware does.

use crate::dfg::{NodeDims, OpKind};
use crate::templates::{activation, activation_table};
use crate::tensor::TensorValue;

fn chunks(n: usize, pf: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n)
        .step_by(pf.max(1))
        .map(move |base| (base, (base + pf).min(n)))
}

fn elementwise(out: &mut [i16], pf: usize, f: impl Fn(usize) -> i16) {
    let n = out.len();
    for (lo, hi) in chunks(n, pf) {
        for (i, slot) in out[lo..hi].iter_mut().enumerate() {
            *slot = f(lo + i);
        }
    }
}

/// Column-by-column product; within a column the `I·K` multiply-accumulates
/// are issued `pf` at a time.
fn matmul(a: &TensorValue, b: &TensorValue, dims: &NodeDims, pf: usize) -> Vec<i16> {
    let (i_n, k_n, j_n) = dims.matmul_ikj();
    let mut out = vec![0i16; i_n * j_n];
    for j in 0..j_n {
        let mut acc = vec![0i16; i_n];
        for (lo, hi) in chunks(i_n * k_n, pf) {
            for pos in lo..hi {
                let (i, k) = (pos / k_n, pos % k_n);
                let prod = a.data[i * k_n + k].wrapping_mul(b.data[k * j_n + j]);
                acc[i] = acc[i].wrapping_add(prod);
            }
        }
        for i in 0..i_n {
            out[i * j_n + j] = acc[i];
        }
    }
    out
}

/// Compressed sparse column form of a dense matrix.
pub struct Csc {
    pub vals: Vec<i16>,
    pub rows: Vec<usize>,
    pub colptr: Vec<usize>,
}

impl Csc {
    pub fn from_dense(m: &TensorValue) -> Csc {
        let (r_n, c_n) = m.shape.rows_cols();
        let mut csc = Csc {
            vals: vec![],
            rows: vec![],
            colptr: vec![0],
        };
        for c in 0..c_n {
            for r in 0..r_n {
                let v = m.at(r, c);
                if v != 0 {
                    csc.vals.push(v);
                    csc.rows.push(r);
                }
            }
            csc.colptr.push(csc.vals.len());
        }
        csc
    }

    fn col_of(&self, nz: usize) -> usize {
        self.colptr.partition_point(|&p| p <= nz) - 1
    }
}

fn spmv(m: &TensorValue, x: &TensorValue, pf: usize) -> Vec<i16> {
    let csc = Csc::from_dense(m);
    let rows = m.shape.rows_cols().0;
    let mut acc = vec![0i16; rows];
    for (lo, hi) in chunks(csc.vals.len(), pf) {
        for nz in lo..hi {
            let c = csc.col_of(nz);
            acc[csc.rows[nz]] =
                acc[csc.rows[nz]].wrapping_add(csc.vals[nz].wrapping_mul(x.data[c]));
        }
    }
    acc
}

fn dot(a: &TensorValue, b: &TensorValue, pf: usize) -> i16 {
    let mut part = vec![0i16; pf.max(1)];
    for (lo, hi) in chunks(a.data.len(), pf) {
        for (lane, i) in (lo..hi).enumerate() {
            part[lane] = part[lane].wrapping_add(a.data[i].wrapping_mul(b.data[i]));
        }
    }
    part.iter().fold(0i16, |s, &p| s.wrapping_add(p))
}

fn argmax(a: &TensorValue, pf: usize) -> i16 {
    let lanes = pf.max(1);
    let mut best: Vec<Option<(i16, usize)>> = vec![None; lanes];
    for (lo, hi) in chunks(a.data.len(), lanes) {
        for (lane, i) in (lo..hi).enumerate() {
            let v = a.data[i];
            if best[lane].is_none_or(|(bv, _)| v > bv) {
                best[lane] = Some((v, i));
            }
        }
    }
    let mut top: Option<(i16, usize)> = None;
    for (v, i) in best.into_iter().flatten() {
        if top.is_none_or(|(tv, ti)| v > tv || (v == tv && i < ti)) {
            top = Some((v, i));
        }
    }
    top.map(|(_, i)| i as i16).unwrap_or(0)
}

/// Evaluates one node on concrete inputs with `pf` lanes.
pub fn eval(kind: OpKind, dims: &NodeDims, ins: &[&TensorValue], pf: u32) -> TensorValue {
    let pf = pf.max(1) as usize;
    let shape = dims.out_dim;
    let mut out = vec![0i16; shape.elements()];
    match kind {
        OpKind::MatAdd => elementwise(&mut out, pf, |i| {
            ins[0].data[i].wrapping_add(ins[1].data[i])
        }),
        OpKind::MatSub => elementwise(&mut out, pf, |i| {
            ins[0].data[i].wrapping_sub(ins[1].data[i])
        }),
        OpKind::Hadamard => elementwise(&mut out, pf, |i| {
            ins[0].data[i].wrapping_mul(ins[1].data[i])
        }),
        OpKind::Geq => elementwise(&mut out, pf, |i| (ins[0].data[i] >= ins[1].data[i]) as i16),
        OpKind::ScalarMatMul => {
            let s = ins[0].data[0];
            elementwise(&mut out, pf, |i| s.wrapping_mul(ins[1].data[i]))
        }
        OpKind::Select => {
            let pick = if ins[0].data[0] != 0 { ins[1] } else { ins[2] };
            elementwise(&mut out, pf, |i| pick.data[i])
        }
        OpKind::ReLU => elementwise(&mut out, pf, |i| ins[0].data[i].max(0)),
        OpKind::TanH | OpKind::Sigmoid | OpKind::Exp => {
            let table = activation_table(kind);
            elementwise(&mut out, pf, |i| activation(&table, ins[0].data[i]))
        }
        OpKind::Sgn => out[0] = ins[0].data[0].signum(),
        OpKind::MatMul => out = matmul(ins[0], ins[1], dims, pf),
        OpKind::SpMV => out = spmv(ins[0], ins[1], pf),
        OpKind::DotProduct => out[0] = dot(ins[0], ins[1], pf),
        OpKind::ArgMax => out[0] = argmax(ins[0], pf),
        OpKind::OuterProduct => {
            let j_n = ins[1].data.len();
            elementwise(&mut out, pf, |i| {
                ins[0].data[i / j_n].wrapping_mul(ins[1].data[i % j_n])
            })
        }
        OpKind::Sink => out.copy_from_slice(&ins[0].data),
        OpKind::Source => unreachable!("sources are bound, not evaluated"),
    }
    TensorValue { shape, data: out }
}
