//! Synthetic benchmark programs and the statistics used to compare
//! optimizer results.
//!
//! The suite has one Bonsai-shaped and one ProtoNN-shaped classifier per
//! dataset. Only the shapes follow the datasets (feature and class counts);
//! weights are runtime inputs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dfg::{DfgBuilder, MatrixDfg, NodeId, OpKind};
use crate::dsl::compile_source;
use crate::tensor::Shape;

pub const SUITE_SCHEMA: &str = "matforge.suite/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: &'static str,
    pub features: usize,
    pub classes: usize,
}

pub const DATASETS: [Dataset; 10] = [
    Dataset {
        name: "cifar-b",
        features: 400,
        classes: 2,
    },
    Dataset {
        name: "cr-b",
        features: 400,
        classes: 2,
    },
    Dataset {
        name: "mnist-b",
        features: 784,
        classes: 2,
    },
    Dataset {
        name: "usps-b",
        features: 256,
        classes: 2,
    },
    Dataset {
        name: "ward-b",
        features: 1000,
        classes: 2,
    },
    Dataset {
        name: "cr-m",
        features: 400,
        classes: 62,
    },
    Dataset {
        name: "curet-m",
        features: 610,
        classes: 61,
    },
    Dataset {
        name: "letter-m",
        features: 16,
        classes: 26,
    },
    Dataset {
        name: "mnist-m",
        features: 784,
        classes: 10,
    },
    Dataset {
        name: "usps-m",
        features: 256,
        classes: 10,
    },
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bonsai,
    ProtoNN,
}

/// Bonsai shape: sparse projection to `proj` dims, then `tree_nodes`
/// score terms `(W_k x̂) ∘ tanh(V_k x̂)` summed and arg-maxed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BonsaiShape {
    pub features: usize,
    pub proj: usize,
    pub classes: usize,
    pub tree_nodes: usize,
    pub nnz: u64,
}

/// ProtoNN shape: sparse projection to `proj` dims, RBF similarity to
/// `prototypes` prototypes, class scores from a label matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtoShape {
    pub features: usize,
    pub proj: usize,
    pub prototypes: usize,
    pub classes: usize,
    pub nnz: u64,
}

fn nnz_for(rows: usize, cols: usize, per_mille: u64) -> u64 {
    ((rows * cols) as u64 * per_mille / 1000).max(1)
}

impl BonsaiShape {
    pub fn for_dataset(d: &Dataset) -> Self {
        let binary = d.classes == 2;
        let proj = if binary { 10 } else { 16 };
        BonsaiShape {
            features: d.features,
            proj,
            classes: d.classes,
            tree_nodes: if binary { 3 } else { 7 },
            nnz: nnz_for(proj, d.features, 200),
        }
    }
}

impl ProtoShape {
    pub fn for_dataset(d: &Dataset) -> Self {
        let binary = d.classes == 2;
        let proj = if binary { 15 } else { 25 };
        ProtoShape {
            features: d.features,
            proj,
            prototypes: if binary { 20 } else { 40 },
            classes: d.classes,
            nnz: nnz_for(proj, d.features, 300),
        }
    }
}

pub fn bonsai_source(name: &str, s: &BonsaiShape) -> String {
    let (d, l) = (s.proj, s.classes);
    let mut t = String::new();
    let _ = writeln!(
        t,
        "// Bonsai-shaped classifier `{name}`: {} features, {l} classes, {} tree nodes",
        s.features, s.tree_nodes
    );
    let _ = writeln!(t, "sparse({}) int[{d}][{}] Z;", s.nnz, s.features);
    let _ = writeln!(t, "int[{}] x;", s.features);
    let _ = writeln!(t, "int[{d}] xh;");
    for k in 0..s.tree_nodes {
        let _ = writeln!(t, "int[{l}][{d}] W{k}; int[{l}][{d}] V{k};");
    }
    let _ = writeln!(t, "int[{l}] s;\nint c;\n");
    let _ = writeln!(t, "xh = Z |*| x;");
    let _ = writeln!(t, "s = (W0 * xh) <*> tanh(V0 * xh);");
    for k in 1..s.tree_nodes {
        let _ = writeln!(t, "s = s + (W{k} * xh) <*> tanh(V{k} * xh);");
    }
    let _ = writeln!(t, "c = argmax(s)");
    t
}

pub fn protonn_source(name: &str, s: &ProtoShape) -> String {
    let (d, m, l) = (s.proj, s.prototypes, s.classes);
    let ones = |n: usize| format!("[{}]", vec!["1"; n].join(", "));
    let mut t = String::new();
    let _ = writeln!(
        t,
        "// ProtoNN-shaped classifier `{name}`: {} features, {l} classes, {m} prototypes",
        s.features
    );
    let _ = writeln!(t, "sparse({}) int[{d}][{}] W;", s.nnz, s.features);
    let _ = writeln!(t, "int[{}] x;", s.features);
    let _ = writeln!(t, "int[{m}][{d}] B;\nint[{l}][{m}] Y;\nint g;");
    let _ = writeln!(t, "int[{m}] onesM;\nint[{d}] onesD;");
    let _ = writeln!(t, "int[{d}] wx;\nint[{m}][{d}] R;\nint[{m}][{d}] Dm;");
    let _ = writeln!(t, "int[{m}] dist;\nint[{m}] k;\nint[{l}] y;\nint c;\n");
    let _ = writeln!(t, "onesM = {};", ones(m));
    let _ = writeln!(t, "onesD = {};", ones(d));
    let _ = writeln!(t, "wx = W |*| x;");
    let _ = writeln!(t, "R = outer(onesM, wx);");
    let _ = writeln!(t, "Dm = B - R;");
    let _ = writeln!(t, "dist = (Dm <*> Dm) * onesD;");
    let _ = writeln!(t, "k = exp(g * dist);");
    let _ = writeln!(t, "y = Y * k;");
    let _ = writeln!(t, "c = argmax(y)");
    t
}

/// One benchmark program of the suite.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub name: String,
    pub family: Family,
    pub dataset: String,
    pub features: usize,
    pub classes: usize,
    pub spmv_nnz: u64,
    pub file: String,
    pub compute_nodes: usize,
    #[serde(skip)]
    pub source: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub schema: String,
    pub cases: Vec<SuiteCase>,
}

/// The twenty suite programs, Bonsai cases first, each family in
/// dataset order.
pub fn suite() -> Vec<SuiteCase> {
    let mut out = Vec::new();
    for family in [Family::Bonsai, Family::ProtoNN] {
        for d in &DATASETS {
            let (prefix, source, nnz) = match family {
                Family::Bonsai => {
                    let s = BonsaiShape::for_dataset(d);
                    (
                        "bonsai",
                        bonsai_source(&format!("bonsai-{}", d.name), &s),
                        s.nnz,
                    )
                }
                Family::ProtoNN => {
                    let s = ProtoShape::for_dataset(d);
                    (
                        "protonn",
                        protonn_source(&format!("protonn-{}", d.name), &s),
                        s.nnz,
                    )
                }
            };
            let name = format!("{prefix}-{}", d.name);
            let compute_nodes = compile_source(&source)
                .expect("suite programs compile")
                .dfg
                .compute_nodes()
                .count();
            out.push(SuiteCase {
                file: format!("{name}.mfd"),
                name,
                family,
                dataset: d.name.to_string(),
                features: d.features,
                classes: d.classes,
                spmv_nnz: nnz,
                compute_nodes,
                source,
            });
        }
    }
    out
}

/// Writes every suite program plus `manifest.json` into `dir`.
pub fn write_suite(dir: &Path) -> io::Result<SuiteManifest> {
    fs::create_dir_all(dir)?;
    let cases = suite();
    for c in &cases {
        fs::write(dir.join(&c.file), &c.source)?;
    }
    let m = SuiteManifest {
        schema: SUITE_SCHEMA.to_string(),
        cases,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&m)? + "\n",
    )?;
    Ok(m)
}

/// Reads `manifest.json` from a suite directory together with each
/// program's source text.
pub fn read_suite(dir: &Path) -> io::Result<SuiteManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let mut m: SuiteManifest = serde_json::from_str(&text)?;
    if m.schema != SUITE_SCHEMA {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported suite schema `{}`", m.schema),
        ));
    }
    for c in &mut m.cases {
        c.source = fs::read_to_string(dir.join(&c.file))?;
    }
    Ok(m)
}

/// Random small DFG over vectors and matrices with at most `max_compute`
/// compute nodes, all with max PF at most `max_pf_cap`.
pub fn random_dfg(seed: u64, max_compute: usize, max_pf_cap: u32) -> MatrixDfg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(g) = try_random_dfg(&mut rng, max_compute, max_pf_cap) {
            return g;
        }
    }
}

fn try_random_dfg(rng: &mut ChaCha8Rng, max_compute: usize, cap: u32) -> Option<MatrixDfg> {
    let cap = cap.max(2) as usize;
    let mut b = DfgBuilder::new();
    let mut pool: Vec<NodeId> = Vec::new();
    let n_src = rng.gen_range(1..=2);
    for i in 0..n_src {
        let shape = if rng.gen_bool(0.7) {
            Shape::Vector(rng.gen_range(2..=cap))
        } else {
            Shape::Matrix(2, rng.gen_range(2..=cap / 2))
        };
        pool.push(b.source(format!("x{i}"), shape));
    }
    let n_ops = rng.gen_range(1..=max_compute.max(1));
    let mut made = 0;
    let mut fresh = n_src;
    for _ in 0..n_ops * 8 {
        if made == n_ops {
            break;
        }
        let a = *pool.choose(rng)?;
        let sa = b.shape(a)?;
        let kinds = [
            OpKind::MatAdd,
            OpKind::MatSub,
            OpKind::Hadamard,
            OpKind::ReLU,
            OpKind::TanH,
            OpKind::Exp,
            OpKind::DotProduct,
            OpKind::ArgMax,
            OpKind::MatMul,
            OpKind::OuterProduct,
            OpKind::ScalarMatMul,
        ];
        let kind = *kinds.choose(rng)?;
        let partner =
            |b: &mut DfgBuilder, rng: &mut ChaCha8Rng, want: Shape, fresh: &mut usize| -> NodeId {
                let same: Vec<NodeId> = pool
                    .iter()
                    .copied()
                    .filter(|&p| b.shape(p) == Some(want))
                    .collect();
                if !same.is_empty() && rng.gen_bool(0.6) {
                    *same.choose(rng).unwrap()
                } else {
                    *fresh += 1;
                    b.source(format!("x{}", *fresh - 1), want)
                }
            };
        let ins = match (kind, sa) {
            (OpKind::MatAdd | OpKind::MatSub | OpKind::Hadamard, s) if s != Shape::Scalar => {
                vec![a, partner(&mut b, rng, s, &mut fresh)]
            }
            (OpKind::ReLU | OpKind::TanH | OpKind::Exp, s) if s != Shape::Scalar => vec![a],
            (OpKind::DotProduct, Shape::Vector(n)) => {
                vec![a, partner(&mut b, rng, Shape::Vector(n), &mut fresh)]
            }
            (OpKind::ArgMax, s) if s != Shape::Scalar => vec![a],
            (OpKind::MatMul, Shape::Matrix(_, k)) => {
                vec![a, partner(&mut b, rng, Shape::Vector(k), &mut fresh)]
            }
            (OpKind::OuterProduct, Shape::Vector(n)) if n <= 4 => {
                vec![a, partner(&mut b, rng, Shape::Vector(2), &mut fresh)]
            }
            (OpKind::ScalarMatMul, Shape::Scalar) => {
                let others: Vec<NodeId> = pool
                    .iter()
                    .copied()
                    .filter(|&p| b.shape(p) != Some(Shape::Scalar))
                    .collect();
                vec![a, *others.choose(rng)?]
            }
            _ => continue,
        };
        let n = b.op(kind, &ins, None).ok()?;
        pool.push(n);
        made += 1;
    }
    if made == 0 {
        return None;
    }
    let dangling: Vec<NodeId> = pool.iter().copied().filter(|&p| b.fanout(p) == 0).collect();
    for (i, p) in dangling.into_iter().enumerate() {
        b.sink(format!("y{i}"), p).ok()?;
    }
    let g = b.build().ok()?;
    let ok = g.compute_nodes().all(|n| n.max_pf() as usize <= cap);
    ok.then_some(g)
}

/// Kendall rank correlation with tie correction (tau-b). Returns 1 when
/// both sequences are constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            match (a, b) {
                (0, 0) => {}
                (0, _) => tx += 1,
                (_, 0) => ty += 1,
                _ if a == b => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n1 = (conc + disc + tx) as f64;
    let n2 = (conc + disc + ty) as f64;
    if n1 == 0.0 && n2 == 0.0 {
        return 1.0;
    }
    if n1 == 0.0 || n2 == 0.0 {
        return 0.0;
    }
    (conc - disc) as f64 / (n1 * n2).sqrt()
}

pub fn geomean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_twenty_compiling_cases() {
        let s = suite();
        assert_eq!(s.len(), 20);
        let b = s.iter().find(|c| c.name == "bonsai-usps-b").unwrap();
        // SpMV + 3 × (2 MatMul, TanH, Hadamard) + 2 MatAdd + ArgMax
        assert_eq!(b.compute_nodes, 1 + 3 * 4 + 2 + 1);
        let p = s.iter().find(|c| c.family == Family::ProtoNN).unwrap();
        assert_eq!(p.compute_nodes, 9);
    }

    #[test]
    fn suite_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_suite(dir.path()).unwrap();
        let r = read_suite(dir.path()).unwrap();
        assert_eq!(m.cases, r.cases);
    }

    #[test]
    fn random_dfgs_respect_caps() {
        for seed in 0..40 {
            let g = random_dfg(seed, 5, 8);
            let c = g.compute_nodes().count();
            assert!((1..=5).contains(&c));
            assert!(g.compute_nodes().all(|n| n.max_pf() <= 8));
        }
    }

    #[test]
    fn tau_b_reference_values() {
        assert_eq!(kendall_tau_b(&[1., 2., 3.], &[10., 20., 30.]), 1.0);
        assert_eq!(kendall_tau_b(&[1., 2., 3.], &[3., 2., 1.]), -1.0);
        // x = (1,2,2,3), y = (1,3,2,4): 5 concordant pairs, one tied in x only
        let t = kendall_tau_b(&[1., 2., 2., 3.], &[1., 3., 2., 4.]);
        assert!((t - 5.0 / (6.0f64 * 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn geomean_of_powers() {
        assert!((geomean(&[1.0, 4.0, 16.0]) - 4.0).abs() < 1e-12);
    }
}
