#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use matforge::dfg::{lt_clusters, MatrixDfg, NodeId, PfAssignment};
use matforge::tensor::Shape::{self, *};

/// One base variable per shape the generator can ask for.
const POOL: [Shape; 7] = [
    Scalar,
    Vector(2),
    Vector(3),
    Matrix(2, 2),
    Matrix(2, 3),
    Matrix(3, 2),
    Matrix(3, 3),
];

fn decl(shape: Shape) -> String {
    match shape {
        Scalar => "int".into(),
        Vector(n) => format!("int[{n}]"),
        Matrix(r, c) => format!("int[{r}][{c}]"),
    }
}

/// Random well-typed programs in the concrete syntax.
pub struct ProgramGen {
    rng: ChaCha8Rng,
    vars: Vec<(String, Shape)>,
    sparse: Option<(String, usize, usize)>,
    conditionals: bool,
    out: String,
}

impl ProgramGen {
    pub fn new(seed: u64, conditionals: bool) -> Self {
        ProgramGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            vars: Vec::new(),
            sparse: None,
            conditionals,
            out: String::new(),
        }
    }

    fn var_of(&mut self, shape: Shape) -> String {
        let names: Vec<&String> = self
            .vars
            .iter()
            .filter(|(_, s)| *s == shape)
            .map(|(n, _)| n)
            .collect();
        (*names
            .choose(&mut self.rng)
            .expect("pool covers every shape"))
        .clone()
    }

    fn expr(&mut self, shape: Shape, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.var_of(shape);
        }
        let d = depth - 1;
        let pick = self.rng.gen_range(0..8);
        match (pick, shape) {
            (0, _) => {
                let op = ["+", "-", "<*>", ">="][self.rng.gen_range(0..4)];
                format!("({} {op} {})", self.expr(shape, d), self.expr(shape, d))
            }
            (1, _) => {
                let f = ["tanh", "exp", "relu", "sigmoid"][self.rng.gen_range(0..4)];
                format!("{f}({})", self.expr(shape, d))
            }
            (2, Scalar) => format!("sgn({})", self.expr(Scalar, d)),
            (3, Scalar) => {
                let n = self.rng.gen_range(2..=3);
                format!(
                    "dot({}, {})",
                    self.expr(Vector(n), d),
                    self.expr(Vector(n), d)
                )
            }
            (4, Scalar) => {
                let s = [Vector(2), Vector(3), Matrix(2, 3)][self.rng.gen_range(0..3)];
                format!("argmax({})", self.expr(s, d))
            }
            (2 | 3, Vector(_) | Matrix(..)) if self.rng.gen_bool(0.5) => {
                if self.rng.gen_bool(0.5) {
                    format!("({} * {})", self.expr(Scalar, d), self.expr(shape, d))
                } else {
                    format!("({} * {})", self.expr(shape, d), self.expr(Scalar, d))
                }
            }
            (_, Vector(r)) => {
                let k = self.rng.gen_range(2..=3);
                match self.sparse.clone() {
                    Some((s, sr, sc)) if sr == r && self.rng.gen_bool(0.4) => {
                        format!("({s} |*| {})", self.expr(Vector(sc), d))
                    }
                    _ if self.rng.gen_bool(0.5) => {
                        format!(
                            "({} * {})",
                            self.expr(Matrix(r, k), d),
                            self.expr(Vector(k), d)
                        )
                    }
                    _ => format!(
                        "({} * {})",
                        self.expr(Vector(k), d),
                        self.expr(Matrix(k, r), d)
                    ),
                }
            }
            (_, Matrix(r, c)) => {
                if self.rng.gen_bool(0.5) {
                    let k = self.rng.gen_range(2..=3);
                    format!(
                        "({} * {})",
                        self.expr(Matrix(r, k), d),
                        self.expr(Matrix(k, c), d)
                    )
                } else {
                    format!(
                        "outer({}, {})",
                        self.expr(Vector(r), d),
                        self.expr(Vector(c), d)
                    )
                }
            }
            (_, Scalar) => self.var_of(Scalar),
        }
    }

    fn assignment(&mut self, fresh: &mut usize, depth: u32) {
        let shape = POOL[self.rng.gen_range(0..POOL.len())];
        let e = self.expr(shape, depth);
        let target = if self.rng.gen_bool(0.5) {
            self.var_of(shape)
        } else {
            let name = format!("t{fresh}");
            *fresh += 1;
            self.out.push_str(&format!("{} {name};\n", decl(shape)));
            self.vars.push((name.clone(), shape));
            name
        };
        self.out.push_str(&format!("{target} = {e};\n"));
    }

    pub fn program(mut self) -> String {
        for (i, s) in POOL.iter().enumerate() {
            self.out.push_str(&format!("{} v{i};\n", decl(*s)));
            self.vars.push((format!("v{i}"), *s));
        }
        if self.rng.gen_bool(0.5) {
            let (r, c) = (self.rng.gen_range(2..=3), self.rng.gen_range(2..=3));
            let rows: Vec<String> = (0..r)
                .map(|i| {
                    let vals: Vec<String> = (0..c)
                        .map(|j| {
                            if (i + j) % 2 == 0 {
                                self.rng.gen_range(1..9i32).to_string()
                            } else {
                                "0".into()
                            }
                        })
                        .collect();
                    format!("[{}]", vals.join(", "))
                })
                .collect();
            self.out.push_str(&format!(
                "sparse int[{r}][{c}] S;\nS = [{}];\n",
                rows.join(", ")
            ));
            self.sparse = Some(("S".into(), r, c));
        }
        let mut fresh = 0;
        for _ in 0..self.rng.gen_range(1..=5) {
            if self.conditionals && self.rng.gen_bool(0.25) {
                let shape = POOL[self.rng.gen_range(1..POOL.len())];
                let x = self.var_of(shape);
                let cond = self.expr(Scalar, 1);
                let a = self.expr(shape, 2);
                let b = self.expr(shape, 2);
                self.out.push_str(&format!(
                    "if ({cond}) then {{\n    {x} = {a};\n}} else {{\n    {x} = {b};\n}}\n"
                ));
            } else {
                let depth = self.rng.gen_range(1..=3);
                self.assignment(&mut fresh, depth);
            }
        }
        self.out
    }
}

/// A random assignment satisfying every PF constraint.
pub fn random_assignment(dfg: &MatrixDfg, rng: &mut ChaCha8Rng) -> PfAssignment {
    let mut epf: BTreeMap<NodeId, u32> = dfg.node_ids().map(|n| (n, 1)).collect();
    for n in dfg.compute_nodes().filter(|n| !n.is_linear_time()) {
        epf.insert(n.id, rng.gen_range(1..=n.max_pf()));
    }
    for c in lt_clusters(dfg) {
        let cap = c.iter().map(|&n| dfg.node(n).max_pf()).min().unwrap();
        let p = rng.gen_range(1..=cap);
        for n in c {
            epf.insert(n, p);
        }
    }
    PfAssignment::from_epf(dfg, epf)
}
