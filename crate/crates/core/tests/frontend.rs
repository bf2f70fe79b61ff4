mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::ProgramGen;
use matforge::dfg::{DfgBuilder, MatrixDfg, OpKind};
use matforge::dsl::{
    compile_source, lower_with_map, parse, pretty_print, type_check, Expr, ExprKind, FrontendError,
    Stmt, StmtKind,
};
use matforge::tensor::Shape::*;

/// Brute-force isomorphism over kind-preserving bijections; enough for the
/// handful of nodes in hand-built examples.
fn isomorphic(a: &MatrixDfg, b: &MatrixDfg) -> bool {
    fn edges(g: &MatrixDfg) -> BTreeSet<(usize, usize, usize)> {
        let pos: BTreeMap<_, _> = g.node_ids().enumerate().map(|(i, n)| (n, i)).collect();
        g.edges()
            .iter()
            .map(|e| (pos[&e.producer], pos[&e.consumer], e.slot))
            .collect()
    }
    if a.len() != b.len() || a.edges().len() != b.edges().len() {
        return false;
    }
    let ka: Vec<OpKind> = a.nodes().map(|n| n.kind).collect();
    let kb: Vec<OpKind> = b.nodes().map(|n| n.kind).collect();
    let (ea, eb) = (edges(a), edges(b));
    let n = ka.len();
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    fn search(
        i: usize,
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
        ka: &[OpKind],
        kb: &[OpKind],
        ea: &BTreeSet<(usize, usize, usize)>,
        eb: &BTreeSet<(usize, usize, usize)>,
    ) -> bool {
        if i == ka.len() {
            return ea
                .iter()
                .all(|&(p, c, s)| eb.contains(&(map[p], map[c], s)));
        }
        for j in 0..kb.len() {
            if !used[j] && ka[i] == kb[j] {
                used[j] = true;
                map[i] = j;
                if search(i + 1, map, used, ka, kb, ea, eb) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    search(0, &mut map, &mut used, &ka, &kb, &ea, &eb)
}

#[test]
fn product_of_products_lowers_to_a_diamond() {
    let src = "int[4][4] Z; int[4][4] A; int[4][4] B; int[4][4] P; P = (Z*A)*(Z*B)";
    let got = compile_source(src).unwrap().dfg;

    let mut b = DfgBuilder::new();
    let z = b.source("Z", Matrix(4, 4));
    let a = b.source("A", Matrix(4, 4));
    let bb = b.source("B", Matrix(4, 4));
    let za = b.op(OpKind::MatMul, &[z, a], None).unwrap();
    let zb = b.op(OpKind::MatMul, &[z, bb], None).unwrap();
    let p = b.op(OpKind::MatMul, &[za, zb], None).unwrap();
    b.sink("P", p).unwrap();
    let want = b.build().unwrap();

    assert!(isomorphic(&got, &want), "{}", got.to_json());
    let z_id = got
        .sources()
        .find(|n| n.name.as_deref() == Some("Z"))
        .unwrap()
        .id;
    assert_eq!(got.successors(z_id).count(), 2);
}

#[test]
fn diamond_oracle_rejects_a_chain() {
    let chain = compile_source("int[4][4] Z; int[4][4] A; int[4][4] P; P = (Z*A)*A")
        .unwrap()
        .dfg;
    let diamond = compile_source("int[4][4] Z; int[4][4] A; int[4][4] P; P = (Z*A)*(Z*A)")
        .unwrap()
        .dfg;
    assert!(!isomorphic(&chain, &diamond));
}

#[test]
fn errors_carry_positions() {
    let e = compile_source("int x;\nint[2] y;\ny = x +;\n").unwrap_err();
    assert!(matches!(e, FrontendError::Parse(_)));
    assert_eq!(e.position().0, 3);

    let e = compile_source("int[2][3] A;\nint[2][4] B;\nint[2][3] C;\nC = A + B;\n").unwrap_err();
    assert!(matches!(e, FrontendError::Type(_)));
    assert_eq!(e.position(), (4, 5));
    let msg = e.to_string();
    assert!(
        msg.contains("int[2][3]") && msg.contains("int[2][4]"),
        "{msg}"
    );
}

fn ops(e: &Expr) -> usize {
    match &e.kind {
        ExprKind::Var { .. } => 0,
        ExprKind::Binary { lhs, rhs, .. } => 1 + ops(lhs) + ops(rhs),
        ExprKind::Call { args, .. } => 1 + args.iter().map(ops).sum::<usize>(),
    }
}

fn stmt_ops(s: &Stmt) -> usize {
    match &s.kind {
        StmtKind::Assign { expr, .. } => ops(expr),
        StmtKind::Seq { body } => body.iter().map(stmt_ops).sum(),
        StmtKind::IfThenElse {
            cond,
            then_branch,
            else_branch,
        } => ops(cond) + stmt_ops(then_branch) + stmt_ops(else_branch),
        StmtKind::Decl { .. } | StmtKind::InitLiteral { .. } => 0,
    }
}

/// Kahn's algorithm, independent of the graph's own ordering.
fn acyclic(g: &MatrixDfg) -> bool {
    let mut indeg: BTreeMap<_, usize> = g.node_ids().map(|n| (n, 0)).collect();
    for e in g.edges() {
        *indeg.get_mut(&e.consumer).unwrap() += 1;
    }
    let mut ready: Vec<_> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for e in g.edges().iter().filter(|e| e.producer == n) {
            let d = indeg.get_mut(&e.consumer).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(e.consumer);
            }
        }
    }
    seen == g.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pretty_print_round_trips(seed in any::<u64>(), cond in any::<bool>()) {
        let src = ProgramGen::new(seed, cond).program();
        let ast = parse(&src).unwrap();
        let printed = pretty_print(&ast);
        let again = parse(&printed).unwrap();
        prop_assert_eq!(again.without_spans(), ast.without_spans(), "{}", printed);
    }

    #[test]
    fn lowered_graphs_are_acyclic(seed in any::<u64>(), cond in any::<bool>()) {
        let src = ProgramGen::new(seed, cond).program();
        let c = compile_source(&src).unwrap();
        prop_assert!(acyclic(&c.dfg));
    }

    #[test]
    fn one_node_per_operator(seed in any::<u64>()) {
        let src = ProgramGen::new(seed, false).program();
        let c = compile_source(&src).unwrap();
        let expected: usize = c.ast.statements.iter().map(stmt_ops).sum();
        prop_assert_eq!(c.dfg.compute_nodes().count(), expected, "{}", src);
    }

    #[test]
    fn edge_shapes_match_expression_types(seed in any::<u64>(), cond in any::<bool>()) {
        let src = ProgramGen::new(seed, cond).program();
        let ast = parse(&src).unwrap();
        let symbols = type_check(&ast).unwrap();
        let lowered = lower_with_map(&ast, &symbols).unwrap();
        prop_assert!(!lowered.values.is_empty());
        for (span, node) in &lowered.values {
            let ty = symbols.expr_types[span];
            prop_assert_eq!(lowered.dfg.node(*node).out_dim(), ty);
            for &e in lowered.dfg.out_edges(*node) {
                prop_assert_eq!(lowered.dfg.edge(e).shape, ty, "{} at {}", src, span);
            }
        }
    }
}
