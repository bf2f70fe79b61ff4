mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_assignment;
use matforge::bench::random_dfg;
use matforge::codegen::{
    emit, structural_check, structural_check_text, CodegenError, StructuralViolation,
};
use matforge::dfg::{MatrixDfg, NodeId, OpKind, PfAssignment};
use matforge::dsl::compile_source;
use matforge::optimizer::CostContext;
use matforge::schedule::build_schedule;
use matforge::sim::{profile_pf1, train_params};
use matforge::templates::TemplateLibrary;

fn dsp_kind(k: OpKind) -> bool {
    matches!(
        k,
        OpKind::MatMul
            | OpKind::SpMV
            | OpKind::Hadamard
            | OpKind::ScalarMatMul
            | OpKind::DotProduct
            | OpKind::OuterProduct
    )
}

fn small() -> (MatrixDfg, PfAssignment) {
    let g = compile_source("int[4][4] A; int[4] x; int[4] y; y = relu(A * x)")
        .unwrap()
        .dfg;
    let mm = g.nodes().find(|n| n.kind == OpKind::MatMul).unwrap().id;
    let epf = g
        .node_ids()
        .map(|n| (n, if n == mm { 3 } else { 1 }))
        .collect();
    let a = PfAssignment::from_epf(&g, epf);
    (g, a)
}

#[test]
fn corrupted_pf_is_caught() {
    let lib = TemplateLibrary::builtin();
    let (g, a) = small();
    let s = build_schedule(&g, &a, true, &lib).unwrap();
    let d = emit(&g, &a, &s, &lib, None).unwrap();
    let text = d.text();
    assert!(structural_check_text(&text, Some(&d.manifest)).ok());
    let mm = g.nodes().find(|n| n.kind == OpKind::MatMul).unwrap().id;
    let inst = &d.manifest.node(mm).unwrap().instance;
    let at = text.find(&format!(") {inst} (")).unwrap();
    let line_start = text[..at].rfind('\n').unwrap();
    let head = &text[line_start..at];
    assert!(head.contains(".PF(3)"), "{head}");
    let bad = format!(
        "{}{}{}",
        &text[..line_start],
        head.replace(".PF(3)", ".PF(4)"),
        &text[at..]
    );
    let r = structural_check_text(&bad, Some(&d.manifest));
    assert!(
        r.violations.iter().any(|v| matches!(
            v,
            StructuralViolation::ParameterMismatch { instance, param, expected: 3, .. } if instance == inst && param == "PF"
        )),
        "{:?}",
        r.violations
    );
}

#[test]
fn misspelled_module_is_caught() {
    let lib = TemplateLibrary::builtin();
    let (g, a) = small();
    let s = build_schedule(&g, &a, false, &lib).unwrap();
    let d = emit(&g, &a, &s, &lib, None).unwrap();
    let text = d.text().replacen("mf_buffer #", "mf_bufer #", 1);
    assert!(!structural_check_text(&text, Some(&d.manifest)).ok());
}

#[test]
fn invalid_assignment_is_refused() {
    let lib = TemplateLibrary::builtin();
    let (g, a) = small();
    let s = build_schedule(&g, &a, false, &lib).unwrap();
    let relu = g.nodes().find(|n| n.kind == OpKind::ReLU).unwrap().id;
    let mut epf = a.epf.clone();
    epf.insert(relu, 99);
    let bad = PfAssignment::from_epf(&g, epf);
    assert!(matches!(
        emit(&g, &bad, &s, &lib, None),
        Err(CodegenError::InvalidAssignment(_))
    ));
}

#[test]
fn schedule_for_another_design_is_refused() {
    let lib = TemplateLibrary::builtin();
    let (g, a) = small();
    let other = compile_source("int[4] x; int[4] y; y = relu(x)")
        .unwrap()
        .dfg;
    let s = build_schedule(&other, &PfAssignment::uniform(&other), false, &lib).unwrap();
    assert!(matches!(
        emit(&g, &a, &s, &lib, None),
        Err(CodegenError::ScheduleMismatch(_))
    ));
}

#[test]
fn estimates_fill_the_manifest_but_not_the_hardware() {
    let lib = TemplateLibrary::builtin();
    let params = train_params(&lib).unwrap();
    let (g, a) = small();
    let prof = profile_pf1(&g, &lib, 0).unwrap();
    let ctx = CostContext::new(&g, &params, &prof, &lib);
    let s = build_schedule(&g, &a, true, &lib).unwrap();
    let plain = emit(&g, &a, &s, &lib, None).unwrap();
    let priced = emit(&g, &a, &s, &lib, Some(&ctx)).unwrap();
    assert_eq!(plain.top, priced.top);
    assert_eq!(plain.modules, priced.modules);
    let t = priced.manifest.totals;
    let u = ctx.usage(&a);
    assert_eq!((t.lut_estimate + t.shuffle_lut, t.dsp), (u.lut, u.dsp));
    for n in &plain.manifest.nodes {
        assert_eq!(n.lut_estimate, n.lut_table);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn manifest_accounts_for_every_node(seed in 0u64..1_000_000, pipelining in any::<bool>()) {
        let lib = TemplateLibrary::builtin();
        let g = random_dfg(seed, 8, 16);
        let a = random_assignment(&g, &mut ChaCha8Rng::seed_from_u64(seed));
        let s = build_schedule(&g, &a, pipelining, &lib).unwrap();
        let d = emit(&g, &a, &s, &lib, None).unwrap();
        let m = &d.manifest;

        let ids: BTreeSet<NodeId> = m.nodes.iter().map(|n| n.id).collect();
        prop_assert_eq!(ids.len(), m.nodes.len());
        prop_assert_eq!(ids, g.node_ids().collect::<BTreeSet<_>>());
        let insts: BTreeSet<&str> = m.nodes.iter().map(|n| n.instance.as_str()).collect();
        prop_assert_eq!(insts.len(), m.nodes.len());
        let text = d.text();
        for n in &m.nodes {
            let node = g.node(n.id);
            prop_assert_eq!(n.kind, node.kind);
            prop_assert_eq!(n.pf, a.pf(n.id));
            prop_assert!(text.contains(&format!(" {} (", n.instance)), "{}", n.instance);
            prop_assert_eq!(n.lut_table, lib.lut(node.kind, &node.dims, n.pf));
            let want_dsp = if dsp_kind(node.kind) { n.pf as u64 } else { 0 };
            prop_assert_eq!(n.dsp, want_dsp);
        }
        prop_assert_eq!(m.totals.dsp, m.nodes.iter().map(|n| n.dsp).sum::<u64>());
        prop_assert_eq!(m.totals.lut_table, m.nodes.iter().map(|n| n.lut_table).sum::<u64>());
        prop_assert_eq!(m.totals.shuffle_lut, m.nodes.iter().map(|n| n.shuffle_lut).sum::<u64>());

        // Every edge is carried by exactly one of buffer, wire or stage register.
        let mut carried: Vec<usize> = m.buffers.iter().map(|b| b.edge).collect();
        carried.extend(m.wired_edges.iter().copied());
        carried.extend(m.fused_edges.iter().copied());
        carried.sort();
        prop_assert_eq!(carried, (0..g.edges().len()).collect::<Vec<_>>());
    }

    #[test]
    fn emission_is_pure_and_clean(seed in 0u64..1_000_000, pipelining in any::<bool>()) {
        let lib = TemplateLibrary::builtin();
        let g = random_dfg(seed, 8, 16);
        let a = random_assignment(&g, &mut ChaCha8Rng::seed_from_u64(seed));
        let s = build_schedule(&g, &a, pipelining, &lib).unwrap();
        let d1 = emit(&g, &a, &s, &lib, None).unwrap();
        let d2 = emit(&g, &a, &s, &lib, None).unwrap();
        prop_assert_eq!(&d1, &d2);
        let r = structural_check(&d1);
        prop_assert!(r.ok(), "{:?}", r.violations);
        let back = matforge::codegen::Manifest::from_json(&d1.manifest.to_json()).unwrap();
        prop_assert_eq!(&back, &d1.manifest);
        prop_assert!(structural_check_text(&d1.text(), Some(&back)).ok());
    }
}
