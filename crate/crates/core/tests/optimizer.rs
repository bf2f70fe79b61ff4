mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use proptest::prelude::*;

use matforge::bench::random_dfg;
use matforge::cost::CostModelParams;
use matforge::dfg::{
    all_source_sink_paths, critical_path, pf_constraints_ok, DfgBuilder, MatrixDfg, NodeId, OpKind,
    PfAssignment, DEFAULT_PATHS_CAP,
};
use matforge::optimizer::{
    blackbox_optimize, exhaustive_search, greedy_optimize, BenefitMetric, BlackboxOptions,
    CostContext, OptimizerResult, ResourceBudget,
};
use matforge::sim::{profile_pf1, train_params};
use matforge::templates::TemplateLibrary;
use matforge::tensor::Shape::*;

fn lib() -> &'static TemplateLibrary {
    static LIB: OnceLock<TemplateLibrary> = OnceLock::new();
    LIB.get_or_init(TemplateLibrary::builtin)
}

fn params() -> &'static CostModelParams {
    static P: OnceLock<CostModelParams> = OnceLock::new();
    P.get_or_init(|| train_params(lib()).unwrap())
}

fn with_ctx<T>(dfg: &MatrixDfg, f: impl FnOnce(&CostContext) -> T) -> T {
    let prof = profile_pf1(dfg, lib(), 0).unwrap();
    let ctx = CostContext::new(dfg, params(), &prof, lib());
    f(&ctx)
}

fn add_then_matmul() -> MatrixDfg {
    let mut b = DfgBuilder::new();
    let x = b.source("A", Matrix(8, 8));
    let y = b.source("B", Matrix(8, 8));
    let w = b.source("W", Matrix(8, 8));
    let s = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
    let m = b.op(OpKind::MatMul, &[s, w], None).unwrap();
    b.sink("out", m).unwrap();
    b.build().unwrap()
}

fn hot_and_cold() -> MatrixDfg {
    let mut b = DfgBuilder::new();
    let x = b.source("x", Vector(64));
    let m = b.source("M", Matrix(64, 64));
    let cold = b.op(OpKind::ReLU, &[x], None).unwrap();
    let hot = b.op(OpKind::MatMul, &[m, x], None).unwrap();
    let join = b.op(OpKind::MatAdd, &[cold, hot], None).unwrap();
    b.sink("y", join).unwrap();
    b.build().unwrap()
}

/// Latency reduction of the first PF above the current one that lowers the
/// estimate, scanning upward until the budget runs out.
fn lookahead_gain(ctx: &CostContext, budget: ResourceBudget, pfs: &[u32], g: usize) -> i64 {
    let before = ctx.est_total_latency(&ctx.assignment(pfs)) as i64;
    let mut t = pfs.to_vec();
    for pf in pfs[g] + 1..=ctx.groups()[g].max_pf {
        t[g] = pf;
        let a = ctx.assignment(&t);
        if !budget.admits(ctx.usage(&a)) {
            break;
        }
        let gain = before - ctx.est_total_latency(&a) as i64;
        if gain > 0 {
            return gain;
        }
    }
    0
}

/// Group PF vectors before each logged move, ending with the final state.
fn replay(ctx: &CostContext, r: &OptimizerResult) -> Vec<Vec<u32>> {
    let mut pfs = vec![1u32; ctx.groups().len()];
    let mut states = vec![pfs.clone()];
    for e in &r.log {
        let g = ctx.group_of(e.node.unwrap()).unwrap();
        pfs[g] = e.pf;
        states.push(pfs.clone());
    }
    states
}

#[test]
fn matmul_is_raised_until_the_add_is_worth_more() {
    let g = add_then_matmul();
    with_ctx(&g, |ctx| {
        let budget = ResourceBudget::ARTY;
        let r = greedy_optimize(ctx, budget, BenefitMetric::LatencyReduction).unwrap();
        let kind = |e: &matforge::optimizer::LogEntry| g.node(e.node.unwrap()).kind;
        assert_eq!(kind(&r.log[0]), OpKind::MatMul);
        let states = replay(ctx, &r);
        let first_add = r
            .log
            .iter()
            .position(|e| kind(e) == OpKind::MatAdd)
            .expect("the add is raised eventually");
        assert!(first_add > 0);
        let add_g = ctx.group_of(r.log[first_add].node.unwrap()).unwrap();
        let mm_g = 1 - add_g;
        // Every MatMul step before it gained at least as much as the add would have.
        for (i, pfs) in states.iter().enumerate().take(first_add) {
            assert!(
                lookahead_gain(ctx, budget, pfs, mm_g) >= lookahead_gain(ctx, budget, pfs, add_g),
                "step {i}"
            );
        }
        let at = &states[first_add];
        assert!(lookahead_gain(ctx, budget, at, add_g) >= lookahead_gain(ctx, budget, at, mm_g));
    });
}

#[test]
fn moves_stay_on_the_critical_path() {
    let g = hot_and_cold();
    with_ctx(&g, |ctx| {
        let r = greedy_optimize(ctx, ResourceBudget::ARTY, BenefitMetric::LatencyPerLut).unwrap();
        assert!(!r.log.is_empty());
        let hot = g.nodes().find(|n| n.kind == OpKind::MatMul).unwrap().id;
        assert_eq!(r.log[0].node, Some(hot));
        let paths = all_source_sink_paths(&g, DEFAULT_PATHS_CAP).unwrap();
        for (e, pfs) in r.log.iter().zip(replay(ctx, &r)) {
            let lat = ctx.latencies(&ctx.assignment(&pfs));
            let longest = paths
                .iter()
                .map(|p| p.iter().map(|n| lat[n]).sum::<u64>())
                .max()
                .unwrap();
            let logged: u64 = e.critical_path.iter().map(|n| lat[n]).sum();
            assert_eq!(logged, longest, "iteration {}", e.iteration);
            assert!(
                e.critical_path.contains(&e.node.unwrap()),
                "iteration {}",
                e.iteration
            );
        }
    });
}

#[test]
fn budget_at_pf1_usage_keeps_everything_at_one() {
    let g = hot_and_cold();
    with_ctx(&g, |ctx| {
        let base = ctx.usage(&PfAssignment::uniform(&g));
        let budget = ResourceBudget {
            lut: base.lut,
            dsp: base.dsp,
        };
        for metric in [
            BenefitMetric::LatencyPerLut,
            BenefitMetric::LatencyReduction,
        ] {
            let r = greedy_optimize(ctx, budget, metric).unwrap();
            assert_eq!(r.assignment, PfAssignment::uniform(&g));
            assert_eq!(r.iterations, 0);
        }
        let b = blackbox_optimize(ctx, budget, &BlackboxOptions::default()).unwrap();
        assert_eq!(b.assignment, PfAssignment::uniform(&g));
    });
}

fn budget_for(
    ctx: &CostContext,
    dfg: &MatrixDfg,
    lut_scale: f64,
    dsp_extra: u64,
) -> ResourceBudget {
    let base = ctx.usage(&PfAssignment::uniform(dfg));
    ResourceBudget {
        lut: (base.lut as f64 * lut_scale) as u64,
        dsp: base.dsp + dsp_extra,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_trace_is_valid_and_monotone(seed in 0u64..1_000_000, scale in 1.0f64..4.0, extra in 0u64..90) {
        let g = random_dfg(seed, 8, 16);
        with_ctx(&g, |ctx| {
            let budget = budget_for(ctx, &g, scale, extra);
            let r = greedy_optimize(ctx, budget, BenefitMetric::LatencyPerLut).unwrap();
            let states = replay(ctx, &r);
            let pf1 = ctx.est_total_latency(&PfAssignment::uniform(&g));
            let mut prev = pf1;
            for (e, pfs) in r.log.iter().zip(&states[1..]) {
                let a = ctx.assignment(pfs);
                prop_assert!(pf_constraints_ok(&g, &a).is_empty());
                let u = ctx.usage(&a);
                prop_assert_eq!(u, e.usage);
                prop_assert!(budget.admits(u));
                prop_assert_eq!(ctx.est_total_latency(&a), e.est_latency);
                prop_assert!(e.est_latency <= prev);
                prev = e.est_latency;
            }
            prop_assert_eq!(&ctx.assignment(states.last().unwrap()), &r.assignment);
            prop_assert!(r.est_latency <= pf1);
            Ok(())
        })?;
    }

    #[test]
    fn blackbox_respects_budget_and_constraints(seed in 0u64..1_000_000, scale in 1.0f64..4.0, extra in 0u64..90) {
        let g = random_dfg(seed, 8, 16);
        with_ctx(&g, |ctx| {
            let budget = budget_for(ctx, &g, scale, extra);
            let opts = BlackboxOptions { restarts: 4, ..Default::default() };
            let r = blackbox_optimize(ctx, budget, &opts).unwrap();
            prop_assert!(budget.admits(r.usage));
            prop_assert_eq!(ctx.usage(&r.assignment), r.usage);
            prop_assert!(pf_constraints_ok(&g, &r.assignment).is_empty());
            prop_assert!(r.est_latency <= ctx.est_total_latency(&PfAssignment::uniform(&g)));
            Ok(())
        })?;
    }

    #[test]
    fn optimizers_are_deterministic(seed in 0u64..1_000_000) {
        let g = random_dfg(seed, 8, 16);
        with_ctx(&g, |ctx| {
            let budget = budget_for(ctx, &g, 2.0, 45);
            let a = greedy_optimize(ctx, budget, BenefitMetric::LatencyPerLut).unwrap();
            let b = greedy_optimize(ctx, budget, BenefitMetric::LatencyPerLut).unwrap();
            prop_assert!(a.same_outcome(&b));
            let opts = BlackboxOptions { restarts: 3, seed, ..Default::default() };
            let a = blackbox_optimize(ctx, budget, &opts).unwrap();
            let b = blackbox_optimize(ctx, budget, &opts).unwrap();
            prop_assert!(a.same_outcome(&b));
            Ok(())
        })?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn greedy_near_exhaustive_in_estimate_space(seed in 0u64..1_000_000, scale in 1.0f64..3.0) {
        let g = random_dfg(seed, 5, 8);
        with_ctx(&g, |ctx| {
            let budget = budget_for(ctx, &g, scale, 90);
            let r = greedy_optimize(ctx, budget, BenefitMetric::LatencyPerLut).unwrap();
            let (_, best) = exhaustive_search(ctx, budget, |a| ctx.est_total_latency(a)).unwrap();
            prop_assert!(r.est_latency as f64 <= 1.15 * best as f64, "greedy {} optimum {}", r.est_latency, best);
            Ok(())
        })?;
    }

    #[test]
    fn critical_path_is_the_longest_enumerated_path(seed in 0u64..1_000_000, wseed in any::<u64>()) {
        let g = random_dfg(seed, 10, 16);
        let lat: BTreeMap<NodeId, u64> = g
            .node_ids()
            .map(|n| (n, wseed.rotate_left(n.0 * 7) % 1000))
            .collect();
        let (path, total) = critical_path(&g, &lat);
        let paths = all_source_sink_paths(&g, DEFAULT_PATHS_CAP).unwrap();
        let longest = paths.iter().map(|p| p.iter().map(|n| lat[n]).sum::<u64>()).max().unwrap();
        prop_assert_eq!(total, longest);
        prop_assert_eq!(path.iter().map(|n| lat[n]).sum::<u64>(), total);
        prop_assert!(paths.contains(&path));
    }
}
