//! Critical-path greedy: repeatedly raise the PF of the best node on the
//! current critical path to its next useful value.

use std::cmp::Ordering;
use std::time::Instant;

use super::{
    BenefitMetric, CostContext, LogEntry, OptimizerError, OptimizerResult, ResourceBudget,
};
use crate::dfg::NodeId;

struct Candidate {
    node: NodeId,
    group: usize,
    pf: u32,
    d_total: i64,
    d_path: i64,
    d_lut: i64,
}

impl Candidate {
    fn score(&self, metric: BenefitMetric) -> (f64, f64) {
        match metric {
            BenefitMetric::LatencyReduction => (self.d_total as f64, self.d_path as f64),
            BenefitMetric::LatencyPerLut if self.d_lut <= 0 => (f64::INFINITY, self.d_total as f64),
            BenefitMetric::LatencyPerLut => {
                let l = self.d_lut as f64;
                (self.d_total as f64 / l, self.d_path as f64 / l)
            }
        }
    }
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.1 > b.1,
    }
}

/// Smallest PF above the current one for group `g` that fits the budget and
/// is admissible. Predicted latencies are flat over runs of PF values, so a
/// single increment can stall on a plateau.
#[allow(clippy::too_many_arguments)]
fn next_move(
    ctx: &CostContext,
    budget: ResourceBudget,
    pfs: &[u32],
    g: usize,
    node: NodeId,
    path: &[NodeId],
    total: u64,
    lut: u64,
) -> Option<Candidate> {
    let on_path: Vec<NodeId> = ctx.groups()[g]
        .members
        .iter()
        .copied()
        .filter(|m| path.contains(m))
        .collect();
    let path_lat = |pf: u32| -> u64 { on_path.iter().map(|&m| ctx.node_latency(m, pf)).sum() };
    let here = path_lat(pfs[g]);
    let mut trial = pfs.to_vec();
    for pf in pfs[g] + 1..=ctx.groups()[g].max_pf {
        // The old critical path bounds the new total from below, so a PF that
        // leaves it as long cannot be admissible.
        if path_lat(pf) >= here {
            continue;
        }
        trial[g] = pf;
        let ta = ctx.assignment(&trial);
        let tu = ctx.usage(&ta);
        if !budget.admits(tu) {
            // Usage is monotone in PF.
            return None;
        }
        let new_total = ctx.est_total_latency(&ta);
        let new_path: u64 = path.iter().map(|&m| ctx.node_latency(m, ta.pf(m))).sum();
        let c = Candidate {
            node,
            group: g,
            pf,
            d_total: total as i64 - new_total as i64,
            d_path: total as i64 - new_path as i64,
            d_lut: tu.lut as i64 - lut as i64,
        };
        if c.d_total > 0 || (c.d_total == 0 && c.d_path > 0) {
            return Some(c);
        }
    }
    None
}

/// Greedy PF search.
///
/// A move is admissible when it fits the budget and either shortens the
/// estimated total latency or, leaving it unchanged, shortens the current
/// critical path (parallel paths of equal length). Every move raises one PF,
/// so the loop ends after at most `Σ (max_pf - 1)` moves.
pub fn greedy_optimize(
    ctx: &CostContext,
    budget: ResourceBudget,
    metric: BenefitMetric,
) -> Result<OptimizerResult, OptimizerError> {
    let t0 = Instant::now();
    let mut pfs = vec![1u32; ctx.groups().len()];
    let mut a = ctx.assignment(&pfs);
    let mut u = ctx.usage(&a);
    if !budget.admits(u) {
        return Err(OptimizerError::InfeasibleBaseline { usage: u, budget });
    }
    let mut log = Vec::new();
    loop {
        let (path, total) = ctx.critical_path(&a);
        let mut seen = Vec::new();
        let mut best: Option<(Candidate, (f64, f64))> = None;
        // Path nodes visited by id so that ties resolve to the smallest id.
        let mut on_path = path.clone();
        on_path.sort();
        for &n in &on_path {
            let Some(g) = ctx.group_of(n) else { continue };
            if seen.contains(&g) || pfs[g] >= ctx.groups()[g].max_pf {
                continue;
            }
            seen.push(g);
            let Some(c) = next_move(ctx, budget, &pfs, g, n, &path, total, u.lut) else {
                continue;
            };
            let s = c.score(metric);
            if best.as_ref().is_none_or(|(_, bs)| better(s, *bs)) {
                best = Some((c, s));
            }
        }
        let Some((c, _)) = best else { break };
        pfs[c.group] = c.pf;
        a = ctx.assignment(&pfs);
        u = ctx.usage(&a);
        log.push(LogEntry {
            iteration: log.len() + 1,
            node: Some(c.node),
            restart: None,
            pf: pfs[c.group],
            est_latency: ctx.est_total_latency(&a),
            usage: u,
            critical_path: path,
        });
    }
    Ok(OptimizerResult {
        est_latency: ctx.est_total_latency(&a),
        usage: u,
        iterations: log.len(),
        wall_time: t0.elapsed(),
        assignment: a,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{pf_constraints_ok, DfgBuilder, OpKind};
    use crate::optimizer::Usage;
    use crate::sim::profile_pf1;
    use crate::templates::TemplateLibrary;
    use crate::tensor::Shape::*;

    fn chain() -> crate::dfg::MatrixDfg {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(64));
        let y = b.source("y", Vector(64));
        let s = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
        let r = b.op(OpKind::ReLU, &[s], None).unwrap();
        b.sink("r", r).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn tight_budget_keeps_pf1() {
        let g = chain();
        let lib = TemplateLibrary::builtin();
        let params = crate::sim::train_params(&lib).unwrap();
        let prof = profile_pf1(&g, &lib, 0).unwrap();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        let base = ctx.usage(&ctx.assignment(&vec![1; ctx.groups().len()]));
        let r = greedy_optimize(
            &ctx,
            ResourceBudget {
                lut: base.lut,
                dsp: 90,
            },
            BenefitMetric::LatencyPerLut,
        )
        .unwrap();
        assert!(r.assignment.epf.values().all(|&p| p == 1));
        assert!(r.log.is_empty());
    }

    #[test]
    fn infeasible_baseline_reported() {
        let g = chain();
        let lib = TemplateLibrary::builtin();
        let params = crate::sim::train_params(&lib).unwrap();
        let prof = profile_pf1(&g, &lib, 0).unwrap();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        let e = greedy_optimize(
            &ctx,
            ResourceBudget { lut: 10, dsp: 0 },
            BenefitMetric::LatencyReduction,
        );
        assert!(matches!(e, Err(OptimizerError::InfeasibleBaseline { .. })));
    }

    #[test]
    fn generous_budget_improves_and_stays_valid() {
        let g = chain();
        let lib = TemplateLibrary::builtin();
        let params = crate::sim::train_params(&lib).unwrap();
        let prof = profile_pf1(&g, &lib, 0).unwrap();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        for metric in [
            BenefitMetric::LatencyReduction,
            BenefitMetric::LatencyPerLut,
        ] {
            let r = greedy_optimize(&ctx, ResourceBudget::ARTY, metric).unwrap();
            assert!(pf_constraints_ok(&g, &r.assignment).is_empty());
            assert!(r.est_latency < ctx.est_total_latency(&ctx.assignment(&[1])));
            assert!(ResourceBudget::ARTY.admits(r.usage));
            assert_ne!(r.usage, Usage::default());
            let lat: Vec<u64> = r.log.iter().map(|l| l.est_latency).collect();
            assert!(lat.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
