//! Relaxed min-max solver: PFs become reals, the objective is the longest
//! path, and the result is rounded back to integers.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CostContext, LogEntry, OptimizerError, OptimizerResult, ResourceBudget};
use crate::dfg::{all_source_sink_paths, critical_path_by, NodeId, DEFAULT_PATHS_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RoundingMode {
    #[default]
    Down,
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlackboxOptions {
    pub restarts: usize,
    pub max_line_searches: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub rounding: RoundingMode,
    pub paths_cap: usize,
}

impl Default for BlackboxOptions {
    fn default() -> Self {
        BlackboxOptions {
            restarts: 16,
            max_line_searches: 10_000,
            tolerance: 1e-3,
            seed: 0,
            rounding: RoundingMode::Down,
            paths_cap: DEFAULT_PATHS_CAP,
        }
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const SNAP: f64 = 1e-6;
/// Weight of the resource tie-breaker relative to the latency objective.
const REG: f64 = 1e-7;

struct Relaxed<'c, 'a> {
    ctx: &'c CostContext<'a>,
    budget: ResourceBudget,
    nodes: Vec<NodeId>,
    node_group: Vec<Option<usize>>,
    /// Paths as indices into `nodes`; `None` when enumeration capped out.
    paths: Option<Vec<Vec<usize>>>,
    /// Per edge: the group whose PF it carries, if any.
    edge_group: Vec<Option<usize>>,
    lat_scale: f64,
}

impl<'c, 'a> Relaxed<'c, 'a> {
    fn new(ctx: &'c CostContext<'a>, budget: ResourceBudget, cap: usize) -> Self {
        let dfg = ctx.dfg;
        let nodes: Vec<NodeId> = dfg.node_ids().collect();
        let index = |n: NodeId| nodes.binary_search(&n).unwrap();
        let paths = all_source_sink_paths(dfg, cap).ok().map(|ps| {
            ps.into_iter()
                .map(|p| p.into_iter().map(index).collect())
                .collect()
        });
        let edge_group = dfg
            .edges()
            .iter()
            .map(|e| {
                [e.producer, e.consumer]
                    .into_iter()
                    .find(|&n| dfg.node(n).is_linear_time())
                    .and_then(|n| ctx.group_of(n))
            })
            .collect();
        let node_group = nodes.iter().map(|&n| ctx.group_of(n)).collect();
        let mut r = Relaxed {
            ctx,
            budget,
            nodes,
            node_group,
            paths,
            edge_group,
            lat_scale: 1.0,
        };
        let ones = vec![1.0; ctx.groups().len()];
        r.lat_scale = r.latency(&ones).max(1.0);
        r
    }

    fn pf(&self, p: &[f64], i: usize) -> f64 {
        self.node_group[i].map_or(1.0, |g| p[g])
    }

    fn latency(&self, p: &[f64]) -> f64 {
        let lat: Vec<f64> = (0..self.nodes.len())
            .map(|i| self.ctx.node_latency_real(self.nodes[i], self.pf(p, i)))
            .collect();
        match &self.paths {
            Some(paths) => paths
                .iter()
                .map(|path| path.iter().map(|&i| lat[i]).sum::<f64>())
                .fold(0.0, f64::max),
            None => {
                critical_path_by(self.ctx.dfg, |n| lat[self.nodes.binary_search(&n).unwrap()]).1
            }
        }
    }

    /// Relaxed (LUT, DSP) usage; affine in every group PF.
    fn usage(&self, p: &[f64]) -> (f64, f64) {
        let dfg = self.ctx.dfg;
        let mut lut = 0.0;
        let mut dsp = 0.0;
        for (i, &n) in self.nodes.iter().enumerate() {
            let m = &self.ctx.models[&n];
            if !m.compute {
                continue;
            }
            let pf = self.pf(p, i);
            lut += m.coeffs.lut_ratio(pf) * m.lut1 as f64;
            dsp += m.alpha_dsp as f64 * pf;
            if !m.lt {
                let edges = dfg.in_edges(n).iter().chain(dfg.out_edges(n));
                let s: f64 = edges
                    .map(|&e| self.edge_group[e].map_or(1.0, |g| p[g]))
                    .sum();
                lut += self.ctx.c_shuffle as f64 * s;
            }
        }
        (lut, dsp)
    }

    fn feasible(&self, p: &[f64]) -> bool {
        let (l, d) = self.usage(p);
        l <= self.budget.lut as f64 + 1e-9 && d <= self.budget.dsp as f64 + 1e-9
    }

    fn objective(&self, p: &[f64]) -> f64 {
        let (l, d) = self.usage(p);
        let res = l / self.budget.lut.max(1) as f64 + d / self.budget.dsp.max(1) as f64;
        self.latency(p) / self.lat_scale + REG * res
    }

    /// Largest value of coordinate `g` keeping the point within budget and
    /// the group's `max_pf`.
    fn upper(&self, p: &[f64], g: usize) -> f64 {
        let hi = self.ctx.groups()[g].max_pf as f64;
        let mut q = p.to_vec();
        q[g] = 1.0;
        let (l1, d1) = self.usage(&q);
        q[g] = 2.0;
        let (l2, d2) = self.usage(&q);
        let mut ub = hi;
        for (u1, u2, cap) in [
            (l1, l2, self.budget.lut as f64),
            (d1, d2, self.budget.dsp as f64),
        ] {
            let slope = u2 - u1;
            if slope > 1e-12 {
                ub = ub.min(1.0 + (cap - u1) / slope);
            }
        }
        ub.max(1.0)
    }

    fn line_search(&self, p: &mut [f64], g: usize) {
        let ub = self.upper(p, g);
        let eval = |x: f64, p: &mut [f64]| {
            p[g] = x;
            self.objective(p)
        };
        let cur = p[g].clamp(1.0, ub);
        let f_cur = eval(cur, p);
        let (mut a, mut b) = (1.0, ub);
        let mut x1 = b - GOLDEN * (b - a);
        let mut x2 = a + GOLDEN * (b - a);
        let mut f1 = eval(x1, p);
        let mut f2 = eval(x2, p);
        while b - a > SNAP {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - GOLDEN * (b - a);
                f1 = eval(x1, p);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + GOLDEN * (b - a);
                f2 = eval(x2, p);
            }
        }
        let mut best = (cur, f_cur);
        for x in [1.0, ub, 0.5 * (a + b)] {
            let f = eval(x, p);
            if f < best.1 - 1e-15 {
                best = (x, f);
            }
        }
        p[g] = best.0;
    }

    /// Pulls a random point toward all-ones until it fits the budget.
    fn make_feasible(&self, p: &[f64]) -> Vec<f64> {
        let at = |t: f64| p.iter().map(|&x| 1.0 + t * (x - 1.0)).collect::<Vec<f64>>();
        if self.feasible(p) {
            return p.to_vec();
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.feasible(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    }
}

/// Multi-start projected coordinate descent on the relaxed problem, followed
/// by rounding and budget repair. The best restart by rounded estimated
/// latency wins; ties go to the lower restart index.
pub fn blackbox_optimize(
    ctx: &CostContext,
    budget: ResourceBudget,
    opts: &BlackboxOptions,
) -> Result<OptimizerResult, OptimizerError> {
    let t0 = Instant::now();
    let ng = ctx.groups().len();
    let ones = vec![1u32; ng];
    let base = ctx.usage(&ctx.assignment(&ones));
    if !budget.admits(base) {
        return Err(OptimizerError::InfeasibleBaseline {
            usage: base,
            budget,
        });
    }
    let relaxed = Relaxed::new(ctx, budget, opts.paths_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<u32>, u64)> = None;
    let mut log = Vec::new();
    let mut sweeps_total = 0;
    for restart in 0..opts.restarts.max(1) {
        let start: Vec<f64> = ctx
            .groups()
            .iter()
            .map(|g| {
                let x = rng.gen::<f64>();
                if restart == 0 {
                    1.0
                } else {
                    1.0 + x * (g.max_pf as f64 - 1.0)
                }
            })
            .collect();
        let mut p = relaxed.make_feasible(&start);
        let mut obj = relaxed.objective(&p);
        let mut searches = 0;
        loop {
            for g in 0..ng {
                if searches >= opts.max_line_searches {
                    return Err(OptimizerError::SolverDiverged {
                        restart,
                        line_searches: searches,
                    });
                }
                relaxed.line_search(&mut p, g);
                searches += 1;
            }
            sweeps_total += 1;
            let next = relaxed.objective(&p);
            let gain = obj - next;
            obj = next;
            if ng == 0 || gain <= opts.tolerance * obj.abs().max(1e-12) {
                break;
            }
        }
        let pfs = round(ctx, budget, &p, opts.rounding);
        let a = ctx.assignment(&pfs);
        let (path, est) = ctx.critical_path(&a);
        log.push(LogEntry {
            iteration: sweeps_total,
            node: None,
            restart: Some(restart),
            pf: a.max_epf(),
            est_latency: est,
            usage: ctx.usage(&a),
            critical_path: path,
        });
        if best.as_ref().is_none_or(|(_, b)| est < *b) {
            best = Some((pfs, est));
        }
    }
    let (pfs, est) = best.expect("at least one restart");
    let assignment = ctx.assignment(&pfs);
    Ok(OptimizerResult {
        usage: ctx.usage(&assignment),
        est_latency: est,
        iterations: sweeps_total,
        wall_time: t0.elapsed(),
        assignment,
        log,
    })
}

fn round(ctx: &CostContext, budget: ResourceBudget, p: &[f64], mode: RoundingMode) -> Vec<u32> {
    let mut pfs: Vec<u32> = p
        .iter()
        .zip(ctx.groups())
        .map(|(&x, g)| {
            let r = match mode {
                RoundingMode::Down => (x + SNAP).floor(),
                RoundingMode::Nearest => x.round(),
            };
            (r as u32).clamp(1, g.max_pf)
        })
        .collect();
    // Per-node ceilings can still push the integer design over; shed PF
    // from the largest group until it fits.
    while !budget.admits(ctx.usage(&ctx.assignment(&pfs))) {
        let Some(g) = (0..pfs.len())
            .filter(|&g| pfs[g] > 1)
            .max_by_key(|&g| (pfs[g], std::cmp::Reverse(g)))
        else {
            break;
        };
        pfs[g] -= 1;
    }
    pfs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{Coeffs, CostModelParams, DimsClass, KindParams, NodeProfile, Profile1};
    use crate::dfg::{DfgBuilder, NodeDims, OpKind};
    use crate::templates::TemplateLibrary;
    use crate::tensor::Shape::*;

    #[test]
    fn single_node_hits_analytic_minimizer() {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(256));
        let m = b.op(OpKind::ArgMax, &[x], None).unwrap();
        b.sink("m", m).unwrap();
        let g = b.build().unwrap();
        let lib = TemplateLibrary::builtin();
        let mut params = CostModelParams::identity(&lib);
        let dims = NodeDims::infer(OpKind::ArgMax, vec![Vector(256)], None).unwrap();
        // α + βp + γ/p with γ/β = 20 → p* = √20 ≈ 4.47.
        let coeffs = Coeffs {
            alpha_l: 0.1,
            beta_l: 0.01,
            gamma_l: 0.2,
            alpha_lut: 0.9,
            beta_lut: 0.1,
        };
        params.kinds.insert(
            OpKind::ArgMax,
            KindParams {
                alpha_dsp: 0,
                classes: vec![DimsClass {
                    dims: dims.encode(),
                    signature: dims.signature(),
                    coeffs,
                    rmse_latency: 0.0,
                    rmse_lut: 0.0,
                }],
            },
        );
        let prof: Profile1 = [(0, 0, 0), (1, 1000, 100), (2, 0, 0)]
            .into_iter()
            .map(|(n, l, u)| {
                (
                    NodeId(n),
                    NodeProfile {
                        latency1: l,
                        lut1: u,
                    },
                )
            })
            .collect();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        let r = blackbox_optimize(&ctx, ResourceBudget::ARTY, &BlackboxOptions::default()).unwrap();
        assert_eq!(r.assignment.pf(NodeId(1)), 4);
        // A budget capping PF at 3 binds first.
        let cap = ctx.usage(&ctx.assignment(&[3]));
        let r = blackbox_optimize(
            &ctx,
            ResourceBudget {
                lut: cap.lut,
                dsp: 90,
            },
            &BlackboxOptions::default(),
        )
        .unwrap();
        assert_eq!(r.assignment.pf(NodeId(1)), 3);
    }

    #[test]
    fn all_lt_cluster_is_one_variable() {
        let mut b = DfgBuilder::new();
        let x = b.source("x", Vector(64));
        let y = b.source("y", Vector(64));
        let s = b.op(OpKind::MatAdd, &[x, y], None).unwrap();
        let t = b.op(OpKind::TanH, &[s], None).unwrap();
        let relu = b.op(OpKind::ReLU, &[t], None).unwrap();
        b.sink("r", relu).unwrap();
        let g = b.build().unwrap();
        let lib = TemplateLibrary::builtin();
        let params = crate::sim::train_params(&lib).unwrap();
        let prof = crate::sim::profile_pf1(&g, &lib, 0).unwrap();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        assert_eq!(ctx.groups().len(), 1);
        let r = blackbox_optimize(&ctx, ResourceBudget::ARTY, &BlackboxOptions::default()).unwrap();
        let pf = r.assignment.pf(s);
        assert!(pf > 1);
        assert_eq!(r.assignment.pf(t), pf);
        assert_eq!(r.assignment.pf(relu), pf);
        assert!(ResourceBudget::ARTY.admits(r.usage));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut b = DfgBuilder::new();
        let w = b.source("w", Matrix(16, 16));
        let x = b.source("x", Vector(16));
        let m = b.op(OpKind::MatMul, &[w, x], None).unwrap();
        let t = b.op(OpKind::TanH, &[m], None).unwrap();
        b.sink("t", t).unwrap();
        let g = b.build().unwrap();
        let lib = TemplateLibrary::builtin();
        let params = crate::sim::train_params(&lib).unwrap();
        let prof = crate::sim::profile_pf1(&g, &lib, 0).unwrap();
        let ctx = CostContext::new(&g, &params, &prof, &lib);
        let o = BlackboxOptions {
            seed: 7,
            ..Default::default()
        };
        let a = blackbox_optimize(&ctx, ResourceBudget::ARTY, &o).unwrap();
        let b2 = blackbox_optimize(&ctx, ResourceBudget::ARTY, &o).unwrap();
        assert!(a.same_outcome(&b2));
    }
}
