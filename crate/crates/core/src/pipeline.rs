//! End-to-end flows behind the command line: build one design, or
//! compare both optimizers over a benchmark suite.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::codegen::{emit, structural_check, CheckReport, VerilogDesign};
use crate::cost::{CostModelParams, Profile1};
use crate::dfg::{MatrixDfg, NodeId, OpKind, PfAssignment, DEFAULT_PATHS_CAP};
use crate::dsl::{compile_source, FrontendError};
use crate::optimizer::{
    blackbox_optimize, greedy_optimize, BenefitMetric, BlackboxOptions, CostContext, LogEntry,
    OptimizerResult, ResourceBudget, RoundingMode, Usage,
};
use crate::schedule::{build_schedule, Schedule};
use crate::sim::{profile_pf1, random_inputs, run, run_timing, Inputs, SimReport};
use crate::templates::{TemplateError, TemplateLibrary};

pub const REPORT_SCHEMA: &str = "matforge.report/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Greedy,
    Blackbox,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(OptimizerKind::Greedy),
            "blackbox" => Ok(OptimizerKind::Blackbox),
            _ => Err(format!(
                "unknown optimizer `{s}` (expected greedy or blackbox)"
            )),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Greedy => "greedy",
            OptimizerKind::Blackbox => "blackbox",
        })
    }
}

/// Settings shared by every command.
#[derive(Clone, Debug, PartialEq)]
pub struct ToolConfig {
    pub budget: ResourceBudget,
    pub optimizer: OptimizerKind,
    pub metric: BenefitMetric,
    pub pipelining: bool,
    pub seed: u64,
    pub paths_cap: usize,
    pub templates: Option<PathBuf>,
    pub word_width: u32,
    /// Skip optimization and keep every PF at 1.
    pub pf1_only: bool,
    pub rounding: RoundingMode,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            budget: ResourceBudget::ARTY,
            optimizer: OptimizerKind::Greedy,
            metric: BenefitMetric::LatencyPerLut,
            pipelining: true,
            seed: 0,
            paths_cap: DEFAULT_PATHS_CAP,
            templates: None,
            word_width: 16,
            pf1_only: false,
            rounding: RoundingMode::Down,
        }
    }
}

impl ToolConfig {
    pub fn library(&self) -> Result<TemplateLibrary, PipelineError> {
        TemplateLibrary::resolve(self.templates.as_deref())
            .map(|l| l.with_word_width(self.word_width))
            .map_err(|e: TemplateError| PipelineError::new(Stage::Templates, e))
    }

    pub fn blackbox_options(&self) -> BlackboxOptions {
        BlackboxOptions {
            seed: self.seed,
            paths_cap: self.paths_cap,
            rounding: self.rounding,
            ..BlackboxOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Io,
    Frontend,
    Templates,
    Train,
    Profile,
    Optimize,
    Schedule,
    Emit,
    Check,
    Simulate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Io => "io",
            Stage::Frontend => "frontend",
            Stage::Templates => "templates",
            Stage::Train => "train",
            Stage::Profile => "profile",
            Stage::Optimize => "optimize",
            Stage::Schedule => "schedule",
            Stage::Emit => "emit",
            Stage::Check => "check",
            Stage::Simulate => "simulate",
        })
    }
}

/// A failure tagged with the stage that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

/// Reads a design from `.mfd` source or a DFG JSON document.
pub fn load_design(path: &Path) -> Result<MatrixDfg, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::new(Stage::Io, format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        MatrixDfg::from_json(&text).map_err(|e| PipelineError::new(Stage::Frontend, e))
    } else {
        compile_source(&text)
            .map(|c| c.dfg)
            .map_err(|e| frontend_error(path, &e))
    }
}

/// Frontend failure prefixed with `file:line:col`.
pub fn frontend_error(path: &Path, e: &FrontendError) -> PipelineError {
    let (line, col) = e.position();
    PipelineError::new(
        Stage::Frontend,
        format!("{}:{line}:{col}: {e}", path.display()),
    )
}

/// Runs the configured optimizer, or returns the all-ones assignment when
/// `pf1_only` is set.
pub fn optimize(ctx: &CostContext, cfg: &ToolConfig) -> Result<OptimizerResult, PipelineError> {
    let t0 = Instant::now();
    if cfg.pf1_only {
        let a = PfAssignment::uniform(ctx.dfg);
        let usage = ctx.usage(&a);
        if !cfg.budget.admits(usage) {
            return Err(PipelineError::new(
                Stage::Optimize,
                format!("PF-1 design needs {usage} but the budget is {}", cfg.budget),
            ));
        }
        return Ok(OptimizerResult {
            est_latency: ctx.est_total_latency(&a),
            usage,
            iterations: 0,
            wall_time: t0.elapsed(),
            assignment: a,
            log: vec![],
        });
    }
    let r = match cfg.optimizer {
        OptimizerKind::Greedy => greedy_optimize(ctx, cfg.budget, cfg.metric),
        OptimizerKind::Blackbox => blackbox_optimize(ctx, cfg.budget, &cfg.blackbox_options()),
    };
    r.map_err(|e| PipelineError::new(Stage::Optimize, e))
}

pub const OPTIMIZE_SCHEMA: &str = "matforge.optimize/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePf {
    pub node: NodeId,
    pub kind: OpKind,
    pub pf: u32,
}

/// Serialized optimizer outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeReport {
    pub schema: String,
    pub optimizer: String,
    pub metric: String,
    pub budget: ResourceBudget,
    pub usage: Usage,
    pub est_latency: u64,
    pub iterations: usize,
    pub pfs: Vec<NodePf>,
    pub assignment: PfAssignment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<Vec<LogEntry>>,
}

impl OptimizeReport {
    pub fn new(dfg: &MatrixDfg, r: &OptimizerResult, cfg: &ToolConfig, with_log: bool) -> Self {
        OptimizeReport {
            schema: OPTIMIZE_SCHEMA.to_string(),
            optimizer: if cfg.pf1_only {
                "pf1".to_string()
            } else {
                cfg.optimizer.to_string()
            },
            metric: cfg.metric.to_string(),
            budget: cfg.budget,
            usage: r.usage,
            est_latency: r.est_latency,
            iterations: r.iterations,
            pfs: dfg
                .nodes()
                .map(|n| NodePf {
                    node: n.id,
                    kind: n.kind,
                    pf: r.assignment.pf(n.id),
                })
                .collect(),
            assignment: r.assignment.clone(),
            log: with_log.then(|| r.log.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One row of the per-node PF table in a build report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfRow {
    pub node: NodeId,
    pub kind: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub pf: u32,
    pub max_pf: u32,
    pub est_latency: u64,
    pub sim_latency: u64,
    pub lut: u64,
    pub dsp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub schema: String,
    pub optimizer: String,
    pub metric: String,
    pub pipelining: bool,
    pub seed: u64,
    pub budget: ResourceBudget,
    pub usage: Usage,
    pub est_latency: u64,
    pub sim_latency: u64,
    pub pf1_latency: u64,
    pub speedup: f64,
    pub iterations: usize,
    pub units: usize,
    pub fused_units: usize,
    pub nodes: Vec<PfRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<Vec<LogEntry>>,
}

impl BuildReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Everything a build produces.
#[derive(Debug)]
pub struct Build {
    pub profile: Profile1,
    pub result: OptimizerResult,
    pub schedule: Schedule,
    pub design: VerilogDesign,
    pub check: CheckReport,
    pub sim: SimReport,
    pub report: BuildReport,
}

/// Full flow for one design: PF-1 profile, optimize, schedule, emit,
/// structural check, simulate. A non-clean structural check aborts.
pub fn build(
    dfg: &MatrixDfg,
    params: &CostModelParams,
    lib: &TemplateLibrary,
    cfg: &ToolConfig,
    inputs: Option<&Inputs>,
    with_log: bool,
) -> Result<Build, PipelineError> {
    let profile =
        profile_pf1(dfg, lib, cfg.seed).map_err(|e| PipelineError::new(Stage::Profile, e))?;
    let ctx = CostContext::new(dfg, params, &profile, lib);
    let result = optimize(&ctx, cfg)?;
    let a = &result.assignment;
    let schedule = build_schedule(dfg, a, cfg.pipelining, lib)
        .map_err(|e| PipelineError::new(Stage::Schedule, e))?;
    let design =
        emit(dfg, a, &schedule, lib, Some(&ctx)).map_err(|e| PipelineError::new(Stage::Emit, e))?;
    let check = structural_check(&design);
    if !check.ok() {
        let first: Vec<String> = check
            .violations
            .iter()
            .take(5)
            .map(|v| v.to_string())
            .collect();
        return Err(PipelineError::new(
            Stage::Check,
            format!(
                "{} structural violation(s): {}",
                check.violations.len(),
                first.join("; ")
            ),
        ));
    }
    let owned;
    let inputs = match inputs {
        Some(i) => i,
        None => {
            owned = random_inputs(dfg, cfg.seed);
            &owned
        }
    };
    let sim =
        run(dfg, a, &schedule, inputs, lib).map_err(|e| PipelineError::new(Stage::Simulate, e))?;
    let pf1_latency = pf1_makespan(dfg, lib, cfg.pipelining)?;
    let costs = ctx.node_costs(a);
    let nodes = dfg
        .nodes()
        .map(|n| PfRow {
            node: n.id,
            kind: n.kind,
            name: n.name.clone(),
            pf: a.pf(n.id),
            max_pf: n.max_pf(),
            est_latency: ctx.node_latency(n.id, a.pf(n.id)),
            sim_latency: sim.nodes[&n.id].duration(),
            lut: costs[&n.id].lut + costs[&n.id].shuffle_lut,
            dsp: costs[&n.id].dsp,
        })
        .collect();
    let report = BuildReport {
        schema: REPORT_SCHEMA.to_string(),
        optimizer: if cfg.pf1_only {
            "pf1".to_string()
        } else {
            cfg.optimizer.to_string()
        },
        metric: cfg.metric.to_string(),
        pipelining: cfg.pipelining,
        seed: cfg.seed,
        budget: cfg.budget,
        usage: result.usage,
        est_latency: result.est_latency,
        sim_latency: sim.total_cycles,
        pf1_latency,
        speedup: pf1_latency as f64 / sim.total_cycles.max(1) as f64,
        iterations: result.iterations,
        units: schedule.units().len(),
        fused_units: schedule.fused_units().count(),
        nodes,
        log: with_log.then(|| result.log.clone()),
    };
    Ok(Build {
        profile,
        result,
        schedule,
        design,
        check,
        sim,
        report,
    })
}

/// Simulated makespan with every PF at 1.
pub fn pf1_makespan(
    dfg: &MatrixDfg,
    lib: &TemplateLibrary,
    pipelining: bool,
) -> Result<u64, PipelineError> {
    simulated_makespan(dfg, &PfAssignment::uniform(dfg), lib, pipelining)
}

pub fn simulated_makespan(
    dfg: &MatrixDfg,
    a: &PfAssignment,
    lib: &TemplateLibrary,
    pipelining: bool,
) -> Result<u64, PipelineError> {
    let s = build_schedule(dfg, a, pipelining, lib)
        .map_err(|e| PipelineError::new(Stage::Schedule, e))?;
    run_timing(dfg, a, &s, lib)
        .map(|(_, m)| m)
        .map_err(|e| PipelineError::new(Stage::Simulate, e))
}

/// Deterministic per-design benchmark results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub nodes: usize,
    pub pf1_latency: u64,
    pub greedy_latency: u64,
    pub blackbox_latency: u64,
    pub greedy_est: u64,
    pub blackbox_est: u64,
    pub greedy_lut: u64,
    pub greedy_dsp: u64,
    pub blackbox_lut: u64,
    pub blackbox_dsp: u64,
    pub greedy_speedup: f64,
    pub blackbox_speedup: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub name: String,
    pub greedy_ms: f64,
    pub blackbox_ms: f64,
}

/// Both optimizer outcomes for one design.
#[derive(Debug)]
pub struct BenchCase {
    pub row: BenchRow,
    pub timing: TimingRow,
    pub greedy: Option<OptimizerResult>,
    pub blackbox: Option<OptimizerResult>,
}

/// Optimizes `dfg` with both optimizers and simulates each result.
pub fn bench_one(
    name: &str,
    dfg: &MatrixDfg,
    params: &CostModelParams,
    lib: &TemplateLibrary,
    cfg: &ToolConfig,
) -> BenchCase {
    let mut row = BenchRow {
        name: name.to_string(),
        nodes: dfg.compute_nodes().count(),
        pf1_latency: 0,
        greedy_latency: 0,
        blackbox_latency: 0,
        greedy_est: 0,
        blackbox_est: 0,
        greedy_lut: 0,
        greedy_dsp: 0,
        blackbox_lut: 0,
        blackbox_dsp: 0,
        greedy_speedup: 0.0,
        blackbox_speedup: 0.0,
        error: String::new(),
    };
    let mut timing = TimingRow {
        name: name.to_string(),
        greedy_ms: 0.0,
        blackbox_ms: 0.0,
    };
    let mut out = (None, None);
    let res = (|| -> Result<(), PipelineError> {
        let profile =
            profile_pf1(dfg, lib, cfg.seed).map_err(|e| PipelineError::new(Stage::Profile, e))?;
        let ctx = CostContext::new(dfg, params, &profile, lib);
        row.pf1_latency = pf1_makespan(dfg, lib, cfg.pipelining)?;
        for kind in [OptimizerKind::Greedy, OptimizerKind::Blackbox] {
            let c = ToolConfig {
                optimizer: kind,
                pf1_only: false,
                ..cfg.clone()
            };
            let r = optimize(&ctx, &c)?;
            let lat = simulated_makespan(dfg, &r.assignment, lib, cfg.pipelining)?;
            let ms = r.wall_time.as_secs_f64() * 1e3;
            let speed = row.pf1_latency as f64 / lat.max(1) as f64;
            match kind {
                OptimizerKind::Greedy => {
                    (row.greedy_latency, row.greedy_est, row.greedy_speedup) =
                        (lat, r.est_latency, speed);
                    (row.greedy_lut, row.greedy_dsp) = (r.usage.lut, r.usage.dsp);
                    timing.greedy_ms = ms;
                    out.0 = Some(r);
                }
                OptimizerKind::Blackbox => {
                    (row.blackbox_latency, row.blackbox_est, row.blackbox_speedup) =
                        (lat, r.est_latency, speed);
                    (row.blackbox_lut, row.blackbox_dsp) = (r.usage.lut, r.usage.dsp);
                    timing.blackbox_ms = ms;
                    out.1 = Some(r);
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = res {
        row.error = e.to_string();
    }
    BenchCase {
        row,
        timing,
        greedy: out.0,
        blackbox: out.1,
    }
}

/// Designs of a suite directory: every `.mfd` file and every DFG `.json`
/// document except `manifest.json`, in file-name order.
pub fn load_suite_dir(dir: &Path) -> Result<Vec<(String, MatrixDfg)>, PipelineError> {
    let io = |e: std::io::Error| PipelineError::new(Stage::Io, format!("{}: {e}", dir.display()));
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str());
            ext == Some("mfd")
                || (ext == Some("json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::new(
            Stage::Io,
            format!("{}: no .mfd or DFG .json files", dir.display()),
        ));
    }
    files
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("design")
                .to_string();
            load_design(p).map(|g| (name, g))
        })
        .collect()
}

/// Runs [`bench_one`] on every design; failures are recorded per row.
pub fn bench(
    designs: &[(String, MatrixDfg)],
    params: &CostModelParams,
    lib: &TemplateLibrary,
    cfg: &ToolConfig,
) -> Vec<BenchCase> {
    designs
        .iter()
        .map(|(n, g)| bench_one(n, g, params, lib, cfg))
        .collect()
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

/// Per-design rows followed by a `geomean` row over the successful ones.
pub fn summary_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "name",
        "nodes",
        "pf1_latency",
        "greedy_latency",
        "blackbox_latency",
        "greedy_est",
        "blackbox_est",
        "greedy_lut",
        "greedy_dsp",
        "blackbox_lut",
        "blackbox_dsp",
        "greedy_speedup",
        "blackbox_speedup",
        "greedy_over_blackbox",
        "error",
    ];
    w.write_record(header).expect("in-memory write");
    for r in rows {
        let ratio = if r.error.is_empty() {
            f3(r.greedy_latency as f64 / r.blackbox_latency.max(1) as f64)
        } else {
            String::new()
        };
        w.write_record([
            r.name.clone(),
            r.nodes.to_string(),
            r.pf1_latency.to_string(),
            r.greedy_latency.to_string(),
            r.blackbox_latency.to_string(),
            r.greedy_est.to_string(),
            r.blackbox_est.to_string(),
            r.greedy_lut.to_string(),
            r.greedy_dsp.to_string(),
            r.blackbox_lut.to_string(),
            r.blackbox_dsp.to_string(),
            f3(r.greedy_speedup),
            f3(r.blackbox_speedup),
            ratio,
            r.error.clone(),
        ])
        .expect("in-memory write");
    }
    let ok: Vec<&BenchRow> = rows.iter().filter(|r| r.error.is_empty()).collect();
    let gm = |f: &dyn Fn(&BenchRow) -> f64| {
        f3(crate::bench::geomean(
            &ok.iter().map(|r| f(r)).collect::<Vec<_>>(),
        ))
    };
    let mut agg = vec![String::from("geomean"), String::new()];
    agg.push(gm(&|r| r.pf1_latency as f64));
    agg.push(gm(&|r| r.greedy_latency as f64));
    agg.push(gm(&|r| r.blackbox_latency as f64));
    agg.extend(std::iter::repeat_n(String::new(), 6));
    agg.push(gm(&|r| r.greedy_speedup));
    agg.push(gm(&|r| r.blackbox_speedup));
    agg.push(gm(&|r| {
        r.greedy_latency as f64 / r.blackbox_latency.max(1) as f64
    }));
    agg.push(format!(
        "{} of {} failed",
        rows.len() - ok.len(),
        rows.len()
    ));
    w.write_record(&agg).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is UTF-8")
}

pub fn timings_csv(rows: &[TimingRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    let (g, b): (f64, f64) = rows
        .iter()
        .fold((0.0, 0.0), |a, r| (a.0 + r.greedy_ms, a.1 + r.blackbox_ms));
    w.serialize(TimingRow {
        name: "total".into(),
        greedy_ms: g,
        blackbox_ms: b,
    })
    .expect("in-memory write");
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is UTF-8")
}

/// Formats a wall time for the stderr log.
pub fn fmt_wall(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimizer_kind_strings() {
        assert_eq!(
            "greedy".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Greedy
        );
        assert_eq!(
            "blackbox".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Blackbox
        );
        assert!("ilp".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn defaults_match_evaluated_configuration() {
        let c = ToolConfig::default();
        assert_eq!(
            c.budget,
            ResourceBudget {
                lut: 20800,
                dsp: 90
            }
        );
        assert_eq!(c.optimizer, OptimizerKind::Greedy);
        assert_eq!(c.metric, BenefitMetric::LatencyPerLut);
        assert!(c.pipelining);
    }

    #[test]
    fn error_is_stage_tagged() {
        let e = PipelineError::new(Stage::Optimize, "boom");
        assert_eq!(e.to_string(), "[optimize] boom");
    }
}
