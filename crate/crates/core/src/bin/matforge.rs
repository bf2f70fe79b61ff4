use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use matforge::bench::write_suite;
use matforge::cost::{fit, read_samples_csv, write_samples_csv, CostModelParams};
use matforge::dfg::{pf_constraints_ok, MatrixDfg, PfAssignment, DEFAULT_PATHS_CAP};
use matforge::dsl::compile_source;
use matforge::optimizer::{BenefitMetric, CostContext, ResourceBudget, RoundingMode};
use matforge::pipeline::{
    bench, build, fmt_wall, frontend_error, load_design, load_suite_dir, optimize, summary_csv,
    timings_csv, OptimizeReport, OptimizerKind, PipelineError, Stage, ToolConfig,
};
use matforge::schedule::build_schedule;
use matforge::sim::{
    gen_training_data, inputs_from_csv_dir, inputs_from_json, profile_pf1, random_inputs, run,
    Inputs, DEFAULT_PF_GRID,
};
use matforge::templates::TemplateLibrary;

#[derive(Parser)]
#[command(
    name = "matforge",
    version,
    about = "Matrix DSL to FPGA Verilog compiler"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// LUT budget
    #[arg(long, global = true, default_value_t = ResourceBudget::ARTY.lut)]
    budget_lut: u64,
    /// DSP budget
    #[arg(long, global = true, default_value_t = ResourceBudget::ARTY.dsp)]
    budget_dsp: u64,
    /// greedy or blackbox
    #[arg(long, global = true, default_value = "greedy")]
    optimizer: OptimizerKind,
    /// latency or latency-per-lut (greedy only)
    #[arg(long, global = true, default_value = "latency-per-lut")]
    metric: BenefitMetric,
    /// Disable fusion of linear-time clusters
    #[arg(long, global = true)]
    no_pipeline: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Template library directory (falls back to $MATFORGE_TEMPLATES, then the builtin set)
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_PATHS_CAP)]
    paths_cap: usize,
    #[arg(long, global = true, default_value_t = 16)]
    word_width: u32,
    /// Round black-box PFs to nearest instead of down
    #[arg(long, global = true)]
    round_nearest: bool,
}

/// Where the cost-model parameters come from.
#[derive(Args)]
struct ParamsArgs {
    /// Trained parameters from `matforge train`
    #[arg(long, conflicts_with = "train")]
    params: Option<PathBuf>,
    /// Regenerate the parameters in-process
    #[arg(long)]
    train: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, type-check and lower a program to DFG JSON
    Compile {
        src: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write the AST as JSON (`-` for stdout)
        #[arg(long)]
        dump_ast: Option<PathBuf>,
    },
    /// Measure the training grid on the simulator and fit cost models
    Train {
        #[arg(short, long, default_value = "params.json")]
        out: PathBuf,
        /// Fit from this sample CSV instead of measuring
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Write the measured samples as CSV
        #[arg(long)]
        samples_out: Option<PathBuf>,
    },
    /// Assign parallelism factors
    Optimize {
        design: PathBuf,
        #[command(flatten)]
        params: ParamsArgs,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Include the iteration log in the report
        #[arg(long)]
        log: bool,
        #[arg(long)]
        pf1_only: bool,
    },
    /// Simulate a design under an assignment
    Simulate {
        design: PathBuf,
        /// Report from `matforge optimize`; all PFs are 1 without it
        #[arg(long)]
        assignment: Option<PathBuf>,
        /// Input tensors: a JSON file or a directory of `<name>.csv`
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Optimize and write Verilog plus its manifest
    Emit {
        design: PathBuf,
        #[command(flatten)]
        params: ParamsArgs,
        #[arg(long, default_value = "out")]
        emit_dir: PathBuf,
        #[arg(long)]
        pf1_only: bool,
    },
    /// Full flow: profile, optimize, schedule, emit, check, simulate
    Build {
        design: PathBuf,
        #[command(flatten)]
        params: ParamsArgs,
        #[arg(long)]
        emit_dir: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        pf1_only: bool,
        #[arg(long)]
        log: bool,
    },
    /// Compare both optimizers over a directory of designs
    Bench {
        suite: PathBuf,
        #[command(flatten)]
        params: ParamsArgs,
        /// Directory for summary.csv and timings.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write the synthetic benchmark suite
    Suite { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn config(g: &Global, pf1_only: bool) -> ToolConfig {
    ToolConfig {
        budget: ResourceBudget {
            lut: g.budget_lut,
            dsp: g.budget_dsp,
        },
        optimizer: g.optimizer,
        metric: g.metric,
        pipelining: !g.no_pipeline,
        seed: g.seed,
        paths_cap: g.paths_cap,
        templates: g.templates.clone(),
        word_width: g.word_width,
        pf1_only,
        rounding: if g.round_nearest {
            RoundingMode::Nearest
        } else {
            RoundingMode::Down
        },
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(Stage::Io, format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn load_params(p: &ParamsArgs, lib: &TemplateLibrary) -> Result<CostModelParams, PipelineError> {
    match (&p.params, p.train) {
        (Some(path), _) => CostModelParams::from_json(&read(path)?)
            .map_err(|e| PipelineError::new(Stage::Train, e)),
        (None, true) => {
            matforge::sim::train_params(lib).map_err(|e| PipelineError::new(Stage::Train, e))
        }
        (None, false) => Err(PipelineError::new(
            Stage::Train,
            "no cost model: pass --params FILE or --train",
        )),
    }
}

fn load_inputs(dfg: &MatrixDfg, path: Option<&Path>, seed: u64) -> Result<Inputs, PipelineError> {
    match path {
        None => Ok(random_inputs(dfg, seed)),
        Some(p) if p.is_dir() => {
            inputs_from_csv_dir(dfg, p).map_err(|e| PipelineError::new(Stage::Simulate, e))
        }
        Some(p) => inputs_from_json(&read(p)?).map_err(|e| PipelineError::new(Stage::Simulate, e)),
    }
}

fn emit_files(dir: &Path, design: &matforge::codegen::VerilogDesign) -> Result<(), PipelineError> {
    write(
        &dir.join(format!("{}.v", design.manifest.top)),
        &design.text(),
    )?;
    write(&dir.join("manifest.json"), &design.manifest.to_json())
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::Compile { src, out, dump_ast } => {
            let text = read(&src)?;
            let c = compile_source(&text).map_err(|e| frontend_error(&src, &e))?;
            if let Some(p) = dump_ast {
                if p.as_os_str() == "-" {
                    println!("{}", c.ast.to_json());
                } else {
                    write(&p, &(c.ast.to_json() + "\n"))?;
                }
            }
            let json = c.dfg.to_json() + "\n";
            match out {
                Some(p) => write(&p, &json)?,
                None => print!("{json}"),
            }
            eprintln!(
                "compiled {}: {} nodes, {} compute",
                src.display(),
                c.dfg.len(),
                c.dfg.compute_nodes().count()
            );
        }
        Cmd::Train {
            out,
            samples,
            samples_out,
        } => {
            let lib = config(g, false).library()?;
            let data = match &samples {
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| io_err(p, e))?;
                    read_samples_csv(f).map_err(|e| PipelineError::new(Stage::Train, e))?
                }
                None => gen_training_data(
                    &matforge::cost::default_training_grid(),
                    DEFAULT_PF_GRID,
                    &lib,
                ),
            };
            if let Some(p) = samples_out {
                let mut buf = Vec::new();
                write_samples_csv(&mut buf, &data)
                    .map_err(|e| PipelineError::new(Stage::Train, e))?;
                write(&p, &String::from_utf8_lossy(&buf))?;
            }
            let params = fit(&data, &lib).map_err(|e| PipelineError::new(Stage::Train, e))?;
            write(&out, &params.to_json())?;
            eprintln!("trained on {} samples -> {}", data.len(), out.display());
        }
        Cmd::Optimize {
            design,
            params,
            report,
            log,
            pf1_only,
        } => {
            let cfg = config(g, pf1_only);
            let lib = cfg.library()?;
            let dfg = load_design(&design)?;
            let params = load_params(&params, &lib)?;
            let prof = profile_pf1(&dfg, &lib, cfg.seed)
                .map_err(|e| PipelineError::new(Stage::Profile, e))?;
            let ctx = CostContext::new(&dfg, &params, &prof, &lib);
            let r = optimize(&ctx, &cfg)?;
            eprintln!(
                "{}: est latency {} cycles, {}, {} iterations in {}",
                cfg.optimizer,
                r.est_latency,
                r.usage,
                r.iterations,
                fmt_wall(r.wall_time)
            );
            let text = OptimizeReport::new(&dfg, &r, &cfg, log).to_json();
            match report {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Simulate {
            design,
            assignment,
            inputs,
            report,
        } => {
            let cfg = config(g, false);
            let lib = cfg.library()?;
            let dfg = load_design(&design)?;
            let a = match &assignment {
                Some(p) => {
                    OptimizeReport::from_json(&read(p)?)
                        .map_err(|e| {
                            PipelineError::new(Stage::Simulate, format!("{}: {e}", p.display()))
                        })?
                        .assignment
                }
                None => PfAssignment::uniform(&dfg),
            };
            let v = pf_constraints_ok(&dfg, &a);
            if !v.is_empty() {
                return Err(PipelineError::new(
                    Stage::Schedule,
                    format!("{} PF constraint violation(s)", v.len()),
                ));
            }
            let sched = build_schedule(&dfg, &a, cfg.pipelining, &lib)
                .map_err(|e| PipelineError::new(Stage::Schedule, e))?;
            let ins = load_inputs(&dfg, inputs.as_deref(), cfg.seed)?;
            let r = run(&dfg, &a, &sched, &ins, &lib)
                .map_err(|e| PipelineError::new(Stage::Simulate, e))?;
            eprintln!("simulated {} cycles", r.total_cycles);
            let text = r.to_json() + "\n";
            match report {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Emit {
            design,
            params,
            emit_dir,
            pf1_only,
        } => {
            let cfg = config(g, pf1_only);
            let lib = cfg.library()?;
            let dfg = load_design(&design)?;
            let params = load_params(&params, &lib)?;
            let b = build(&dfg, &params, &lib, &cfg, None, false)?;
            emit_files(&emit_dir, &b.design)?;
            eprintln!(
                "emitted {} modules to {} ({})",
                b.design.modules.len() + 1,
                emit_dir.display(),
                b.result.usage
            );
        }
        Cmd::Build {
            design,
            params,
            emit_dir,
            report,
            inputs,
            pf1_only,
            log,
        } => {
            let cfg = config(g, pf1_only);
            let lib = cfg.library()?;
            let dfg = load_design(&design)?;
            let params = load_params(&params, &lib)?;
            let ins = load_inputs(&dfg, inputs.as_deref(), cfg.seed)?;
            let b = build(&dfg, &params, &lib, &cfg, Some(&ins), log)?;
            eprintln!(
                "{} finished in {}; est {} cycles, simulated {} cycles ({:.2}x over PF 1), {}",
                b.report.optimizer,
                fmt_wall(b.result.wall_time),
                b.report.est_latency,
                b.report.sim_latency,
                b.report.speedup,
                b.report.usage
            );
            if let Some(dir) = emit_dir {
                emit_files(&dir, &b.design)?;
            }
            let text = b.report.to_json();
            match report {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Bench { suite, params, out } => {
            let cfg = config(g, false);
            let lib = cfg.library()?;
            let designs = load_suite_dir(&suite)?;
            let params = load_params(&params, &lib)?;
            let cases = bench(&designs, &params, &lib, &cfg);
            for c in &cases {
                if c.row.error.is_empty() {
                    eprintln!(
                        "{}: greedy {} cycles in {:.3} ms, blackbox {} cycles in {:.3} ms",
                        c.row.name,
                        c.row.greedy_latency,
                        c.timing.greedy_ms,
                        c.row.blackbox_latency,
                        c.timing.blackbox_ms
                    );
                } else {
                    eprintln!("{}: {}", c.row.name, c.row.error);
                }
            }
            let rows: Vec<_> = cases.iter().map(|c| c.row.clone()).collect();
            let times: Vec<_> = cases.iter().map(|c| c.timing.clone()).collect();
            write(&out.join("summary.csv"), &summary_csv(&rows))?;
            write(&out.join("timings.csv"), &timings_csv(&times))?;
            if rows.iter().any(|r| !r.error.is_empty()) {
                return Err(PipelineError::new(
                    Stage::Optimize,
                    "some designs failed; see summary.csv",
                ));
            }
        }
        Cmd::Suite { dir } => {
            let m = write_suite(&dir).map_err(|e| io_err(&dir, e))?;
            eprintln!("wrote {} designs to {}", m.cases.len(), dir.display());
        }
    }
    Ok(())
}
