//! Full build of one program, writing `mf_top.v` and `manifest.json`.
//!
//!     cargo run --example emit_verilog -- out_dir

use std::env;
use std::fs;
use std::path::PathBuf;

use matforge::dsl::compile_source;
use matforge::pipeline::{build, ToolConfig};
use matforge::sim::train_params;

fn main() {
    let dir = env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| env::temp_dir().join("matforge-emit"));
    let dfg = compile_source(include_str!("programs/sparse_tree.mfd"))
        .unwrap()
        .dfg;
    let cfg = ToolConfig::default();
    let lib = cfg.library().unwrap();
    let params = train_params(&lib).unwrap();
    let b = build(&dfg, &params, &lib, &cfg, None, false).unwrap();

    fs::create_dir_all(&dir).unwrap();
    let top = dir.join(format!("{}.v", b.design.manifest.top));
    fs::write(&top, b.design.text()).unwrap();
    fs::write(dir.join("manifest.json"), b.design.manifest.to_json()).unwrap();

    let t = &b.design.manifest.totals;
    println!("wrote {}", top.display());
    println!(
        "modules: {}",
        b.design
            .modules
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    );
    println!(
        "structural check: {} modules, {} instances, {} violations",
        b.check.modules,
        b.check.instances,
        b.check.violations.len()
    );
    println!(
        "LUT {} table / {} estimated + {} shuffle, DSP {}",
        t.lut_table, t.lut_estimate, t.shuffle_lut, t.dsp
    );
    println!(
        "simulated {} cycles vs {} at PF 1",
        b.report.sim_latency, b.report.pf1_latency
    );
}
