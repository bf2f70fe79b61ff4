//! Fits the latency and LUT models on simulator measurements and checks
//! them against PF values left out of training.

use matforge::cost::{default_training_grid, fit, predict_latency, predict_lut};
use matforge::sim::{gen_training_data, DEFAULT_PF_GRID};
use matforge::templates::TemplateLibrary;

fn main() {
    let lib = TemplateLibrary::builtin();
    let grid = default_training_grid();
    let samples = gen_training_data(&grid, DEFAULT_PF_GRID, &lib);
    let params = fit(&samples, &lib).expect("grid is well posed");
    println!(
        "{} samples over {} dimension sets",
        samples.len(),
        grid.len()
    );

    for (kind, kp) in &params.kinds {
        let Some(c) = kp.classes.first() else {
            continue;
        };
        println!(
            "{:<12} {:>2} classes; {}: latency {:.3}{:+.4}p{:+.3}/p, lut {:.3}{:+.3}p",
            kind.name(),
            kp.classes.len(),
            c.dims,
            c.coeffs.alpha_l,
            c.coeffs.beta_l,
            c.coeffs.gamma_l,
            c.coeffs.alpha_lut,
            c.coeffs.beta_lut
        );
    }

    println!("\nheld-out PFs:");
    let held: Vec<u32> = (1..=32).filter(|p| p % 4 == 3).collect();
    let test = gen_training_data(&grid, &held, &lib);
    let base = gen_training_data(&grid, &[1], &lib);
    let (mut el, mut eu, mut n) = (0.0, 0.0, 0.0);
    for s in &test {
        let b = base
            .iter()
            .find(|b| b.kind == s.kind && b.dims == s.dims)
            .unwrap();
        let c = params.coeffs(s.kind, &s.dims);
        el += (predict_latency(&c, b.latency, s.pf) as f64 - s.latency as f64).abs()
            / s.latency as f64;
        eu += (predict_lut(&c, b.lut, s.pf) as f64 - s.lut as f64).abs() / s.lut as f64;
        n += 1.0;
    }
    println!(
        "  mean relative error: latency {:.2}%, LUT {:.2}% over {n} points",
        100.0 * el / n,
        100.0 * eu / n
    );
}
