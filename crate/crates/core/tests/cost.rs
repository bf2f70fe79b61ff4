use std::sync::OnceLock;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use matforge::cost::{
    default_training_grid, fit, fit_coeffs, predict_dsp, predict_latency, predict_lut,
    read_samples_csv, write_samples_csv, CostModelParams, FitError, TrainingSample,
};
use matforge::dfg::{NodeDims, OpKind};
use matforge::sim::{gen_training_data, DEFAULT_PF_GRID};
use matforge::templates::TemplateLibrary;
use matforge::tensor::Shape::*;

fn lib() -> &'static TemplateLibrary {
    static LIB: OnceLock<TemplateLibrary> = OnceLock::new();
    LIB.get_or_init(TemplateLibrary::builtin)
}

fn samples() -> &'static Vec<TrainingSample> {
    static S: OnceLock<Vec<TrainingSample>> = OnceLock::new();
    S.get_or_init(|| gen_training_data(&default_training_grid(), DEFAULT_PF_GRID, lib()))
}

fn params() -> &'static CostModelParams {
    static P: OnceLock<CostModelParams> = OnceLock::new();
    P.get_or_init(|| fit(samples(), lib()).unwrap())
}

#[test]
fn exact_ratio_data_is_recovered() {
    let (a, b, g) = (0.3, 0.01, 0.7);
    let (au, bu) = (0.6, 0.4);
    let pts: Vec<(u32, f64, f64)> = [1u32, 2, 3, 5, 8, 13]
        .iter()
        .map(|&p| {
            let p_ = p as f64;
            (p, a + b * p_ + g / p_, au + bu * p_)
        })
        .collect();
    let (c, rl, ru) = fit_coeffs(&pts).unwrap();
    for (got, want) in [
        (c.alpha_l, a),
        (c.beta_l, b),
        (c.gamma_l, g),
        (c.alpha_lut, au),
        (c.beta_lut, bu),
    ] {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert!(rl < 1e-9 && ru < 1e-9);
}

#[test]
fn three_distinct_pfs_are_rank_deficient() {
    assert!(fit_coeffs(&[(1, 1.0, 1.0), (2, 0.6, 1.4), (4, 0.4, 2.2), (4, 0.4, 2.2)]).is_none());
    let dims = NodeDims::infer(OpKind::ReLU, vec![Vector(64)], None).unwrap();
    let few: Vec<TrainingSample> = [1u32, 2, 4]
        .iter()
        .map(|&pf| TrainingSample {
            kind: OpKind::ReLU,
            dims: dims.clone(),
            pf,
            latency: lib().latency(OpKind::ReLU, &dims, pf),
            lut: lib().lut(OpKind::ReLU, &dims, pf),
        })
        .collect();
    assert!(matches!(
        fit(&few, lib()),
        Err(FitError::RankDeficient { distinct_pf: 3, .. })
    ));
    assert!(matches!(fit(&[], lib()), Err(FitError::Empty)));
}

#[test]
fn refit_ignores_sample_order() {
    let mut shuffled = samples().clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(17));
    let again = fit(&shuffled, lib()).unwrap();
    let a = serde_json::to_value(params()).unwrap();
    let b = serde_json::to_value(&again).unwrap();
    assert_eq!(a, b);
}

#[test]
fn samples_survive_a_csv_round_trip() {
    let mut buf = Vec::new();
    write_samples_csv(&mut buf, samples()).unwrap();
    let back = read_samples_csv(buf.as_slice()).unwrap();
    assert_eq!(&back, samples());
}

#[test]
fn dsp_prediction_is_one_per_pe_for_dsp_kinds() {
    for kind in OpKind::compute_kinds() {
        let uses = matches!(
            kind,
            OpKind::MatMul
                | OpKind::SpMV
                | OpKind::Hadamard
                | OpKind::ScalarMatMul
                | OpKind::DotProduct
                | OpKind::OuterProduct
        );
        for pf in [1u32, 2, 7, 64] {
            assert_eq!(
                params().predict_dsp(kind, pf),
                if uses { pf as u64 } else { 0 },
                "{kind}"
            );
        }
    }
}

#[test]
fn params_survive_a_json_round_trip() {
    let p = params();
    assert_eq!(&CostModelParams::from_json(&p.to_json()).unwrap(), p);
}

proptest! {
    #[test]
    fn dsp_is_linear_in_pf(alpha in 0u32..8, p in 1u32..512, q in 1u32..512) {
        prop_assert_eq!(predict_dsp(alpha, p + q), predict_dsp(alpha, p) + predict_dsp(alpha, q));
        prop_assert_eq!(predict_dsp(alpha, 1), alpha as u64);
    }

    #[test]
    fn latency_never_rises_below_the_turning_point(l1 in 1u64..200_000, pick in any::<prop::sample::Index>()) {
        let classes: Vec<_> = params().kinds.values().flat_map(|k| &k.classes).collect();
        let c = classes[pick.index(classes.len())].coeffs;
        prop_assume!(c.gamma_l > 0.0);
        let turn = if c.beta_l > 0.0 { (c.gamma_l / c.beta_l).sqrt() } else { 4096.0 };
        let top = turn.floor().min(4096.0) as u32;
        for pf in 1..top {
            prop_assert!(predict_latency(&c, l1, pf + 1) <= predict_latency(&c, l1, pf), "pf {}", pf);
        }
    }

    #[test]
    fn lut_never_falls_with_pf(l1 in 1u64..50_000, pick in any::<prop::sample::Index>()) {
        let classes: Vec<_> = params().kinds.values().flat_map(|k| &k.classes).collect();
        let c = classes[pick.index(classes.len())].coeffs;
        prop_assume!(c.beta_lut >= 0.0);
        for pf in 1..64 {
            prop_assert!(predict_lut(&c, l1, pf + 1) >= predict_lut(&c, l1, pf));
        }
    }

    #[test]
    fn predictions_are_at_least_one(l1 in 0u64..10, pf in 1u32..64, pick in any::<prop::sample::Index>()) {
        let classes: Vec<_> = params().kinds.values().flat_map(|k| &k.classes).collect();
        let c = classes[pick.index(classes.len())].coeffs;
        prop_assert!(predict_latency(&c, l1, pf) >= 1);
        prop_assert!(predict_lut(&c, l1, pf) >= 1);
    }
}
