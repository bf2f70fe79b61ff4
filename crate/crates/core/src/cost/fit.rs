use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::{Coeffs, CostModelParams, DimsClass, KindParams, TrainingSample, PARAMS_SCHEMA};
use crate::dfg::{max_pf, NodeDims, OpKind};
use crate::templates::TemplateLibrary;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("{kind} {dims}: design matrix is rank deficient ({distinct_pf} distinct PF values, need at least 4)")]
    RankDeficient {
        kind: OpKind,
        dims: String,
        distinct_pf: usize,
    },
    #[error("{kind} {dims}: no PF=1 sample to normalize against")]
    MissingPf1 { kind: OpKind, dims: String },
    #[error("{kind} {dims}: PF=1 sample has zero latency or LUT")]
    ZeroBaseline { kind: OpKind, dims: String },
    #[error("no training samples")]
    Empty,
}

/// Least squares `x` minimizing `|A x - b|`, or `None` if `A` lacks full
/// column rank.
fn lstsq(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let n = a.ncols();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > smax * 1e-10)
        .count();
    if rank < n || smax == 0.0 {
        return None;
    }
    svd.solve(&b, smax * 1e-12).ok()
}

fn rmse(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = a * x - b;
    (r.norm_squared() / b.len() as f64).sqrt()
}

/// Fits one coefficient set from `(pf, latency/latency1, lut/lut1)` points.
///
/// Returns the coefficients and the RMS relative error of both fits, or `None` when
/// fewer than four distinct PF values make the system singular.
pub fn fit_coeffs(points: &[(u32, f64, f64)]) -> Option<(Coeffs, f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|x, y| x.partial_cmp(y).expect("finite ratios"));
    let distinct: BTreeSet<u32> = pts.iter().map(|p| p.0).collect();
    if distinct.len() < 4 {
        return None;
    }
    let n = pts.len();
    // Rows are scaled by 1/target so the residual is a relative error.
    let al = DMatrix::from_fn(n, 3, |r, c| {
        let p = pts[r].0 as f64;
        [1.0, p, 1.0 / p][c] / pts[r].1
    });
    let bl = DVector::from_element(n, 1.0);
    let au = DMatrix::from_fn(n, 2, |r, c| [1.0, pts[r].0 as f64][c] / pts[r].2);
    let bu = DVector::from_element(n, 1.0);
    let xl = lstsq(al.clone(), bl.clone())?;
    let xu = lstsq(au.clone(), bu.clone())?;
    let coeffs = Coeffs {
        alpha_l: xl[0],
        beta_l: xl[1],
        gamma_l: xl[2],
        alpha_lut: xu[0],
        beta_lut: xu[1],
    };
    Some((coeffs, rmse(&al, &xl, &bl), rmse(&au, &xu, &bu)))
}

/// Fits per-(kind, dimension set) coefficients by least squares on ratios
/// to the PF=1 sample of each set. Sets whose kind admits only PF 1 carry
/// no information and are skipped.
pub fn fit(samples: &[TrainingSample], lib: &TemplateLibrary) -> Result<CostModelParams, FitError> {
    if samples.is_empty() {
        return Err(FitError::Empty);
    }
    let mut groups: BTreeMap<(OpKind, NodeDims), Vec<&TrainingSample>> = BTreeMap::new();
    for s in samples {
        groups.entry((s.kind, s.dims.clone())).or_default().push(s);
    }
    let mut params = CostModelParams::identity(lib);
    params.schema = PARAMS_SCHEMA.into();
    for ((kind, dims), group) in groups {
        if max_pf(kind, &dims) <= 1 {
            continue;
        }
        let name = dims.encode();
        let base = group
            .iter()
            .filter(|s| s.pf == 1)
            .min_by_key(|s| (s.latency, s.lut))
            .ok_or_else(|| FitError::MissingPf1 {
                kind,
                dims: name.clone(),
            })?;
        if base.latency == 0 || base.lut == 0 {
            return Err(FitError::ZeroBaseline { kind, dims: name });
        }
        let points: Vec<(u32, f64, f64)> = group
            .iter()
            .map(|s| {
                (
                    s.pf,
                    s.latency as f64 / base.latency as f64,
                    s.lut as f64 / base.lut as f64,
                )
            })
            .collect();
        let distinct_pf = points.iter().map(|p| p.0).collect::<BTreeSet<_>>().len();
        let (coeffs, rmse_latency, rmse_lut) =
            fit_coeffs(&points).ok_or(FitError::RankDeficient {
                kind,
                dims: name.clone(),
                distinct_pf,
            })?;
        params
            .kinds
            .entry(kind)
            .or_insert_with(|| KindParams {
                alpha_dsp: lib.dsp_per_pe(kind),
                classes: vec![],
            })
            .classes
            .push(DimsClass {
                dims: name,
                signature: dims.signature(),
                coeffs,
                rmse_latency,
                rmse_lut,
            });
    }
    Ok(params)
}
