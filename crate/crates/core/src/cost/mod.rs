//! Regression cost models for latency, LUT and DSP as functions of PF.
//!
//! Latency and LUT are predicted as multiples of the node's PF-1 figures:
//! `(α_L + β_L·p + γ_L/p)·Latency[1]` and `(α_LUT + β_LUT·p)·LUT[1]`. DSP is
//! `α_DSP·p` with `α_DSP` taken from the template library.
//!
//! Coefficients are fitted per operation kind and per training dimension
//! set; a node uses the set nearest to its own dimensions.

mod fit;
mod samples;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dfg::{NodeDims, NodeId, OpKind};
use crate::templates::TemplateLibrary;

pub use fit::{fit, fit_coeffs, FitError};
pub use samples::{
    default_training_grid, read_samples_csv, write_samples_csv, SampleError, TrainingSample,
};

pub const PARAMS_SCHEMA: &str = "matforge.params/1";

/// One fitted coefficient set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coeffs {
    pub alpha_l: f64,
    pub beta_l: f64,
    pub gamma_l: f64,
    pub alpha_lut: f64,
    pub beta_lut: f64,
}

impl Coeffs {
    /// PF-independent model: every PF costs what PF 1 costs.
    pub const IDENTITY: Coeffs = Coeffs {
        alpha_l: 1.0,
        beta_l: 0.0,
        gamma_l: 0.0,
        alpha_lut: 1.0,
        beta_lut: 0.0,
    };

    pub fn latency_ratio(&self, pf: f64) -> f64 {
        self.alpha_l + self.beta_l * pf + self.gamma_l / pf
    }

    pub fn lut_ratio(&self, pf: f64) -> f64 {
        self.alpha_lut + self.beta_lut * pf
    }

    pub fn latency_sum(&self) -> f64 {
        self.alpha_l + self.beta_l + self.gamma_l
    }

    pub fn lut_sum(&self) -> f64 {
        self.alpha_lut + self.beta_lut
    }
}

/// Coefficients fitted on one training dimension set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsClass {
    pub dims: String,
    pub signature: Vec<u64>,
    pub coeffs: Coeffs,
    pub rmse_latency: f64,
    pub rmse_lut: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindParams {
    pub alpha_dsp: u32,
    pub classes: Vec<DimsClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelParams {
    pub schema: String,
    pub library_version: String,
    pub kinds: BTreeMap<OpKind, KindParams>,
}

fn log_distance(a: &[u64], b: &[u64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x.max(1) as f64).log2() - (y.max(1) as f64).log2();
            d * d
        })
        .sum()
}

/// `ceil(x)` tolerant of floating-point noise just above an integer.
fn ceil_cycles(x: f64) -> u64 {
    let c = (x - 1e-9).ceil();
    if c < 1.0 {
        1
    } else {
        c as u64
    }
}

/// `ceil((α + β·pf + γ/pf)·latency1)`, at least 1.
pub fn predict_latency(c: &Coeffs, latency1: u64, pf: u32) -> u64 {
    ceil_cycles(c.latency_ratio(pf as f64) * latency1 as f64)
}

/// `ceil((α_LUT + β_LUT·pf)·lut1)`, at least 1.
pub fn predict_lut(c: &Coeffs, lut1: u64, pf: u32) -> u64 {
    ceil_cycles(c.lut_ratio(pf as f64) * lut1 as f64)
}

pub fn predict_dsp(alpha_dsp: u32, pf: u32) -> u64 {
    alpha_dsp as u64 * pf as u64
}

impl CostModelParams {
    /// Parameters with no fitted classes: PF never changes predictions.
    pub fn identity(lib: &TemplateLibrary) -> Self {
        CostModelParams {
            schema: PARAMS_SCHEMA.into(),
            library_version: lib.version().into(),
            kinds: OpKind::ALL
                .into_iter()
                .map(|k| {
                    (
                        k,
                        KindParams {
                            alpha_dsp: lib.dsp_per_pe(k),
                            classes: vec![],
                        },
                    )
                })
                .collect(),
        }
    }

    /// Coefficients for a node: the class whose dimensions are nearest in
    /// log space, identity for kinds without classes.
    pub fn coeffs(&self, kind: OpKind, dims: &NodeDims) -> Coeffs {
        self.class_for(kind, dims)
            .map(|c| c.coeffs)
            .unwrap_or(Coeffs::IDENTITY)
    }

    pub fn class_for(&self, kind: OpKind, dims: &NodeDims) -> Option<&DimsClass> {
        let kp = self.kinds.get(&kind)?;
        let sig = dims.signature();
        let same_len = kp.classes.iter().filter(|c| c.signature.len() == sig.len());
        let pool: Vec<&DimsClass> = if same_len.clone().next().is_some() {
            same_len.collect()
        } else {
            kp.classes.iter().collect()
        };
        let mut best: Option<(f64, &DimsClass)> = None;
        for c in pool {
            let d = log_distance(&c.signature, &sig);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        best.map(|(_, c)| c)
    }

    pub fn alpha_dsp(&self, kind: OpKind) -> u32 {
        self.kinds.get(&kind).map(|k| k.alpha_dsp).unwrap_or(0)
    }

    pub fn predict_latency(&self, kind: OpKind, dims: &NodeDims, latency1: u64, pf: u32) -> u64 {
        if latency1 == 0 {
            return 0;
        }
        predict_latency(&self.coeffs(kind, dims), latency1, pf)
    }

    pub fn predict_lut(&self, kind: OpKind, dims: &NodeDims, lut1: u64, pf: u32) -> u64 {
        if lut1 == 0 {
            return 0;
        }
        predict_lut(&self.coeffs(kind, dims), lut1, pf)
    }

    pub fn predict_dsp(&self, kind: OpKind, pf: u32) -> u64 {
        predict_dsp(self.alpha_dsp(kind), pf)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let p: CostModelParams = serde_json::from_str(text)?;
        if p.schema != PARAMS_SCHEMA {
            return Err(serde::de::Error::custom(format!(
                "unsupported schema `{}` (expected `{PARAMS_SCHEMA}`)",
                p.schema
            )));
        }
        Ok(p)
    }
}

/// PF-1 latency and LUT figures of one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeProfile {
    pub latency1: u64,
    pub lut1: u64,
}

/// PF-1 profile of a whole DFG, keyed by node.
pub type Profile1 = BTreeMap<NodeId, NodeProfile>;
