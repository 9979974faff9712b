//! Lower-Lipschitz certificates for the pooling operators.
//!
//! Every bound is reported as a [`CertificateReport`]. Bounds that can be
//! computed by exhaustive enumeration are flagged [`Method::Exact`]; the
//! rest rely on sampling (of splits, cells, rotations or cones) and are
//! upper estimates of the quantity they target.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frames::Frame;
use crate::pooling::Operator;

mod empirical;
mod halfrect;
mod phaseless;
mod splits;
mod switched;

pub use empirical::{empirical_lipschitz, injectivity_probe, lipschitz_ratio, ProbeReport};
pub use halfrect::halfrect_bound;
pub use phaseless::{l2pool_bound, phaseless_bound, rectified_l2pool_bound};
pub use splits::{split_minimum, SplitMinimum, SplitSearch};
pub use switched::{
    cone_angle, l1pool_bound, maxout_bound, maxpool_bound, sample_cones, ConeSample, SwitchKind,
    SwitchedOptions,
};

/// Largest subset size enumerated exhaustively; beyond it subsets are
/// sampled.
pub const DEFAULT_EXACT_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundName {
    #[serde(rename = "phaseless_A")]
    PhaselessA,
    #[serde(rename = "halfrect_A0")]
    HalfrectA0,
    #[serde(rename = "l2pool_A2")]
    L2poolA2,
    #[serde(rename = "maxpool_A")]
    MaxpoolA,
    #[serde(rename = "l1pool_A")]
    L1poolA,
    #[serde(rename = "maxout_A")]
    MaxoutA,
    #[serde(rename = "upper_B")]
    UpperB,
    #[serde(rename = "empirical")]
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// The value may overestimate the true minimum.
    UpperEstimate,
    /// Only part of the bound's branches could be evaluated.
    Partial,
    /// Nothing admissible was found; the value falls back to 0.
    Degenerate,
    /// The requested variant is not covered by the available bounds.
    Unsupported,
}

/// What attains the reported minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Witness {
    None { reason: String },
    Split { omega: Vec<usize> },
    Cell { omega: Vec<usize>, x: Vec<f64> },
    Rotation {
        sample: usize,
        omega: Vec<usize>,
        /// One row-major `L x L` orthogonal matrix per pool.
        rotations: Vec<Vec<f64>>,
    },
    SwitchPair {
        s: Vec<Option<usize>>,
        s_prime: Vec<Option<usize>>,
        omega: Vec<usize>,
    },
    Pair { x: Vec<f64>, x_prime: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub bound_name: BoundName,
    pub value: f64,
    pub method: Method,
    pub samples_used: usize,
    /// Smallest observed `|Phi(x) - Phi(x')| / D(x, x')`, once validated.
    pub empirical_min_ratio: Option<f64>,
    /// Matching upper Lipschitz constant, where one is known.
    pub upper_bound: Option<f64>,
    pub witness: Witness,
    #[serde(default)]
    pub flags: Vec<Flag>,
    /// Auxiliary quantities specific to each bound.
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
}

impl CertificateReport {
    pub(crate) fn new(bound_name: BoundName, value: f64, method: Method, witness: Witness) -> Self {
        CertificateReport {
            bound_name,
            value,
            method,
            samples_used: 0,
            empirical_min_ratio: None,
            upper_bound: None,
            witness,
            flags: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub(crate) fn flag(&mut self, flag: Flag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }

    pub(crate) fn detail(&mut self, key: &str, value: f64) {
        self.details.insert(key.to_string(), value);
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    /// Fills `empirical_min_ratio` by sampling `pairs` input pairs of `op`.
    pub fn validate_against(
        &mut self,
        f: &Frame,
        op: &Operator,
        pairs: usize,
        seed: u64,
    ) -> Result<()> {
        let emp = empirical_lipschitz(f, op, pairs, seed)?;
        self.empirical_min_ratio = Some(emp.value);
        Ok(())
    }

    /// For exact reports, whether `value <= empirical_min_ratio + tol`.
    /// Sampled reports and unvalidated ones pass vacuously.
    pub fn is_consistent(&self, tol: f64) -> bool {
        match (self.method, self.empirical_min_ratio) {
            (Method::Exact, Some(r)) => self.value <= r + tol,
            _ => true,
        }
    }
}

pub(crate) fn to_vec(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}
